#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tpld/config.hpp"
#include "tpld/corpus.hpp"
#include "tpld/error.hpp"
#include "tpld/eval.hpp"
#include "tpld/objectives.hpp"
#include "tpld/pipeline.hpp"
#include "tpld/tokenizer.hpp"

namespace py = pybind11;
using namespace tpld;

namespace {

Corpus corpus_from(const std::vector<std::string>& lines) {
  Corpus c;
  for (const auto& l : lines) c.push_back(session_from_json(l));
  return c;
}

std::vector<std::string> corpus_to(const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& s : c) out.push_back(session_to_json(s));
  return out;
}

TargetKind target_kind(const std::string& s) {
  if (s == "belief") return TargetKind::kBelief;
  if (s == "act") return TargetKind::kAct;
  if (s == "response") return TargetKind::kResponse;
  if (s == "belief_act") return TargetKind::kBeliefAct;
  if (s == "all") return TargetKind::kAll;
  throw UsageError("unknown target kind '" + s + "'");
}

py::dict experiment_dict(const ExperimentResult& r) {
  py::dict d;
  d["report"] = r.test.to_json();
  d["valid_combined"] = r.valid_combined;
  d["best_epoch"] = r.best_epoch;
  d["stage1_belief_accuracy"] = r.stage1_belief_accuracy ? py::cast(*r.stage1_belief_accuracy) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_tpld, m) {
  m.doc() = "Two-stage policy learning for dialog: corpus, training and evaluation";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<RunConfig>(m, "Config")
      .def(py::init([](const std::string& preset) { return preset_config(preset); }), py::arg("preset") = "micro")
      .def_static("load", &load_config)
      .def_static("parse", [](const std::string& text) { return parse_config(text); })
      .def("set", [](RunConfig& c, const std::string& k, const std::string& v) { apply_setting(c, k, v); })
      .def("dump", &RunConfig::dump)
      .def_readonly("preset", &RunConfig::preset);

  m.def(
      "synthesize",
      [](std::size_t n_sessions, std::uint64_t seed, double revision_prob) {
        SynthSpec spec;
        spec.n_sessions = n_sessions;
        spec.seed = seed;
        spec.revision_prob = revision_prob;
        return corpus_to(synthesize_corpus(spec).corpus);
      },
      py::arg("n_sessions") = 300, py::arg("seed") = 7, py::arg("revision_prob") = 0.2,
      "Synthetic sessions as JSON lines.");
  m.def("load_corpus", [](const std::filesystem::path& p) { return corpus_to(load_corpus(p)); });
  m.def(
      "canonicalize_acts",
      [](const std::vector<std::tuple<std::string, std::string, std::optional<std::string>>>& acts,
         const std::string& granularity) {
        ActSet set;
        for (const auto& [d, a, s] : acts) set.insert(DialogAct::make(d, a, s));
        return canonicalize_acts(set, parse_granularity(granularity)).key;
      },
      py::arg("acts"), py::arg("granularity") = "act");
  m.def(
      "linearize",
      [](const std::string& session_json, std::size_t turn, const std::string& target) {
        const auto s = linearize_turn(session_from_json(session_json), turn, target_kind(target));
        return std::pair(s.context, s.target);
      },
      py::arg("session"), py::arg("turn"), py::arg("target") = "all");
  m.def("delexicalize", &delexicalize);

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("build", [](const std::vector<std::string>& lines) { return build_vocab(corpus_from(lines)); })
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("__len__", &Vocabulary::size)
      .def("encode", [](const Vocabulary& v, const std::string& s) { return v.encode(s); })
      .def("decode", [](const Vocabulary& v, const std::vector<TokenId>& ids) { return v.decode(ids); })
      .def("token", &Vocabulary::token)
      .def("id", [](const Vocabulary& v, const std::string& s) { return v.id(s); });

  m.def("combined", &combined, py::arg("inform_or_match"), py::arg("success_or_f1"), py::arg("bleu"));
  m.def(
      "bleu",
      [](const std::vector<std::string>& c, const std::vector<std::string>& r, bool smooth) {
        return bleu(c, r, smooth ? BleuSmoothing::kMethod1 : BleuSmoothing::kNone);
      },
      py::arg("candidates"), py::arg("references"), py::arg("smooth") = false);
  m.def(
      "acl_loss",
      [](const std::vector<std::vector<double>>& rows, const std::vector<std::vector<std::size_t>>& positives,
         double tau) {
        if (rows.empty()) throw ShapeError("acl_loss: no vectors");
        std::vector<double> flat;
        for (const auto& r : rows) {
          if (r.size() != rows[0].size()) throw ShapeError("acl_loss: ragged vectors");
          flat.insert(flat.end(), r.begin(), r.end());
        }
        return acl_loss(ad::Tensor<double>({rows.size(), rows[0].size()}, flat), positives, tau).item();
      },
      py::arg("vectors"), py::arg("positives"), py::arg("tau") = 1.0);

  m.def(
      "run_experiment",
      [](const RunConfig& cfg, std::optional<std::filesystem::path> out) {
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, out);
        }
        return experiment_dict(r);
      },
      py::arg("config"), py::arg("out") = py::none(),
      "Pre-train, fine-tune and evaluate; returns the test report (JSON) and selection details.");
  m.def(
      "gamma_sweep",
      [](const RunConfig& cfg, const std::vector<double>& gammas, std::optional<std::filesystem::path> out) {
        std::vector<SweepRow> rows;
        {
          py::gil_scoped_release release;
          rows = gamma_sweep(cfg, gammas, out);
        }
        return sweep_table(rows);
      },
      py::arg("config"), py::arg("gammas"), py::arg("out") = py::none(), "Tab-separated sweep table.");
  m.attr("build_id") = build_id();
}
