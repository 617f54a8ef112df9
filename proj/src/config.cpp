#include "tpld/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "tpld/error.hpp"
#include "tpld/text.hpp"

namespace tpld {

Mode parse_mode(std::string_view s) {
  if (s == "tpld") return Mode::kTpld;
  if (s == "multitask") return Mode::kMultitask;
  if (s == "tpld_wo_acl") return Mode::kTpldWoAcl;
  if (s == "tpld_wo_session") return Mode::kTpldWoSession;
  if (s == "tpld_wo_gpc") return Mode::kTpldWoGpc;
  if (s == "no_pretrain") return Mode::kNoPretrain;
  throw UsageError("unknown mode '" + std::string(s) + "'");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kTpld: return "tpld";
    case Mode::kMultitask: return "multitask";
    case Mode::kTpldWoAcl: return "tpld_wo_acl";
    case Mode::kTpldWoSession: return "tpld_wo_session";
    case Mode::kTpldWoGpc: return "tpld_wo_gpc";
    case Mode::kNoPretrain: return "no_pretrain";
  }
  return "?";
}

namespace {

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw UsageError("config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double d) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, end);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

double unit_interval(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0.0 || d > 1.0) bad_value(key, v, "a value in [0, 1]");
  return d;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    auto size_field = [&](const std::string& key, auto member) {
      m[key] = {[member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                [key, member](RunConfig& c, const std::string& v) { member(c) = to_size(key, v); }};
    };
    auto double_field = [&](const std::string& key, auto member) {
      m[key] = {[member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
                [key, member](RunConfig& c, const std::string& v) { member(c) = to_double(key, v); }};
    };
    auto unit_field = [&](const std::string& key, auto member) {
      m[key] = {[member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
                [key, member](RunConfig& c, const std::string& v) { member(c) = unit_interval(key, v); }};
    };
    auto bool_field = [&](const std::string& key, auto member) {
      m[key] = {[member](const RunConfig& c) { return fmt_bool(member(const_cast<RunConfig&>(c))); },
                [key, member](RunConfig& c, const std::string& v) { member(c) = to_bool(key, v); }};
    };

    m["synth.domains"] = {[](const RunConfig& c) { return text::join(c.synth.domains, ","); },
                          [](RunConfig& c, const std::string& v) {
                            std::vector<std::string> ds;
                            std::string cur;
                            for (char ch : v + ",") {
                              if (ch == ',') {
                                if (!text::trim(cur).empty()) ds.push_back(std::string(text::trim(cur)));
                                cur.clear();
                              } else {
                                cur += ch;
                              }
                            }
                            for (const auto& d : ds) {
                              if (!taxonomy::is_domain(d)) bad_value("synth.domains", v, "known domain names");
                            }
                            if (ds.empty()) bad_value("synth.domains", v, "at least one domain");
                            c.synth.domains = ds;
                          }};
    size_field("synth.n_sessions", [](RunConfig& c) -> auto& { return c.synth.n_sessions; });
    size_field("synth.max_turns", [](RunConfig& c) -> auto& { return c.synth.max_turns; });
    unit_field("synth.revision_prob", [](RunConfig& c) -> auto& { return c.synth.revision_prob; });
    m["synth.seed"] = {[](const RunConfig& c) { return std::to_string(c.synth.seed); },
                       [](RunConfig& c, const std::string& v) { c.synth.seed = to_u64("synth.seed", v); }};
    m["data.corpus"] = {[](const RunConfig& c) { return c.corpus_path; },
                        [](RunConfig& c, const std::string& v) { c.corpus_path = v; }};
    unit_field("data.valid_fraction", [](RunConfig& c) -> auto& { return c.valid_fraction; });
    unit_field("data.test_fraction", [](RunConfig& c) -> auto& { return c.test_fraction; });

    size_field("model.d_model", [](RunConfig& c) -> auto& { return c.model.d_model; });
    size_field("model.n_heads", [](RunConfig& c) -> auto& { return c.model.n_heads; });
    size_field("model.n_enc_layers", [](RunConfig& c) -> auto& { return c.model.n_enc_layers; });
    size_field("model.n_dec_layers", [](RunConfig& c) -> auto& { return c.model.n_dec_layers; });
    size_field("model.d_ff", [](RunConfig& c) -> auto& { return c.model.d_ff; });
    size_field("model.max_context", [](RunConfig& c) -> auto& { return c.model.max_context; });
    size_field("model.max_target", [](RunConfig& c) -> auto& { return c.model.max_target; });
    size_field("model.max_turns", [](RunConfig& c) -> auto& { return c.model.max_turns; });
    double_field("model.dropout", [](RunConfig& c) -> auto& { return c.model.dropout; });
    bool_field("model.tie_output", [](RunConfig& c) -> auto& { return c.model.tie_output; });
    bool_field("model.separate_policy_encoders",
               [](RunConfig& c) -> auto& { return c.model.separate_policy_encoders; });

    m["train.seed"] = {[](const RunConfig& c) { return std::to_string(c.train.seed); },
                       [](RunConfig& c, const std::string& v) { c.train.seed = to_u64("train.seed", v); }};
    m["train.mode"] = {[](const RunConfig& c) { return to_string(c.train.mode); },
                       [](RunConfig& c, const std::string& v) {
                         try {
                           c.train.mode = parse_mode(v);
                         } catch (const UsageError&) {
                           bad_value("train.mode", v,
                                     "tpld, multitask, tpld_wo_acl, tpld_wo_session, tpld_wo_gpc or no_pretrain");
                         }
                       }};
    double_field("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; });
    size_field("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    size_field("train.stage1_epochs", [](RunConfig& c) -> auto& { return c.train.stage_epochs[0]; });
    size_field("train.stage2_epochs", [](RunConfig& c) -> auto& { return c.train.stage_epochs[1]; });
    size_field("train.stage3_epochs", [](RunConfig& c) -> auto& { return c.train.stage_epochs[2]; });
    bool_field("train.reset_adam_per_stage", [](RunConfig& c) -> auto& { return c.train.reset_adam_per_stage; });
    m["loss.gen_reduction"] = {[](const RunConfig& c) {
                                 return std::string(c.train.gen_reduction == GenReduction::kMean ? "mean" : "sum");
                               },
                               [](RunConfig& c, const std::string& v) {
                                 if (v == "mean") c.train.gen_reduction = GenReduction::kMean;
                                 else if (v == "sum") c.train.gen_reduction = GenReduction::kSum;
                                 else bad_value("loss.gen_reduction", v, "mean or sum");
                               }};
    m["loss.acl_reduction"] = {[](const RunConfig& c) { return std::string(c.train.acl_mean ? "mean" : "sum"); },
                               [](RunConfig& c, const std::string& v) {
                                 if (v == "mean") c.train.acl_mean = true;
                                 else if (v == "sum") c.train.acl_mean = false;
                                 else bad_value("loss.acl_reduction", v, "mean or sum");
                               }};
    bool_field("loss.posterior_stop_grad", [](RunConfig& c) -> auto& { return c.train.posterior_stop_grad; });
    unit_field("loss.alpha", [](RunConfig& c) -> auto& { return c.train.coef.alpha; });
    unit_field("loss.beta", [](RunConfig& c) -> auto& { return c.train.coef.beta; });
    unit_field("loss.gamma", [](RunConfig& c) -> auto& { return c.train.coef.gamma; });
    m["loss.tau"] = {[](const RunConfig& c) { return fmt_double(c.train.coef.tau); },
                     [](RunConfig& c, const std::string& v) {
                       const double t = to_double("loss.tau", v);
                       if (!(t > 0.0)) bad_value("loss.tau", v, "a positive number");
                       c.train.coef.tau = t;
                     }};
    size_field("sampler.m", [](RunConfig& c) -> auto& { return c.train.sampler_m; });
    m["sampler.granularity"] = {[](const RunConfig& c) { return to_string(c.train.granularity); },
                                [](RunConfig& c, const std::string& v) {
                                  try {
                                    c.train.granularity = parse_granularity(v);
                                  } catch (const Error&) {
                                    bad_value("sampler.granularity", v, "act or domain_act");
                                  }
                                }};
    bool_field("sampler.symmetrize_positives", [](RunConfig& c) -> auto& { return c.train.symmetrize_positives; });

    size_field("finetune.epochs", [](RunConfig& c) -> auto& { return c.finetune.epochs; });
    double_field("finetune.lr", [](RunConfig& c) -> auto& { return c.finetune.lr; });
    size_field("finetune.batch_size", [](RunConfig& c) -> auto& { return c.finetune.batch_size; });
    m["finetune.fraction"] = {[](const RunConfig& c) { return fmt_double(c.finetune.fraction); },
                              [](RunConfig& c, const std::string& v) {
                                const double f = to_double("finetune.fraction", v);
                                if (!(f > 0.0 && f <= 1.0)) bad_value("finetune.fraction", v, "a value in (0, 1]");
                                c.finetune.fraction = f;
                              }};
    bool_field("finetune.with_belief", [](RunConfig& c) -> auto& { return c.finetune.with_belief; });
    bool_field("finetune.with_act", [](RunConfig& c) -> auto& { return c.finetune.with_act; });

    size_field("eval.max_belief_len", [](RunConfig& c) -> auto& { return c.eval.max_belief_len; });
    size_field("eval.max_act_len", [](RunConfig& c) -> auto& { return c.eval.max_act_len; });
    size_field("eval.max_resp_len", [](RunConfig& c) -> auto& { return c.eval.max_resp_len; });
    m["eval.bleu_smoothing"] = {[](const RunConfig& c) {
                                  return std::string(c.eval.smoothing == BleuSmoothing::kNone ? "none" : "method1");
                                },
                                [](RunConfig& c, const std::string& v) {
                                  if (v == "none") c.eval.smoothing = BleuSmoothing::kNone;
                                  else if (v == "method1") c.eval.smoothing = BleuSmoothing::kMethod1;
                                  else bad_value("eval.bleu_smoothing", v, "none or method1");
                                }};
    bool_field("eval.oracle_belief", [](RunConfig& c) -> auto& { return c.eval.oracle_belief; });
    return m;
  }();
  return f;
}

}  // namespace

std::string RunConfig::dump() const {
  std::string out = "preset = " + preset + "\n";
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig preset_config(std::string_view name) {
  RunConfig c;
  c.preset = std::string(name);
  if (name == "full") {
    // Published hyper-parameters; the backbone sizes follow t5-small.
    c.model.d_model = 512;
    c.model.n_heads = 8;
    c.model.n_enc_layers = 6;
    c.model.n_dec_layers = 6;
    c.model.d_ff = 2048;
    c.model.max_context = 512;
    c.model.max_target = 128;
    c.model.dropout = 0.1;
    return c;
  }
  if (name == "micro") {
    c.model.d_model = 64;
    c.model.n_heads = 4;
    c.model.n_enc_layers = 2;
    c.model.n_dec_layers = 2;
    c.model.d_ff = 256;
    c.model.max_context = 128;
    c.model.max_target = 64;
    c.train.stage_epochs[0] = c.train.stage_epochs[1] = c.train.stage_epochs[2] = 5;
    // Small batches: at this size the model needs the extra optimizer steps to
    // learn to copy slot values from the context.
    c.train.batch_size = 4;
    c.finetune.batch_size = 4;
    return c;
  }
  if (name == "tiny") {
    c.synth.n_sessions = 12;
    c.synth.max_turns = 6;
    c.valid_fraction = 0.25;
    c.test_fraction = 0.25;
    c.model.d_model = 8;
    c.model.n_heads = 2;
    c.model.n_enc_layers = 1;
    c.model.n_dec_layers = 1;
    c.model.d_ff = 16;
    c.model.max_context = 128;
    c.model.max_target = 64;
    c.train.batch_size = 8;
    c.train.stage_epochs[0] = c.train.stage_epochs[1] = c.train.stage_epochs[2] = 1;
    c.finetune.epochs = 1;
    c.finetune.batch_size = 8;
    return c;
  }
  throw UsageError("unknown preset '" + std::string(name) + "' (expected full, micro or tiny)");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    if (value != cfg.preset) throw UsageError("config key 'preset' must be applied before other settings");
    return;
  }
  auto it = fields().find(key);
  if (it == fields().end()) throw UsageError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
  std::string preset = "full";
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = text::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(text::trim(body.substr(0, eq)));
    std::string value(text::trim(body.substr(eq + 1)));
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(line_no, std::move(key), std::move(value));
    }
  }
  RunConfig cfg = preset_config(preset);
  for (const auto& [n, k, v] : entries) {
    try {
      apply_setting(cfg, k, v);
    } catch (const UsageError& e) {
      throw UsageError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace tpld
