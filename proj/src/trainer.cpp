#include "tpld/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "tpld/error.hpp"
#include "tpld/eval.hpp"
#include "tpld/log.hpp"
#include "tpld/rng.hpp"

namespace tpld {

using ad::Tensor;
using nlohmann::json;

std::size_t Dataset::turn_count() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

Dataset make_dataset(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& model) {
  Dataset d;
  d.corpus = corpus;
  for (const auto& s : corpus) {
    std::vector<EncodedSample> turns;
    for (std::size_t t = 0; t < s.turns.size(); ++t) {
      const auto lin = linearize_turn(s, t, TargetKind::kAll);
      EncodedSample e;
      e.context = encode_context(vocab, lin.context, model.max_context);
      e.target = vocab.encode(lin.target);
      if (e.target.size() > model.max_target) {
        throw DataError("session " + s.session_id + " turn " + std::to_string(t) + ": target of " +
                        std::to_string(e.target.size()) + " tokens exceeds model.max_target " +
                        std::to_string(model.max_target));
      }
      const auto ends = locate_span_ends(e.target);
      if (!ends.belief_end || !ends.act_end || !ends.resp_end) {
        throw DataError("session " + s.session_id + " turn " + std::to_string(t) + ": incomplete target");
      }
      e.belief_len = *ends.belief_end + 1;
      e.belief_act_len = *ends.act_end + 1;
      turns.push_back(std::move(e));
    }
    d.samples.push_back(std::move(turns));
  }
  return d;
}

std::string phase_tag(Phase p) {
  switch (p) {
    case Phase::kStage1: return "stage1";
    case Phase::kStage2: return "stage2";
    case Phase::kStage3: return "stage3";
    case Phase::kMultitask: return "multitask";
    case Phase::kFinetune: return "finetune";
  }
  return "?";
}

StageSchedule make_schedule(const RunConfig& cfg) {
  const auto& tc = cfg.train;
  StageSchedule s;
  auto base = [&](Phase p, std::size_t epochs) {
    PhaseSpec spec;
    spec.phase = p;
    spec.epochs = epochs;
    spec.lr = tc.lr;
    spec.batch_size = tc.batch_size;
    spec.coef = tc.coef;
    spec.reset_optimizer = tc.reset_adam_per_stage;
    return spec;
  };
  switch (tc.mode) {
    case Mode::kNoPretrain:
      break;
    case Mode::kMultitask: {
      // Compute-matched: one phase as long as the three stages together.
      auto spec = base(Phase::kMultitask, tc.stage_epochs[0] + tc.stage_epochs[1] + tc.stage_epochs[2]);
      s.phases.push_back(spec);
      break;
    }
    default: {
      s.phases.push_back(base(Phase::kStage1, tc.stage_epochs[0]));
      auto stage2 = base(Phase::kStage2, tc.stage_epochs[1]);
      if (tc.mode == Mode::kTpldWoAcl) stage2.aux.acl = false;
      if (tc.mode == Mode::kTpldWoSession) stage2.aux.session = false;
      if (tc.mode == Mode::kTpldWoGpc) stage2.aux.turn = stage2.aux.session = false;
      s.phases.push_back(stage2);
      s.phases.push_back(base(Phase::kStage3, tc.stage_epochs[2]));
      break;
    }
  }
  return s;
}

PhaseSpec finetune_phase(const RunConfig& cfg) {
  PhaseSpec spec;
  spec.phase = Phase::kFinetune;
  spec.epochs = cfg.finetune.epochs;
  spec.lr = cfg.finetune.lr;
  spec.batch_size = cfg.finetune.batch_size;
  spec.with_belief = cfg.finetune.with_belief;
  spec.with_act = cfg.finetune.with_act;
  spec.reset_optimizer = true;
  return spec;
}

std::vector<std::vector<SampleRef>> plan_batches(const Dataset& data, bool session_grouped, std::size_t batch_size,
                                                 std::uint64_t seed) {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  Rng rng(seed);
  std::vector<std::vector<SampleRef>> batches;
  if (session_grouped) {
    std::vector<std::size_t> order(data.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<SampleRef> cur;
    for (auto s : order) {
      const std::size_t n = data.samples[s].size();
      if (!cur.empty() && cur.size() + n > batch_size) {
        batches.push_back(std::move(cur));
        cur.clear();
      }
      for (std::size_t t = 0; t < n; ++t) cur.push_back({s, t});
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    return batches;
  }
  std::vector<SampleRef> all;
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    for (std::size_t t = 0; t < data.samples[s].size(); ++t) all.push_back({s, t});
  }
  rng.shuffle(all);
  for (std::size_t i = 0; i < all.size(); i += batch_size) {
    batches.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(i),
                         all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + batch_size)));
  }
  return batches;
}

BatchContext batch_context(const Dataset& data, const PolicyIndex* index, const TrainConfig& train) {
  BatchContext c;
  c.data = &data;
  c.index = index;
  c.reduction = train.gen_reduction;
  c.acl_mean = train.acl_mean;
  c.posterior_stop_grad = train.posterior_stop_grad;
  c.sampler_m = train.sampler_m;
  c.symmetrize_positives = train.symmetrize_positives;
  return c;
}

namespace {

// Sum of per-sample segment losses, normalized per the reduction setting.
template <typename T>
struct SegmentAccumulator {
  Tensor<T> sum;
  std::size_t tokens = 0;
  std::size_t sequences = 0;

  void add(const Tensor<T>& s, std::size_t n_tokens) {
    sum = sum.defined() ? ad::add(sum, s) : s;
    tokens += n_tokens;
    ++sequences;
  }
  Tensor<T> finish(GenReduction r) const {
    const double denom = r == GenReduction::kMean ? static_cast<double>(tokens) : static_cast<double>(sequences);
    return ad::scale(sum, static_cast<T>(1.0 / denom));
  }
};

std::size_t count_on(const ad::Mask& m) {
  std::size_t n = 0;
  for (auto x : m) n += x != 0;
  return n;
}

}  // namespace

template <typename T>
LossBundle<T> batch_loss(const Weights<T>& w, const BatchContext& ctx, const PhaseSpec& spec,
                         std::span<const SampleRef> base, Rng& sampler_rng, Rng* dropout_rng) {
  if (!ctx.data) throw UsageError("batch_loss: no dataset");
  if (base.empty()) throw UsageError("batch_loss: empty batch");
  const Dataset& data = *ctx.data;
  const bool need_b = spec.phase != Phase::kFinetune || spec.with_belief;
  const bool need_a = spec.phase != Phase::kStage1 && (spec.phase != Phase::kFinetune || spec.with_act);
  const bool need_r = spec.phase == Phase::kStage3 || spec.phase == Phase::kMultitask || spec.phase == Phase::kFinetune;
  const bool policy = spec.session_grouped();

  SegmentAccumulator<T> acc_b, acc_a, acc_r;
  std::vector<Tensor<T>> priors, posteriors;
  for (const auto& ref : base) {
    const auto& s = data.at(ref);
    std::size_t len = s.target.size();
    if (spec.phase == Phase::kStage1) len = s.belief_len;
    if (spec.phase == Phase::kStage2) len = s.belief_act_len;
    const std::span<const TokenId> target(s.target.data(), len);
    const auto trace = forward(w, s.context, target, dropout_rng);
    auto segment = [&](SegmentAccumulator<T>& acc, Segment seg) {
      const auto mask = segment_mask(target, seg);
      acc.add(gen_loss(trace, target, mask, ad::Reduction::kSum), count_on(mask));
    };
    if (need_b) segment(acc_b, Segment::kBelief);
    if (need_a) segment(acc_a, Segment::kAct);
    if (need_r) segment(acc_r, Segment::kResponse);
    if (policy) {
      SpanEnds ends;
      ends.belief_end = s.belief_len - 1;
      ends.act_end = s.belief_act_len - 1;
      auto pv = extract_policy_vectors(trace, ends, ref.turn);
      priors.push_back(pv.prior);
      posteriors.push_back(ctx.posterior_stop_grad ? pv.posterior.detach() : pv.posterior);
    }
  }

  LossTerms<T> terms;
  if (need_b) terms.gen_b = acc_b.finish(ctx.reduction);
  if (need_a) terms.gen_a = acc_a.finish(ctx.reduction);
  if (need_r) terms.gen_r = acc_r.finish(ctx.reduction);

  if (policy && (spec.aux.turn || spec.aux.session)) {
    if (spec.aux.turn) {
      Tensor<T> sum;
      for (std::size_t i = 0; i < priors.size(); ++i) {
        const auto d = turn_consistency(priors[i], posteriors[i]);
        sum = sum.defined() ? ad::add(sum, d) : d;
      }
      terms.turn = ad::scale(sum, static_cast<T>(1.0 / static_cast<double>(priors.size())));
    }
    if (spec.aux.session) {
      // Sessions appear as consecutive runs of turns 0..k-1 in the batch.
      Tensor<T> sum;
      std::size_t sessions = 0;
      std::size_t i = 0;
      while (i < base.size()) {
        std::size_t j = i;
        while (j < base.size() && base[j].session == base[i].session) ++j;
        std::vector<Tensor<T>> pr(priors.begin() + static_cast<std::ptrdiff_t>(i),
                                  priors.begin() + static_cast<std::ptrdiff_t>(j));
        std::vector<Tensor<T>> po(posteriors.begin() + static_cast<std::ptrdiff_t>(i),
                                  posteriors.begin() + static_cast<std::ptrdiff_t>(j));
        const auto d = session_consistency(ad::concat(pr, 0), ad::concat(po, 0), w.prior_seq, w.posterior_encoder());
        sum = sum.defined() ? ad::add(sum, d) : d;
        ++sessions;
        i = j;
      }
      terms.session = ad::scale(sum, static_cast<T>(1.0 / static_cast<double>(sessions)));
    }
  }

  if (policy && spec.aux.acl) {
    if (!ctx.index) throw UsageError("batch_loss: contrastive phase without a policy index");
    if (base.size() < 2) {
      terms.acl = Tensor<T>::scalar(T(0));
    } else {
      const auto cb = make_contrastive_batch(base, *ctx.index, ctx.sampler_m, sampler_rng, ctx.symmetrize_positives);
      std::vector<Tensor<T>> rows(priors.begin(), priors.end());
      for (std::size_t k = cb.base_count; k < cb.samples.size(); ++k) {
        const auto& s = data.at(cb.samples[k]);
        const std::span<const TokenId> target(s.target.data(), s.belief_len);
        const auto trace = forward(w, s.context, target, dropout_rng);
        rows.push_back(ad::slice(trace.hidden, 0, s.belief_len - 1, s.belief_len));
      }
      auto acl = acl_loss(ad::concat(rows, 0), cb.positives, spec.coef.tau);
      std::size_t anchors = 0;
      for (const auto& p : cb.positives) anchors += p.empty() ? 0 : 1;
      if (ctx.acl_mean && anchors > 0) acl = ad::scale(acl, static_cast<T>(1.0 / static_cast<double>(anchors)));
      terms.acl = acl;
    }
  }

  switch (spec.phase) {
    case Phase::kStage1: return stage_loss(1, terms, spec.coef, spec.aux);
    case Phase::kStage2: return stage_loss(2, terms, spec.coef, spec.aux);
    case Phase::kStage3: return stage_loss(3, terms, spec.coef, spec.aux);
    case Phase::kMultitask: return multitask_loss(terms, spec.coef, spec.aux);
    case Phase::kFinetune: return finetune_loss(terms);
  }
  throw UsageError("batch_loss: unknown phase");
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------
std::string metric_line(const MetricRecord& r) {
  json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["term"] = r.term;
  j["value"] = r.value;
  return j.dump();
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {}

void MetricsLog::append(const MetricRecord& r) {
  records_.push_back(r);
  if (path_) {
    std::ofstream out(*path_, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append to metrics log " + path_->string());
    out << metric_line(r) << '\n';
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
std::uint64_t config_hash(const ModelConfig& model, const Vocabulary& vocab) {
  return fnv1a64(model.canonical() + "vocab=" + std::to_string(vocab.fingerprint()));
}

namespace {

constexpr char kMagic[8] = {'T', 'P', 'L', 'D', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void floats(std::span<const float> v) {
    u64(v.size());
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw DataError(origin_ + ": checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }
  std::vector<float> floats() {
    const auto n = u64();
    if (n > (buf_.size() - pos_) / 4) throw DataError(origin_ + ": checkpoint truncated");
    std::vector<float> v(n);
    for (auto& f : v) f = std::bit_cast<float>(u32());
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint64_t bits(double d) { return std::bit_cast<std::uint64_t>(d); }
double from_bits(std::uint64_t b) { return std::bit_cast<double>(b); }

}  // namespace

void save_checkpoint(const TrainState& state, std::uint64_t hash, const std::string& stage_tag,
                     const std::filesystem::path& path) {
  json meta;
  meta["phase_tag"] = state.phase_tag;
  meta["epoch"] = state.epoch;
  meta["batch"] = state.batch;
  meta["step"] = state.step;
  meta["epoch_batches"] = state.epoch_batches;
  json sums = json::object();
  for (const auto& [k, v] : state.epoch_sums) sums[k] = bits(v);
  meta["epoch_sums_bits"] = sums;
  meta["adam"] = {{"lr_bits", bits(state.adam.lr)},
                  {"beta1_bits", bits(state.adam.beta1)},
                  {"beta2_bits", bits(state.adam.beta2)},
                  {"eps_bits", bits(state.adam.eps)},
                  {"step", state.adam.step},
                  {"has_moments", !state.adam.m.empty()}};
  meta["model"] = state.weights.config.canonical();
  meta["seed"] = state.weights.config.seed;

  Writer w;
  w.bytes(std::string_view(kMagic, 8));
  w.u32(kCheckpointVersion);
  w.u64(hash);
  w.str(stage_tag);
  w.str(meta.dump());
  const auto named = state.weights.named_parameters();
  const bool moments = !state.adam.m.empty();
  w.u32(static_cast<std::uint32_t>(named.size() * (moments ? 3 : 1)));
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& [name, t] = named[k];
    auto blob = [&](const std::string& prefix, std::span<const float> v) {
      w.str(prefix + name);
      w.u32(static_cast<std::uint32_t>(t.shape().size()));
      for (auto d : t.shape()) w.u64(d);
      w.floats(v);
    };
    blob("param/", t.values());
    if (moments) {
      blob("adam.m/", state.adam.m.at(k));
      blob("adam.v/", state.adam.v.at(k));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& model,
                                 std::optional<std::uint64_t> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path.string());
  const auto magic = r.bytes(8);
  if (magic != std::string(kMagic, 8)) throw DataError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  LoadedCheckpoint out;
  out.config_hash = r.u64();
  if (expected_hash && *expected_hash != out.config_hash) {
    throw UsageError(path.string() + ": checkpoint config hash does not match the current model/vocabulary");
  }
  out.stage_tag = r.str();
  json meta;
  try {
    meta = json::parse(r.str());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  if (meta.at("model").get<std::string>() != model.canonical()) {
    throw UsageError(path.string() + ": checkpoint model architecture differs from the configured model");
  }
  auto& st = out.state;
  st.weights = init_weights<float>(model, meta.at("seed").get<std::uint64_t>());
  st.phase_tag = meta.at("phase_tag").get<std::string>();
  st.epoch = meta.at("epoch").get<std::size_t>();
  st.batch = meta.at("batch").get<std::size_t>();
  st.step = meta.at("step").get<std::uint64_t>();
  st.epoch_batches = meta.at("epoch_batches").get<std::size_t>();
  for (auto& [k, v] : meta.at("epoch_sums_bits").items()) st.epoch_sums[k] = from_bits(v.get<std::uint64_t>());
  const auto& adam = meta.at("adam");
  st.adam.lr = from_bits(adam.at("lr_bits").get<std::uint64_t>());
  st.adam.beta1 = from_bits(adam.at("beta1_bits").get<std::uint64_t>());
  st.adam.beta2 = from_bits(adam.at("beta2_bits").get<std::uint64_t>());
  st.adam.eps = from_bits(adam.at("eps_bits").get<std::uint64_t>());
  st.adam.step = adam.at("step").get<std::int64_t>();
  const bool moments = adam.at("has_moments").get<bool>();

  auto named = st.weights.named_parameters();
  const auto blobs = r.u32();
  if (blobs != named.size() * (moments ? 3 : 1)) throw DataError(path.string() + ": unexpected blob count");
  if (moments) {
    st.adam.m.assign(named.size(), {});
    st.adam.v.assign(named.size(), {});
  }
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, t] = named[k];
    auto read_blob = [&](const std::string& prefix) {
      const auto bname = r.str();
      if (bname != prefix + name) throw DataError(path.string() + ": expected blob " + prefix + name + ", found " + bname);
      const auto rank = r.u32();
      ad::Shape shape(rank);
      for (auto& d : shape) d = r.u64();
      if (shape != t.shape()) throw DataError(path.string() + ": shape mismatch for " + bname);
      return r.floats();
    };
    auto values = read_blob("param/");
    if (values.size() != t.numel()) throw DataError(path.string() + ": size mismatch for " + name);
    std::copy(values.begin(), values.end(), t.mutable_values().begin());
    if (moments) {
      st.adam.m[k] = read_blob("adam.m/");
      st.adam.v[k] = read_blob("adam.v/");
    }
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after checkpoint payload");
  return out;
}

// ---------------------------------------------------------------------------
// stage loop
// ---------------------------------------------------------------------------
void train_step(Weights<float>& w, ad::AdamState<float>& adam, const Tensor<float>& total, double lr) {
  auto params = w.parameters();
  for (auto& p : params) p.zero_grad();
  ad::backward(total);
  adam.lr = lr;
  ad::adam_step<float>(params, adam);
}

bool run_stage(const PhaseSpec& spec, const BatchContext& ctx, TrainState& state, std::uint64_t seed,
               MetricsLog& log, const StageHooks& hooks) {
  const std::string tag = phase_tag(spec.phase);
  if (state.phase_tag != tag) {
    state.phase_tag = tag;
    state.epoch = 0;
    state.batch = 0;
    state.epoch_sums.clear();
    state.epoch_batches = 0;
    if (spec.reset_optimizer) state.adam.reset();
  }
  const std::uint64_t tag_id = fnv1a64(tag);
  while (state.epoch < spec.epochs) {
    const auto batches =
        plan_batches(*ctx.data, spec.session_grouped(), spec.batch_size, derive_seed(seed, {tag_id, state.epoch}));
    while (state.batch < batches.size()) {
      const std::size_t b = state.batch;
      Rng sampler_rng(derive_seed(seed, {tag_id, state.epoch, b, 1}));
      Rng dropout_rng(derive_seed(seed, {tag_id, state.epoch, b, 2}));
      const auto bundle = batch_loss<float>(state.weights, ctx, spec, batches[b], sampler_rng, &dropout_rng);
      bool finite = std::isfinite(bundle.total.item());
      for (const auto& [k, v] : bundle.terms) finite = finite && std::isfinite(v.item());
      if (!finite) {
        std::string detail;
        for (const auto& [k, v] : bundle.terms) detail += " " + k + "=" + std::to_string(v.item());
        std::string where = tag + " epoch " + std::to_string(state.epoch) + " batch " + std::to_string(b);
        if (hooks.snapshot_dir) {
          const auto snap = *hooks.snapshot_dir / "nonfinite_snapshot.ckpt";
          save_checkpoint(state, 0, tag, snap);
          where += " (snapshot " + snap.string() + ")";
        }
        throw NumericError("non-finite loss at " + where + ":" + detail);
      }
      train_step(state.weights, state.adam, bundle.total, spec.lr);
      for (const auto& [k, v] : bundle.terms) state.epoch_sums[k] += static_cast<double>(v.item());
      ++state.epoch_batches;
      ++state.batch;
      ++state.step;
      if (hooks.pause_after_step && hooks.pause_after_step(state)) return false;
    }
    for (const auto& [k, sum] : state.epoch_sums) {
      log.append({tag, state.epoch, k, sum / static_cast<double>(state.epoch_batches)});
    }
    log::info(tag + " epoch " + std::to_string(state.epoch) + " done after " + std::to_string(state.step) + " steps");
    ++state.epoch;
    state.batch = 0;
    state.epoch_sums.clear();
    state.epoch_batches = 0;
  }
  return true;
}

template <typename T>
double belief_token_accuracy(const Weights<T>& w, const Dataset& data) {
  ad::NoGradGuard no_grad;
  std::size_t hit = 0, total = 0;
  for (const auto& session : data.samples) {
    for (const auto& s : session) {
      const std::span<const TokenId> target(s.target.data(), s.belief_len);
      const auto trace = forward(w, s.context, target);
      const std::size_t V = trace.logits.cols();
      const auto v = trace.logits.values();
      for (std::size_t t = 0; t < s.belief_len; ++t) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < V; ++j) {
          if (v[t * V + j] > v[t * V + best]) best = j;
        }
        hit += static_cast<TokenId>(best) == target[t];
        ++total;
      }
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

template LossBundle<float> batch_loss<float>(const Weights<float>&, const BatchContext&, const PhaseSpec&,
                                             std::span<const SampleRef>, Rng&, Rng*);
template LossBundle<double> batch_loss<double>(const Weights<double>&, const BatchContext&, const PhaseSpec&,
                                               std::span<const SampleRef>, Rng&, Rng*);
template double belief_token_accuracy<float>(const Weights<float>&, const Dataset&);
template double belief_token_accuracy<double>(const Weights<double>&, const Dataset&);

}  // namespace tpld
