#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "tpld/corpus.hpp"

namespace tpld {

class Rng;

// A corpus turn addressed by (session index, turn index).
struct SampleRef {
  std::size_t session = 0;
  std::size_t turn = 0;
  auto operator<=>(const SampleRef&) const = default;
};

struct PolicyIndex {
  Granularity granularity = Granularity::kAct;
  std::map<PolicySignature, std::vector<SampleRef>> buckets;  // refs in corpus order
  std::map<SampleRef, PolicySignature> signature_of;
  std::vector<SampleRef> all;  // every turn in corpus order
  std::size_t total = 0;

  const PolicySignature& signature(const SampleRef& ref) const;
};

PolicyIndex build_policy_index(const Corpus& corpus, Granularity granularity);

struct ContrastiveBatch {
  std::vector<SampleRef> samples;  // base samples first, then M appended per base sample
  std::size_t base_count = 0;
  std::size_t m = 0;
  std::vector<std::vector<std::size_t>> positives;  // P_i, indices into samples
  std::vector<bool> filler;  // appended slot drawn from the global corpus (negative only)
};

// Appends M out-of-batch samples per base sample. Positives share the
// anchor's signature; see docs for the fallback rules when a bucket is thin.
ContrastiveBatch make_contrastive_batch(std::span<const SampleRef> base, const PolicyIndex& index, std::size_t m,
                                        Rng& rng, bool symmetrize_positives = false);

}  // namespace tpld
