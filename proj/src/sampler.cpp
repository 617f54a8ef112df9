#include "tpld/sampler.hpp"

#include <algorithm>
#include <set>

#include "tpld/error.hpp"
#include "tpld/rng.hpp"

namespace tpld {

const PolicySignature& PolicyIndex::signature(const SampleRef& ref) const {
  auto it = signature_of.find(ref);
  if (it == signature_of.end()) {
    throw DataError("policy index has no sample (" + std::to_string(ref.session) + ", " + std::to_string(ref.turn) +
                    ")");
  }
  return it->second;
}

PolicyIndex build_policy_index(const Corpus& corpus, Granularity granularity) {
  PolicyIndex index;
  index.granularity = granularity;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    for (std::size_t t = 0; t < corpus[s].turns.size(); ++t) {
      const SampleRef ref{s, t};
      auto sig = canonicalize_acts(corpus[s].turns[t].acts, granularity);
      index.buckets[sig].push_back(ref);
      index.signature_of.emplace(ref, std::move(sig));
      index.all.push_back(ref);
    }
  }
  index.total = index.all.size();
  return index;
}

ContrastiveBatch make_contrastive_batch(std::span<const SampleRef> base, const PolicyIndex& index, std::size_t m,
                                        Rng& rng, bool symmetrize_positives) {
  if (base.size() < 2) throw UsageError("make_contrastive_batch: need at least 2 base samples");
  if (m < 1) throw UsageError("make_contrastive_batch: M must be at least 1");
  const std::set<SampleRef> in_base(base.begin(), base.end());
  const std::size_t n = base.size();

  ContrastiveBatch b;
  b.base_count = n;
  b.m = m;
  b.samples.assign(base.begin(), base.end());
  b.samples.reserve((m + 1) * n);
  b.positives.assign((m + 1) * n, {});
  b.filler.assign((m + 1) * n, false);

  std::vector<SampleRef> global;
  for (const auto& r : index.all) {
    if (!in_base.contains(r)) global.push_back(r);
  }
  if (global.empty()) global = index.all;

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<SampleRef> eligible;
    for (const auto& r : index.buckets.at(index.signature(base[i]))) {
      if (!in_base.contains(r)) eligible.push_back(r);
    }
    std::vector<SampleRef> drawn;
    bool is_filler = false;
    if (eligible.size() >= m) {
      // Partial Fisher-Yates: first m entries form a uniform sample without replacement.
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t j = k + rng.uniform_index(eligible.size() - k);
        std::swap(eligible[k], eligible[j]);
        drawn.push_back(eligible[k]);
      }
    } else if (!eligible.empty()) {
      for (std::size_t k = 0; k < m; ++k) drawn.push_back(eligible[rng.uniform_index(eligible.size())]);
    } else {
      is_filler = true;
      for (std::size_t k = 0; k < m; ++k) drawn.push_back(global[rng.uniform_index(global.size())]);
    }
    const std::size_t first = b.samples.size();
    for (const auto& r : drawn) {
      b.filler[b.samples.size()] = is_filler;
      b.samples.push_back(r);
    }
    if (is_filler) continue;
    for (std::size_t k = 0; k < m; ++k) b.positives[i].push_back(first + k);
    if (symmetrize_positives) {
      for (std::size_t k = 0; k < m; ++k) {
        auto& p = b.positives[first + k];
        p.push_back(i);
        for (std::size_t q = 0; q < m; ++q) {
          if (q != k) p.push_back(first + q);
        }
      }
    }
  }
  return b;
}

}  // namespace tpld
