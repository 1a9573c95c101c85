// tests/align_oracle.h

// Brute-force word alignment.  An alignment is fixed, up to the order of
// neighbouring insertions and deletions (which does not change the counts),
// by a monotone pairing of k reference positions with k hypothesis
// positions; every such pairing is enumerated through position bitmasks.

#ifndef CTXLM_TESTS_ALIGN_ORACLE_H_
#define CTXLM_TESTS_ALIGN_ORACLE_H_

#include <bit>
#include <map>
#include <utility>
#include <vector>

#include "ctxlm/metrics.h"

namespace ctxlm::testing {

class AlignOracle {
 public:
  /// Minimum edits, then most substitutions.
  AlignmentResult operator()(const std::vector<int>& ref, const std::vector<int>& hyp) {
    const int R = int(ref.size()), H = int(hyp.size());
    const auto& pairings = Pairings(R, H);
    AlignmentResult best;
    bool have = false;
    for (const auto& pairs : pairings) {
      const int k = int(pairs.size());
      int subs = 0;
      for (auto [i, j] : pairs) subs += ref[i] != hyp[j];
      AlignmentResult a{subs, H - k, R - k, R};
      if (!have || a.errors() < best.errors() ||
          (a.errors() == best.errors() && a.substitutions > best.substitutions)) {
        best = a;
        have = true;
      }
    }
    return best;
  }

 private:
  using Pairing = std::vector<std::pair<int, int>>;

  const std::vector<Pairing>& Pairings(int R, int H) {
    auto key = std::make_pair(R, H);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<Pairing> all;
    for (unsigned a = 0; a < (1u << R); ++a)
      for (unsigned b = 0; b < (1u << H); ++b) {
        if (std::popcount(a) != std::popcount(b)) continue;
        Pairing p;
        int j = 0;
        for (int i = 0; i < R; ++i) {
          if (!(a >> i & 1u)) continue;
          while (!(b >> j & 1u)) ++j;
          p.emplace_back(i, j++);
        }
        all.push_back(std::move(p));
      }
    return cache_[key] = std::move(all);
  }

  std::map<std::pair<int, int>, std::vector<Pairing>> cache_;
};

/// Calls f(ref, hyp) for every reference of length 1..max_len and hypothesis
/// of length 0..max_len over an alphabet of `symbols`.
template <typename F>
void ForAllPairs(int max_len, int symbols, F&& f) {
  std::vector<std::vector<int>> seqs = {{}};
  for (std::size_t at = 0; at < seqs.size(); ++at)
    if (int(seqs[at].size()) < max_len)
      for (int s = 0; s < symbols; ++s) {
        auto next = seqs[at];
        next.push_back(s);
        seqs.push_back(std::move(next));
      }
  for (const auto& r : seqs)
    if (!r.empty())
      for (const auto& h : seqs) f(r, h);
}

}  // namespace ctxlm::testing

#endif  // CTXLM_TESTS_ALIGN_ORACLE_H_
