#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace et::metrics {

using Tokens = std::vector<std::string>;

struct BleuStats {
    std::vector<std::size_t> matches; // clipped, per order 1..max_n
    std::vector<std::size_t> totals;  // candidate n-gram counts per order
    std::size_t c = 0;                // candidate length
    std::size_t r = 0;                // reference length
};

// candidate n-gram counts clipped by the reference's own multiplicities;
// single reference. candidate shorter than n -> (0, 0)
std::pair<std::size_t, std::size_t> modified_precision(const Tokens& candidate,
                                                       const Tokens& reference,
                                                       std::size_t n);

// 1 if c > r, exp(1 - r/c) otherwise; c = 0 -> 0
double brevity_penalty(std::size_t c, std::size_t r);

BleuStats accumulate_bleu(const std::vector<Tokens>& candidates,
                          const std::vector<Tokens>& references, std::size_t max_n);

// geometric mean of per-order precisions (uniform 1/max_n weights) times
// the brevity penalty, in [0,1]; any zero-match order -> 0 (strict, no
// smoothing) unless floor_smoothing replaces zero precisions with 1e-9
double corpus_bleu(const std::vector<Tokens>& candidates,
                   const std::vector<Tokens>& references, std::size_t max_n = 4,
                   bool floor_smoothing = false);

// mean of the last min(k, size) entries
double running_average_last_k(const std::vector<double>& scores, std::size_t k = 100);

} // namespace et::metrics
