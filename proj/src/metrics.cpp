#include "et/metrics.hpp"

#include "et/errors.hpp"

#include <cmath>
#include <map>

namespace et::metrics {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& toks,
                                                             std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        ++counts[std::vector<std::string>(toks.begin() + long(i), toks.begin() + long(i + n))];
    return counts;
}

} // namespace

std::pair<std::size_t, std::size_t> modified_precision(const Tokens& candidate,
                                                       const Tokens& reference,
                                                       std::size_t n) {
    if (n < 1) throw MetricError("modified_precision: n must be >= 1");
    auto cand = ngram_counts(candidate, n);
    auto ref = ngram_counts(reference, n);
    std::size_t matches = 0, totals = 0;
    for (const auto& [gram, count] : cand) {
        totals += count;
        auto it = ref.find(gram);
        if (it != ref.end()) matches += std::min(count, it->second);
    }
    return {matches, totals};
}

double brevity_penalty(std::size_t c, std::size_t r) {
    if (c == 0) return 0.0;
    if (c > r) return 1.0;
    return std::exp(1.0 - double(r) / double(c));
}

BleuStats accumulate_bleu(const std::vector<Tokens>& candidates,
                          const std::vector<Tokens>& references, std::size_t max_n) {
    if (candidates.empty()) throw MetricError("corpus_bleu: empty corpus");
    if (candidates.size() != references.size())
        throw MetricError("corpus_bleu: candidate/reference count mismatch");
    BleuStats s;
    s.matches.assign(max_n, 0);
    s.totals.assign(max_n, 0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        s.c += candidates[i].size();
        s.r += references[i].size();
        for (std::size_t n = 1; n <= max_n; ++n) {
            auto [m, t] = modified_precision(candidates[i], references[i], n);
            s.matches[n - 1] += m;
            s.totals[n - 1] += t;
        }
    }
    return s;
}

double corpus_bleu(const std::vector<Tokens>& candidates,
                   const std::vector<Tokens>& references, std::size_t max_n,
                   bool floor_smoothing) {
    BleuStats s = accumulate_bleu(candidates, references, max_n);
    if (s.c == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < max_n; ++n) {
        double p = s.totals[n] == 0 ? 0.0 : double(s.matches[n]) / double(s.totals[n]);
        if (p == 0.0) {
            if (!floor_smoothing) return 0.0;
            p = 1e-9;
        }
        log_sum += std::log(p) / double(max_n);
    }
    return brevity_penalty(s.c, s.r) * std::exp(log_sum);
}

double running_average_last_k(const std::vector<double>& scores, std::size_t k) {
    if (scores.empty()) throw MetricError("running_average_last_k: empty list");
    const std::size_t take = std::min(k, scores.size());
    double sum = 0.0;
    for (std::size_t i = scores.size() - take; i < scores.size(); ++i) sum += scores[i];
    return sum / double(take);
}

} // namespace et::metrics
