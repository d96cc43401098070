#include "doctest.h"

#include "et/corpus.hpp"
#include "et/errors.hpp"
#include "et/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace et;
using namespace et::metrics;

namespace {

// independent naive oracle: sorted-ngram multiset intersection, written
// without reusing any library code paths
std::pair<std::size_t, std::size_t> oracle_precision(const Tokens& cand, const Tokens& ref,
                                                     std::size_t n) {
    auto grams = [n](const Tokens& t) {
        std::vector<std::string> gs;
        for (std::size_t i = 0; i + n <= t.size(); ++i) {
            std::string g;
            for (std::size_t j = 0; j < n; ++j) g += t[i + j] + "\x1f";
            gs.push_back(g);
        }
        std::sort(gs.begin(), gs.end());
        return gs;
    };
    auto cg = grams(cand), rg = grams(ref);
    std::vector<std::string> inter;
    std::set_intersection(cg.begin(), cg.end(), rg.begin(), rg.end(),
                          std::back_inserter(inter));
    return {inter.size(), cg.size()};
}

double oracle_bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs,
                   std::size_t max_n) {
    std::vector<std::size_t> m(max_n, 0), t(max_n, 0);
    std::size_t c = 0, r = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        c += cands[i].size();
        r += refs[i].size();
        for (std::size_t n = 1; n <= max_n; ++n) {
            auto [mm, tt] = oracle_precision(cands[i], refs[i], n);
            m[n - 1] += mm;
            t[n - 1] += tt;
        }
    }
    if (c == 0) return 0.0;
    double prod = 1.0;
    for (std::size_t n = 0; n < max_n; ++n) {
        if (t[n] == 0 || m[n] == 0) return 0.0;
        prod *= std::pow(double(m[n]) / double(t[n]), 1.0 / double(max_n));
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - double(r) / double(c));
    return bp * prod;
}

Tokens toks(const std::string& s) { return corpus::tokenize(s); }

} // namespace

TEST_CASE("modified_precision") {
    Tokens ref = toks("the cat sat on the mat");
    CHECK(modified_precision(ref, ref, 1) == std::pair<std::size_t, std::size_t>{6, 6});
    CHECK(modified_precision(ref, ref, 4) == std::pair<std::size_t, std::size_t>{3, 3});

    // clipping: "the" appears twice in the reference
    CHECK(modified_precision(toks("the the the the"), toks("the cat the"), 1) ==
          std::pair<std::size_t, std::size_t>{2, 4});

    CHECK(modified_precision(toks("x y"), toks("a b"), 1) ==
          std::pair<std::size_t, std::size_t>{0, 2});
    // candidate shorter than n
    CHECK(modified_precision(toks("a b"), toks("a b c"), 3) ==
          std::pair<std::size_t, std::size_t>{0, 0});
    CHECK_THROWS_AS(modified_precision(ref, ref, 0), MetricError);
}

TEST_CASE("brevity_penalty") {
    CHECK(brevity_penalty(10, 5) == 1.0);
    CHECK(brevity_penalty(3, 6) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK(brevity_penalty(5, 5) == 1.0); // boundary: exp(0)
    CHECK(brevity_penalty(0, 5) == 0.0);
}

TEST_CASE("corpus_bleu fixtures") {
    // perfect match
    std::vector<Tokens> c = {toks("a small dog runs fast")};
    CHECK(corpus_bleu(c, c) == doctest::Approx(1.0).epsilon(1e-15));

    // short prefix candidate: p1=p2=p3=1, BP=exp(1-6/3)=1/e
    CHECK(corpus_bleu({toks("the cat sat")}, {toks("the cat sat on the mat")}, 3) ==
          doctest::Approx(0.36787944117144233).epsilon(1e-15));

    // zero overlap
    CHECK(corpus_bleu({toks("x y z w")}, {toks("a b c d")}) == 0.0);

    // floor smoothing keeps a tiny nonzero score instead of collapsing
    const double smoothed = corpus_bleu({toks("the cat sat")},
                                        {toks("the cat sat on the mat")}, 4, true);
    CHECK(smoothed > 0.0);
    CHECK(smoothed < 0.01);

    CHECK_THROWS_AS(corpus_bleu({}, {}), MetricError);
    CHECK_THROWS_AS(corpus_bleu({toks("a")}, {toks("a"), toks("b")}), MetricError);
}

TEST_CASE("fixture file cases match pinned hand values") {
    std::ifstream in(std::string(ET_TEST_DATA) + "/bleu_cases.tsv");
    REQUIRE(in.good());
    std::string line;
    std::size_t cases = 0;
    std::vector<Tokens> all_c, all_r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = line.find('\t', t1 + 1);
        REQUIRE(t1 != std::string::npos);
        REQUIRE(t2 != std::string::npos);
        Tokens cand = toks(line.substr(0, t1));
        Tokens ref = toks(line.substr(t1 + 1, t2 - t1 - 1));
        const double expected = std::stod(line.substr(t2 + 1));
        CAPTURE(line);
        CHECK(std::abs(corpus_bleu({cand}, {ref}) - expected) <= 1e-12);
        CHECK(std::abs(oracle_bleu({cand}, {ref}, 4) - expected) <= 1e-12);
        all_c.push_back(std::move(cand));
        all_r.push_back(std::move(ref));
        ++cases;
    }
    CHECK(cases >= 10);
    // whole-file corpus aggregation agrees with the independent oracle
    CHECK(std::abs(corpus_bleu(all_c, all_r) - oracle_bleu(all_c, all_r, 4)) <= 1e-12);
}

TEST_CASE("corpus_bleu properties") {
    Rng rng(31);
    const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f"};
    std::vector<Tokens> cands, refs;
    for (int i = 0; i < 12; ++i) {
        Tokens r, cnd;
        const std::size_t len = 5 + rng.next_u64() % 6;
        for (std::size_t j = 0; j < len; ++j) r.push_back(words[rng.next_u64() % 6]);
        cnd = r;
        if (i % 3 == 0) cnd[rng.next_u64() % cnd.size()] = "zzz"; // corrupt some
        refs.push_back(std::move(r));
        cands.push_back(std::move(cnd));
    }
    const double score = corpus_bleu(cands, refs);
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
    CHECK(std::abs(score - oracle_bleu(cands, refs, 4)) <= 1e-12);

    // invariant under a consistent permutation of the pairs
    std::vector<std::size_t> perm(cands.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.next_u64() % i]);
    std::vector<Tokens> pc, pr;
    for (std::size_t i : perm) {
        pc.push_back(cands[i]);
        pr.push_back(refs[i]);
    }
    CHECK(corpus_bleu(pc, pr) == doctest::Approx(score).epsilon(1e-15));

    // 1.0 iff all candidates equal their references
    CHECK(score < 1.0);
    CHECK(corpus_bleu(refs, refs) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("running_average_last_k") {
    std::vector<double> scores;
    for (int i = 1; i <= 200; ++i) scores.push_back(double(i));
    CHECK(running_average_last_k(scores, 100) == doctest::Approx(150.5).epsilon(1e-15));
    CHECK(running_average_last_k({3.0, 5.0}, 100) == doctest::Approx(4.0));
    CHECK(running_average_last_k(std::vector<double>(7, 2.5), 3) == doctest::Approx(2.5));
    CHECK_THROWS_AS(running_average_last_k({}, 100), MetricError);
}
