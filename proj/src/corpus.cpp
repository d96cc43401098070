#include "et/corpus.hpp"

#include "et/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace et::corpus {

std::vector<std::string> tokenize(const std::string& text) {
    static const std::string punct = ".,!?;:\"'()-";
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch)) {
            flush();
        } else if (punct.find(char(ch)) != std::string::npos) {
            flush();
            out.emplace_back(1, char(ch));
        } else {
            cur.push_back(char(std::tolower(ch)));
        }
    }
    flush();
    return out;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? UNK_ID : it->second;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& sentences,
                             std::size_t min_freq) {
    if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1");
    Vocabulary v;
    v.min_freq = min_freq;
    v.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (int i = 0; i < 4; ++i) v.token_to_id[v.id_to_token[std::size_t(i)]] = i;
    std::map<std::string, std::size_t> freq; // ordered: deterministic id assignment
    for (const auto& s : sentences)
        for (const auto& t : s) ++freq[t];
    for (const auto& [tok, n] : freq) {
        if (n < min_freq) continue;
        v.token_to_id[tok] = int(v.id_to_token.size());
        v.id_to_token.push_back(tok);
    }
    return v;
}

std::vector<int> encode(const Vocabulary& v, const std::vector<std::string>& tokens,
                        bool add_bos_eos) {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    if (add_bos_eos) ids.push_back(BOS_ID);
    for (const auto& t : tokens) ids.push_back(v.id_of(t));
    if (add_bos_eos) ids.push_back(EOS_ID);
    return ids;
}

std::string decode(const Vocabulary& v, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id == PAD_ID || id == BOS_ID || id == EOS_ID) continue;
        if (id < 0 || std::size_t(id) >= v.size())
            throw IndexError("decode: id out of range: " + std::to_string(id));
        if (!out.empty()) out += ' ';
        out += v.id_to_token[std::size_t(id)];
    }
    return out;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::pair<ParallelCorpus, ParallelCorpus> split_filtered(std::vector<Pair> pairs,
                                                         std::size_t max_len,
                                                         double split_ratio, Rng& rng,
                                                         LoadReport* report,
                                                         std::string provenance) {
    if (split_ratio <= 0.0 || split_ratio >= 1.0)
        throw ConfigError("split_ratio must be in (0,1)");
    if (max_len < 3) throw ConfigError("max_len must leave room for BOS/EOS");

    LoadReport rep;
    rep.total = pairs.size();
    std::vector<Pair> kept;
    for (auto& p : pairs) {
        if (p.src.empty() || p.tgt.empty()) {
            ++rep.dropped_empty;
        } else if (p.src.size() > max_len - 2 || p.tgt.size() > max_len - 2) {
            ++rep.dropped_long;
        } else {
            kept.push_back(std::move(p));
        }
    }
    rep.kept = kept.size();
    if (report) *report = rep;

    // Fisher-Yates by the supplied rng: membership depends only on the seed
    for (std::size_t i = kept.size(); i > 1; --i)
        std::swap(kept[i - 1], kept[rng.next_u64() % i]);

    const std::size_t n_train = std::size_t(double(kept.size()) * split_ratio + 0.5);
    ParallelCorpus train, test;
    train.provenance = provenance;
    test.provenance = std::move(provenance);
    train.pairs.assign(kept.begin(), kept.begin() + long(n_train));
    test.pairs.assign(kept.begin() + long(n_train), kept.end());
    return {std::move(train), std::move(test)};
}

} // namespace

std::pair<ParallelCorpus, ParallelCorpus> load_parallel(const std::string& src_path,
                                                        const std::string& tgt_path,
                                                        std::size_t max_len,
                                                        double split_ratio, Rng& rng,
                                                        LoadReport* report) {
    std::vector<std::string> src = read_lines(src_path);
    std::vector<std::string> tgt = read_lines(tgt_path);
    if (src.size() != tgt.size())
        throw CorpusError(src_path + " has " + std::to_string(src.size()) + " lines but " +
                          tgt_path + " has " + std::to_string(tgt.size()));
    std::vector<Pair> pairs;
    pairs.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i)
        pairs.push_back({tokenize(src[i]), tokenize(tgt[i]), i + 1});
    return split_filtered(std::move(pairs), max_len, split_ratio, rng, report,
                          src_path + " + " + tgt_path);
}

std::pair<ParallelCorpus, ParallelCorpus> load_parallel_tsv(const std::string& tsv_path,
                                                            std::size_t max_len,
                                                            double split_ratio, Rng& rng,
                                                            LoadReport* report) {
    std::vector<std::string> lines = read_lines(tsv_path);
    std::vector<Pair> pairs;
    pairs.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
            throw CorpusError(tsv_path + ":" + std::to_string(i + 1) +
                              ": expected exactly one tab");
        pairs.push_back(
            {tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1)), i + 1});
    }
    return split_filtered(std::move(pairs), max_len, split_ratio, rng, report, tsv_path);
}

void write_drop_report(const LoadReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "total,kept,dropped_long,dropped_empty\n"
        << r.total << ',' << r.kept << ',' << r.dropped_long << ',' << r.dropped_empty
        << '\n';
}

std::vector<Batch> make_batches(const ParallelCorpus& c, const Vocabulary& v_src,
                                const Vocabulary& v_tgt, std::size_t batch_size,
                                Rng& rng) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order(c.pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_u64() % i]);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        Batch b;
        std::size_t ts = 0, tt = 0;
        std::vector<std::vector<int>> src, tgt;
        for (std::size_t i = start; i < end; ++i) {
            const Pair& p = c.pairs[order[i]];
            src.push_back(encode(v_src, p.src, true));
            tgt.push_back(encode(v_tgt, p.tgt, true)); // [BOS, ..., EOS]
            ts = std::max(ts, src.back().size());
            tt = std::max(tt, tgt.back().size() - 1); // in/out drop one end each
        }
        for (std::size_t i = 0; i < src.size(); ++i) {
            std::vector<int> s = src[i];
            s.resize(ts, PAD_ID);
            std::vector<int> tin(tgt[i].begin(), tgt[i].end() - 1);  // BOS ... last
            std::vector<int> tout(tgt[i].begin() + 1, tgt[i].end()); // ... EOS
            tin.resize(tt, PAD_ID);
            tout.resize(tt, PAD_ID);
            b.src_ids.push_back(std::move(s));
            b.tgt_in_ids.push_back(std::move(tin));
            b.tgt_out_ids.push_back(std::move(tout));
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace et::corpus
