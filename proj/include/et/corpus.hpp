#pragma once

#include "et/rng.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace et::corpus {

inline constexpr int PAD_ID = 0;
inline constexpr int BOS_ID = 1;
inline constexpr int EOS_ID = 2;
inline constexpr int UNK_ID = 3;

// lowercase, whitespace split, punctuation characters .,!?;:"'()- become
// single-character tokens
std::vector<std::string> tokenize(const std::string& text);

struct Vocabulary {
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token; // index = id, reserved first
    std::size_t min_freq = 2;

    std::size_t size() const { return id_to_token.size(); }
    int id_of(const std::string& token) const;

    static Vocabulary build(const std::vector<std::vector<std::string>>& sentences,
                            std::size_t min_freq = 2);
};

std::vector<int> encode(const Vocabulary& v, const std::vector<std::string>& tokens,
                        bool add_bos_eos);
// strips reserved tokens, joins with single spaces
std::string decode(const Vocabulary& v, const std::vector<int>& ids);

struct Pair {
    std::vector<std::string> src;
    std::vector<std::string> tgt;
    std::size_t line = 0; // 1-based source line
};

struct ParallelCorpus {
    std::vector<Pair> pairs;
    std::string provenance;
};

struct LoadReport {
    std::size_t total = 0;
    std::size_t kept = 0;
    std::size_t dropped_long = 0;  // a side exceeds max_len - 2 tokens
    std::size_t dropped_empty = 0; // a side tokenizes to nothing
};

// two aligned files, one sentence per line
std::pair<ParallelCorpus, ParallelCorpus> load_parallel(const std::string& src_path,
                                                        const std::string& tgt_path,
                                                        std::size_t max_len,
                                                        double split_ratio, Rng& rng,
                                                        LoadReport* report = nullptr);
// single file, source TAB target per line
std::pair<ParallelCorpus, ParallelCorpus> load_parallel_tsv(const std::string& tsv_path,
                                                            std::size_t max_len,
                                                            double split_ratio, Rng& rng,
                                                            LoadReport* report = nullptr);

void write_drop_report(const LoadReport& r, const std::string& path);

struct Batch {
    std::vector<std::vector<int>> src_ids;     // [B][T_s], PAD-padded
    std::vector<std::vector<int>> tgt_in_ids;  // [B][T_t], BOS-prefixed
    std::vector<std::vector<int>> tgt_out_ids; // [B][T_t], EOS at true end
};

// shuffles by rng, pads each batch to its own max lengths
std::vector<Batch> make_batches(const ParallelCorpus& c, const Vocabulary& v_src,
                                const Vocabulary& v_tgt, std::size_t batch_size, Rng& rng);

} // namespace et::corpus
