#pragma once

#include "et/corpus.hpp"
#include "et/model.hpp"
#include "et/optim.hpp"
#include "et/posenc.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace et::trainer {

struct TrainConfig {
    double learning_rate = 1e-5;
    std::size_t batch_size = 128;
    std::size_t epochs = 1000;
    std::size_t eval_every = 1;
    std::uint64_t seed = 1;
    double grad_clip = 5.0;    // global norm; 0 disables
    std::size_t max_steps = 0; // optimizer-step cap, 0 = none
    std::string checkpoint_path;  // final state; best BLEU state at "<path>.best"
    std::string metrics_csv_path; // empty = do not write

    void validate() const;
    // laptop-scale defaults matching ModelConfig::desk
    static TrainConfig desk();
};

struct RunRecordRow {
    std::size_t epoch = 0;
    std::string config;
    double train_loss = 0.0;
    double test_bleu = 0.0;         // [0,1]
    double avg_bleu_last100 = 0.0;
};

struct RunRecord {
    std::vector<RunRecordRow> rows;
};

// columns exactly: epoch,config,train_loss,test_bleu,avg_bleu_last100
void write_run_record_csv(const RunRecord& r, const std::string& path);

struct TrainResult {
    model::TransformerModel model;
    RunRecord record;
    double best_bleu = 0.0;
    std::size_t steps = 0;
};

// full training state: parameters, Adam moments + step, both
// vocabularies, loop rng state, and the completed epoch count
void save_training_checkpoint(const model::TransformerModel& m,
                              const optim::AdamState& adam,
                              const corpus::Vocabulary& v_src,
                              const corpus::Vocabulary& v_tgt, std::uint64_t rng_state,
                              std::size_t epoch, const std::string& path);

struct LoadedTraining {
    model::TransformerModel model;
    optim::AdamState adam;
    corpus::Vocabulary v_src;
    corpus::Vocabulary v_tgt;
    std::uint64_t rng_state = 0;
    std::size_t epoch = 0;
};

LoadedTraining load_training_checkpoint(const std::string& path);

// resume_path: continue from a saved training checkpoint; the combined
// trajectory matches an uninterrupted run with the same seeds bit-exactly
TrainResult train_run(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                      const corpus::ParallelCorpus& train_split,
                      const corpus::ParallelCorpus& test_split,
                      const corpus::Vocabulary& v_src, const corpus::Vocabulary& v_tgt,
                      const std::string& resume_path = "");

struct AblationOptions {
    std::size_t threads = 1;
    // learned-PE source for the rl_pe and combined runs; when empty the
    // runner trains one with sac_learn_pe and writes it to the output dir
    std::string pe_csv;
    posenc::PEEnvConfig pe_env;
    posenc::SacConfig sac;
};

struct AblationRun {
    std::string name;
    model::ModelConfig cfg;
    RunRecord record;
    double final_avg_bleu = 0.0;
};

// nine runs: original, full_layer_norm, residual_k2..k5, rl_pe,
// zero_mask, combined; writes <out_dir>/ablation.csv, ablation.svg,
// run-manifest.txt, and per-run checkpoints
std::vector<AblationRun> run_ablation(const model::ModelConfig& base,
                                      const TrainConfig& tcfg,
                                      const corpus::ParallelCorpus& train_split,
                                      const corpus::ParallelCorpus& test_split,
                                      const corpus::Vocabulary& v_src,
                                      const corpus::Vocabulary& v_tgt,
                                      const std::string& out_dir,
                                      const AblationOptions& opts);

} // namespace et::trainer
