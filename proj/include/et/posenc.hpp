#pragma once

#include "et/rng.hpp"
#include "et/tensor.hpp"

#include <string>
#include <vector>

namespace et::posenc {

enum class Similarity { cosine, dot };

Similarity parse_similarity(const std::string& s);

// positions x dims matrix of position vectors
struct PEMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values; // row-major
    std::string source;         // "sinusoidal" or "learned"

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

struct PEEnvConfig {
    std::size_t n_positions = 16;
    std::size_t n_dims = 8;
    Similarity similarity = Similarity::cosine;
    // actions (matrix entries) live in [-1, +1]
};

// PE(pos,2i) = sin(pos / 10000^(2i/d)), PE(pos,2i+1) = cos(...)
PEMatrix sinusoidal_pe(std::size_t max_positions, std::size_t d_model);

// sum over unordered position pairs {A,B}, A != B, of
// sim(row_A, row_B) / |A - B|; cosine similarity clamps zero-norm rows
// to 0
double pe_reward(const PEMatrix& p, const PEEnvConfig& cfg);

// literal double loop over all pairs, independent oracle for the same
// formula
double pe_reward_bruteforce(const PEMatrix& p, const PEEnvConfig& cfg);

// analytic gradient of pe_reward with respect to every entry
std::vector<double> pe_reward_grad(const PEMatrix& p, const PEEnvConfig& cfg);

// gradient ascent on pe_reward, entries clamped to [-1,1]; random small
// init from rng unless an explicit start matrix is supplied
PEMatrix direct_ascent_pe(const PEEnvConfig& cfg, std::size_t steps, double lr, Rng& rng,
                          const PEMatrix* init = nullptr);

// replicate each cell into a factor_pos x factor_dim block, then smooth
// with a 2-D box filter of odd width smooth_window (edge replication)
PEMatrix upsample_pe(const PEMatrix& p, std::size_t factor_pos, std::size_t factor_dim,
                     std::size_t smooth_window);

// ---- persistence ----
// CSV: header-free comma-separated decimal floats, one position per line
void pe_save_csv(const PEMatrix& p, const std::string& path);
PEMatrix pe_load_csv(const std::string& path);
// writes <stem>.csv and <stem>.svg (heatmap, linear ramp over [-1,1])
void pe_export_heatmap(const PEMatrix& p, const std::string& stem,
                       std::size_t cell_px = 16);

// ---- SAC learner over the flattened n_positions x n_dims action ----
struct SacConfig {
    std::size_t policy_hidden = 64;
    std::size_t critic_hidden = 64;
    double lr_policy = 3e-4;
    double lr_critic = 3e-4;
    double lr_alpha = 3e-4;
    double init_alpha = 0.2;
    // defaults to -(n_positions * n_dims) when 0
    double target_entropy = 0.0;
    std::size_t replay_capacity = 20000;
    std::size_t batch_size = 64;
    std::size_t steps = 1500;
    std::size_t warmup = 64; // uniform-random actions before updates start
};

struct SacResult {
    PEMatrix best;             // best-reward matrix seen
    double best_reward = 0.0;
    std::vector<double> trace; // per-step episode reward
};

// One-shot episodes: a fixed initial state, the tanh-squashed Gaussian
// policy emits the whole flattened matrix as a single action in
// [-1,1]^(n*d), the reward is pe_reward, and the episode ends.
SacResult sac_learn_pe(const PEEnvConfig& env, const SacConfig& sac, Rng& rng);

} // namespace et::posenc
