#pragma once

#include "et/tensor.hpp"

#include <functional>
#include <vector>

namespace et::nn {

struct LayerNormParams {
    Tensor gamma;   // length d
    Tensor beta;    // length d
    double epsilon; // > 0

    // default epsilon is tiny: everything runs in 64-bit and the input
    // preparation stage needs variance within 1e-6 of 1 after
    // standardization
    static LayerNormParams create(std::size_t d, double epsilon = 1e-10);
};

// y = (x - E(x)) / sqrt(V(x) + eps) * gamma + beta over the last dim,
// biased variance
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

// Additive score masks: entries are 0 or -inf.
struct AttentionMaskSet {
    Tensor padding; // [B,1,1,Tk], optional
    Tensor causal;  // [1,1,Tq,Tk], optional
};

// upper-triangular -inf mask of shape [1,1,T,T]
Tensor causal_mask(std::size_t t);
// [B,1,1,T] mask with -inf at pad positions
Tensor padding_mask(const std::vector<std::vector<int>>& ids, int pad_id);

struct AttentionResult {
    Tensor out;     // [B,h,Tq,d_k]
    Tensor weights; // [B,h,Tq,Tk] post-softmax (post-zeroing for the
                    // post-softmax variant, so rows there may sum < 1)
};

// softmax(Q K^T / sqrt(d_k) + masks) V.
//
// zero_masked adds a -inf diagonal entry pre-softmax so each token's
// attention to itself is exactly 0 and the remaining weights
// renormalize; rows where the diagonal is the only unmasked key keep it
// (sole-key exemption). post_softmax_zero instead zeroes the diagonal
// after softmax without renormalizing. Self-attention only: requires
// Tq == Tk when zero_masked.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionMaskSet& masks, bool zero_masked,
                                     bool post_softmax_zero = false);

struct MhaParams {
    Tensor wq, wk, wv; // [d_model, d_model], bias-free
    Tensor wo;         // [d_model, d_model]
    std::size_t heads = 1;

    static MhaParams create(std::size_t d_model, std::size_t heads, Rng& rng);
};

AttentionResult multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                                     const MhaParams& p, const AttentionMaskSet& masks,
                                     bool zero_masked, bool post_softmax_zero = false);

struct ResidualConfig {
    double k = 1.0; // k = 1 is the plain residual connection
};

// H(x) = F(x) + k x
Tensor residual_sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                         const ResidualConfig& rc);

enum class NormMode {
    original,    // embeddings + pe
    full,        // layer_norm(embeddings) + layer_norm(pe), independent params
    full_postsum // layer_norm(embeddings + pe); fidelity-experiment variant
};

NormMode parse_norm_mode(const std::string& s);
std::string norm_mode_name(NormMode m);

// token_embeddings [B,T,d] combined with a pe slice [T,d]
Tensor prepare_inputs(const Tensor& token_embeddings, const Tensor& pe, NormMode mode,
                      const LayerNormParams& norm_e, const LayerNormParams& norm_p);

// relu(x W1) W2
Tensor position_wise_ffn(const Tensor& x, const Tensor& w1, const Tensor& w2);

// zeroes entries with probability rate and scales survivors by
// 1/(1-rate) when training; identity otherwise
Tensor dropout_apply(const Tensor& x, double rate, Rng& rng, bool training);

} // namespace et::nn
