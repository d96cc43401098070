#pragma once

#include "et/nn.hpp"
#include "et/posenc.hpp"
#include "et/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace et::model {

enum class PeMode { sinusoidal, learned };

PeMode parse_pe_mode(const std::string& s);
std::string pe_mode_name(PeMode m);

struct ModelConfig {
    std::string name = "original";
    std::size_t d_model = 512;
    std::size_t n_layers = 6;
    std::size_t n_heads = 8;
    std::size_t d_ff = 2048;
    double dropout_rate = 0.2;
    std::size_t max_len = 256;
    std::size_t src_vocab = 0;
    std::size_t tgt_vocab = 0;

    // the four mechanism toggles; all defaults reproduce the plain
    // post-norm Transformer
    nn::NormMode norm_mode = nn::NormMode::original;
    double residual_k = 1.0;
    PeMode pe_mode = PeMode::sinusoidal;
    std::string pe_path;           // CSV, learned mode only
    std::size_t pe_smooth_window = 3; // box filter width when upsampling
    bool zero_masked_self_attn = false;
    bool post_softmax_zero_variant = false;

    void validate() const;

    // small dims for laptop-scale experiments
    static ModelConfig desk(std::size_t src_vocab, std::size_t tgt_vocab);
    // all four mechanisms on, k = 4
    static ModelConfig enhanced(std::size_t src_vocab, std::size_t tgt_vocab);
};

struct EncoderLayer {
    nn::MhaParams self_attn;
    Tensor ffn_w1, ffn_w2;
    nn::LayerNormParams norm1, norm2;
};

struct DecoderLayer {
    nn::MhaParams self_attn;
    nn::MhaParams cross_attn;
    Tensor ffn_w1, ffn_w2;
    nn::LayerNormParams norm1, norm2, norm3;
};

struct TransformerModel {
    ModelConfig cfg;
    Tensor src_embed; // [V_src, d]
    Tensor tgt_embed; // [V_tgt, d]
    Tensor out_proj;  // [d, V_tgt]
    posenc::PEMatrix pe;
    // input-stream norms, used only in full norm mode
    nn::LayerNormParams enc_norm_e, enc_norm_p, dec_norm_e, dec_norm_p;
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;

    // deterministic name -> tensor map over every trainable parameter
    std::map<std::string, Tensor> parameters() const;
};

// initialization is keyed by parameter name, not draw order, so configs
// differing only in toggles share identical shared-parameter values
TransformerModel build_model(const ModelConfig& cfg, std::uint64_t seed);

// post-softmax weights of every layer, for heatmap export
struct AttentionTrace {
    std::vector<Tensor> encoder_self; // [B,h,Ts,Ts] per layer
    std::vector<Tensor> decoder_self; // [B,h,Tt,Tt]
    std::vector<Tensor> decoder_cross; // [B,h,Tt,Ts]
};

// logits [B,T_t,V_tgt]; dropout active only when a training rng is given
Tensor forward(const TransformerModel& m, const std::vector<std::vector<int>>& src_ids,
               const std::vector<std::vector<int>>& tgt_in_ids, Rng* dropout_rng = nullptr,
               AttentionTrace* trace = nullptr);

// BOS-seeded greedy argmax decode, lowest-id tie break, stops at EOS or
// max_out_len; returns generated ids without BOS/EOS
std::vector<int> greedy_translate(const TransformerModel& m, const std::vector<int>& src_ids,
                                  std::size_t max_out_len);

std::size_t count_parameters(const TransformerModel& m);
std::size_t count_parameters(const ModelConfig& cfg); // closed form

AttentionTrace extract_attention(const TransformerModel& m, const std::vector<int>& src_ids,
                                 const std::vector<int>& tgt_ids);

// flat key=value view used for checkpoint echo and run manifests
std::map<std::string, std::string> config_to_map(const ModelConfig& cfg);
ModelConfig config_from_map(const std::map<std::string, std::string>& kv);

} // namespace et::model
