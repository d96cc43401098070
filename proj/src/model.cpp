#include "et/model.hpp"

#include "et/errors.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace et::model {

namespace {

constexpr int PAD = 0, BOS = 1, EOS = 2;

Tensor keyed_uniform(Shape shape, double s, std::uint64_t seed, const std::string& name) {
    Rng rng = Rng::keyed(seed, name);
    Tensor t = Tensor::uniform(std::move(shape), -s, s, rng);
    t.set_requires_grad();
    return t;
}

nn::LayerNormParams make_norm(std::size_t d) {
    nn::LayerNormParams p = nn::LayerNormParams::create(d);
    p.gamma.set_requires_grad();
    p.beta.set_requires_grad();
    return p;
}

} // namespace

PeMode parse_pe_mode(const std::string& s) {
    if (s == "sinusoidal") return PeMode::sinusoidal;
    if (s == "learned") return PeMode::learned;
    throw ConfigError("unknown pe mode: " + s);
}

std::string pe_mode_name(PeMode m) {
    return m == PeMode::sinusoidal ? "sinusoidal" : "learned";
}

void ModelConfig::validate() const {
    if (n_heads == 0 || d_model % n_heads != 0)
        throw ConfigError("d_model must be divisible by n_heads");
    if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
    if (d_ff == 0) throw ConfigError("d_ff must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must be in [0,1)");
    if (max_len < 3) throw ConfigError("max_len must be >= 3");
    if (src_vocab < 4 || tgt_vocab < 4)
        throw ConfigError("vocab sizes must cover the reserved ids");
    if (residual_k <= 0.0) throw ConfigError("residual_k must be positive");
    if (pe_mode == PeMode::learned && pe_path.empty())
        throw ConfigError("learned pe_mode needs pe_path");
    if (pe_smooth_window % 2 == 0) throw ConfigError("pe_smooth_window must be odd");
}

ModelConfig ModelConfig::desk(std::size_t src_vocab, std::size_t tgt_vocab) {
    ModelConfig c;
    c.name = "desk";
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 256;
    c.dropout_rate = 0.0;
    c.max_len = 64;
    c.src_vocab = src_vocab;
    c.tgt_vocab = tgt_vocab;
    return c;
}

ModelConfig ModelConfig::enhanced(std::size_t src_vocab, std::size_t tgt_vocab) {
    ModelConfig c = desk(src_vocab, tgt_vocab);
    c.name = "combined";
    c.norm_mode = nn::NormMode::full;
    c.residual_k = 4.0;
    c.zero_masked_self_attn = true;
    return c;
}

namespace {

posenc::PEMatrix build_pe(const ModelConfig& cfg) {
    if (cfg.pe_mode == PeMode::sinusoidal) return posenc::sinusoidal_pe(cfg.max_len, cfg.d_model);

    posenc::PEMatrix learned = posenc::pe_load_csv(cfg.pe_path);
    if (learned.cols == 0 || cfg.d_model % learned.cols != 0)
        throw ConfigError("learned PE width " + std::to_string(learned.cols) +
                          " does not divide d_model " + std::to_string(cfg.d_model));
    const std::size_t factor_dim = cfg.d_model / learned.cols;
    const std::size_t factor_pos = std::max<std::size_t>(1, cfg.max_len / learned.rows);
    posenc::PEMatrix up =
        posenc::upsample_pe(learned, factor_pos, factor_dim, cfg.pe_smooth_window);

    posenc::PEMatrix pe;
    pe.rows = cfg.max_len;
    pe.cols = cfg.d_model;
    pe.source = "learned";
    pe.values.resize(pe.rows * pe.cols);
    posenc::PEMatrix sinus = posenc::sinusoidal_pe(cfg.max_len, cfg.d_model);
    std::size_t fallback_rows = 0;
    for (std::size_t r = 0; r < pe.rows; ++r)
        for (std::size_t c = 0; c < pe.cols; ++c) {
            if (r < up.rows) {
                pe.at(r, c) = up.at(r, c);
            } else {
                pe.at(r, c) = sinus.at(r, c);
                if (c == 0) ++fallback_rows;
            }
        }
    if (fallback_rows > 0)
        std::cerr << "[model] learned PE covers " << up.rows << " of " << cfg.max_len
                  << " positions; " << fallback_rows << " rows fall back to sinusoidal\n";
    return pe;
}

} // namespace

TransformerModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TransformerModel m;
    m.cfg = cfg;
    const double s = std::sqrt(1.0 / double(cfg.d_model));
    const std::size_t d = cfg.d_model;

    m.src_embed = keyed_uniform({cfg.src_vocab, d}, s, seed, "src_embed");
    m.tgt_embed = keyed_uniform({cfg.tgt_vocab, d}, s, seed, "tgt_embed");
    m.out_proj = keyed_uniform({d, cfg.tgt_vocab}, s, seed, "out_proj");
    m.pe = build_pe(cfg);

    if (cfg.norm_mode != nn::NormMode::original) {
        m.enc_norm_e = make_norm(d);
        m.dec_norm_e = make_norm(d);
        if (cfg.norm_mode == nn::NormMode::full) {
            m.enc_norm_p = make_norm(d);
            m.dec_norm_p = make_norm(d);
        }
    }

    auto make_mha = [&](const std::string& prefix) {
        nn::MhaParams p;
        p.heads = cfg.n_heads;
        p.wq = keyed_uniform({d, d}, s, seed, prefix + ".wq");
        p.wk = keyed_uniform({d, d}, s, seed, prefix + ".wk");
        p.wv = keyed_uniform({d, d}, s, seed, prefix + ".wv");
        p.wo = keyed_uniform({d, d}, s, seed, prefix + ".wo");
        return p;
    };

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string ep = "enc." + std::to_string(l);
        EncoderLayer e;
        e.self_attn = make_mha(ep + ".self");
        e.ffn_w1 = keyed_uniform({d, cfg.d_ff}, s, seed, ep + ".ffn.w1");
        e.ffn_w2 = keyed_uniform({cfg.d_ff, d}, s, seed, ep + ".ffn.w2");
        e.norm1 = make_norm(d);
        e.norm2 = make_norm(d);
        m.encoder.push_back(std::move(e));

        const std::string dp = "dec." + std::to_string(l);
        DecoderLayer dl;
        dl.self_attn = make_mha(dp + ".self");
        dl.cross_attn = make_mha(dp + ".cross");
        dl.ffn_w1 = keyed_uniform({d, cfg.d_ff}, s, seed, dp + ".ffn.w1");
        dl.ffn_w2 = keyed_uniform({cfg.d_ff, d}, s, seed, dp + ".ffn.w2");
        dl.norm1 = make_norm(d);
        dl.norm2 = make_norm(d);
        dl.norm3 = make_norm(d);
        m.decoder.push_back(std::move(dl));
    }
    return m;
}

std::map<std::string, Tensor> TransformerModel::parameters() const {
    std::map<std::string, Tensor> p;
    p["src_embed"] = src_embed;
    p["tgt_embed"] = tgt_embed;
    p["out_proj"] = out_proj;
    auto add_norm = [&](const std::string& prefix, const nn::LayerNormParams& n) {
        p[prefix + ".gamma"] = n.gamma;
        p[prefix + ".beta"] = n.beta;
    };
    if (cfg.norm_mode != nn::NormMode::original) {
        add_norm("enc.norm_e", enc_norm_e);
        add_norm("dec.norm_e", dec_norm_e);
        if (cfg.norm_mode == nn::NormMode::full) {
            add_norm("enc.norm_p", enc_norm_p);
            add_norm("dec.norm_p", dec_norm_p);
        }
    }
    auto add_mha = [&](const std::string& prefix, const nn::MhaParams& a) {
        p[prefix + ".wq"] = a.wq;
        p[prefix + ".wk"] = a.wk;
        p[prefix + ".wv"] = a.wv;
        p[prefix + ".wo"] = a.wo;
    };
    for (std::size_t l = 0; l < encoder.size(); ++l) {
        const std::string ep = "enc." + std::to_string(l);
        add_mha(ep + ".self", encoder[l].self_attn);
        p[ep + ".ffn.w1"] = encoder[l].ffn_w1;
        p[ep + ".ffn.w2"] = encoder[l].ffn_w2;
        add_norm(ep + ".norm1", encoder[l].norm1);
        add_norm(ep + ".norm2", encoder[l].norm2);
    }
    for (std::size_t l = 0; l < decoder.size(); ++l) {
        const std::string dp = "dec." + std::to_string(l);
        add_mha(dp + ".self", decoder[l].self_attn);
        add_mha(dp + ".cross", decoder[l].cross_attn);
        p[dp + ".ffn.w1"] = decoder[l].ffn_w1;
        p[dp + ".ffn.w2"] = decoder[l].ffn_w2;
        add_norm(dp + ".norm1", decoder[l].norm1);
        add_norm(dp + ".norm2", decoder[l].norm2);
        add_norm(dp + ".norm3", decoder[l].norm3);
    }
    return p;
}

namespace {

Tensor embed_ids(const Tensor& table, const std::vector<std::vector<int>>& ids,
                 std::size_t d) {
    const std::size_t b = ids.size();
    const std::size_t t = ids[0].size();
    std::vector<std::size_t> flat;
    flat.reserve(b * t);
    for (const auto& row : ids) {
        if (row.size() != t) throw ShapeError("ragged id batch");
        for (int id : row) {
            if (id < 0 || std::size_t(id) >= table.shape()[0])
                throw IndexError("token id out of range: " + std::to_string(id));
            flat.push_back(std::size_t(id));
        }
    }
    return reshape(gather_rows(table, flat), {b, t, d});
}

Tensor pe_slice(const posenc::PEMatrix& pe, std::size_t t) {
    std::vector<double> vals(pe.values.begin(), pe.values.begin() + long(t * pe.cols));
    return Tensor::from_data({t, pe.cols}, std::move(vals));
}

struct DropCtx {
    Rng* rng;
    double rate;
    Tensor operator()(const Tensor& x) const {
        return rng ? nn::dropout_apply(x, rate, *rng, true) : x;
    }
};

} // namespace

Tensor forward(const TransformerModel& m, const std::vector<std::vector<int>>& src_ids,
               const std::vector<std::vector<int>>& tgt_in_ids, Rng* dropout_rng,
               AttentionTrace* trace) {
    const ModelConfig& cfg = m.cfg;
    if (src_ids.empty() || tgt_in_ids.empty() || src_ids.size() != tgt_in_ids.size())
        throw ContractError("forward: batch sizes must match and be non-empty");
    const std::size_t ts = src_ids[0].size();
    const std::size_t tt = tgt_in_ids[0].size();
    if (ts == 0 || tt == 0) throw ContractError("forward: empty sequence");
    if (ts > cfg.max_len || tt > cfg.max_len)
        throw ContractError("forward: sequence longer than max_len");

    DropCtx drop{dropout_rng, cfg.dropout_rate};
    const double k = cfg.residual_k;

    const Tensor src_pad = nn::padding_mask(src_ids, PAD);
    const Tensor tgt_pad = nn::padding_mask(tgt_in_ids, PAD);

    // ---- encoder ----
    Tensor x = nn::prepare_inputs(embed_ids(m.src_embed, src_ids, cfg.d_model),
                                  pe_slice(m.pe, ts), cfg.norm_mode, m.enc_norm_e,
                                  m.enc_norm_p);
    x = drop(x);
    for (const EncoderLayer& layer : m.encoder) {
        nn::AttentionMaskSet masks;
        masks.padding = src_pad;
        x = nn::layer_norm(
            nn::residual_sublayer(
                x,
                [&](const Tensor& in) {
                    nn::AttentionResult r = nn::multi_head_attention(
                        in, in, layer.self_attn, masks, cfg.zero_masked_self_attn,
                        cfg.post_softmax_zero_variant);
                    if (trace) trace->encoder_self.push_back(r.weights);
                    return drop(r.out);
                },
                {k}),
            layer.norm1);
        x = nn::layer_norm(
            nn::residual_sublayer(
                x,
                [&](const Tensor& in) {
                    return drop(nn::position_wise_ffn(in, layer.ffn_w1, layer.ffn_w2));
                },
                {k}),
            layer.norm2);
    }

    // ---- decoder ----
    Tensor y = nn::prepare_inputs(embed_ids(m.tgt_embed, tgt_in_ids, cfg.d_model),
                                  pe_slice(m.pe, tt), cfg.norm_mode, m.dec_norm_e,
                                  m.dec_norm_p);
    y = drop(y);
    const Tensor causal = nn::causal_mask(tt);
    for (const DecoderLayer& layer : m.decoder) {
        nn::AttentionMaskSet self_masks;
        self_masks.padding = tgt_pad;
        self_masks.causal = causal;
        nn::AttentionMaskSet cross_masks;
        cross_masks.padding = src_pad;
        y = nn::layer_norm(
            nn::residual_sublayer(
                y,
                [&](const Tensor& in) {
                    nn::AttentionResult r = nn::multi_head_attention(
                        in, in, layer.self_attn, self_masks, cfg.zero_masked_self_attn,
                        cfg.post_softmax_zero_variant);
                    if (trace) trace->decoder_self.push_back(r.weights);
                    return drop(r.out);
                },
                {k}),
            layer.norm1);
        // cross-attention is never zero-masked
        y = nn::layer_norm(
            nn::residual_sublayer(
                y,
                [&](const Tensor& in) {
                    nn::AttentionResult r = nn::multi_head_attention(
                        in, x, layer.cross_attn, cross_masks, false, false);
                    if (trace) trace->decoder_cross.push_back(r.weights);
                    return drop(r.out);
                },
                {k}),
            layer.norm2);
        y = nn::layer_norm(
            nn::residual_sublayer(
                y,
                [&](const Tensor& in) {
                    return drop(nn::position_wise_ffn(in, layer.ffn_w1, layer.ffn_w2));
                },
                {k}),
            layer.norm3);
    }
    return matmul(y, m.out_proj);
}

std::vector<int> greedy_translate(const TransformerModel& m, const std::vector<int>& src_ids,
                                  std::size_t max_out_len) {
    if (src_ids.empty()) throw ContractError("greedy_translate: empty source");
    std::vector<int> out;
    std::vector<int> tgt = {BOS};
    for (std::size_t step = 0; step < max_out_len; ++step) {
        Tensor logits = forward(m, {src_ids}, {tgt});
        const std::size_t v = m.cfg.tgt_vocab;
        const std::size_t base = (tgt.size() - 1) * v; // last position
        const auto& d = logits.data();
        std::size_t best = 0;
        for (std::size_t i = 1; i < v; ++i)
            if (d[base + i] > d[base + best]) best = i; // strict: lowest id wins ties
        if (int(best) == EOS) break;
        out.push_back(int(best));
        tgt.push_back(int(best));
    }
    return out;
}

std::size_t count_parameters(const TransformerModel& m) {
    std::size_t n = 0;
    for (const auto& [name, t] : m.parameters()) n += t.size();
    return n;
}

std::size_t count_parameters(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model;
    std::size_t n = cfg.src_vocab * d + cfg.tgt_vocab * d + d * cfg.tgt_vocab;
    const std::size_t mha = 4 * d * d;
    const std::size_t ffn = 2 * d * cfg.d_ff;
    const std::size_t norm = 2 * d;
    n += cfg.n_layers * (mha + ffn + 2 * norm);           // encoder
    n += cfg.n_layers * (2 * mha + ffn + 3 * norm);       // decoder
    if (cfg.norm_mode == nn::NormMode::full) n += 4 * norm;
    else if (cfg.norm_mode == nn::NormMode::full_postsum) n += 2 * norm;
    return n;
}

AttentionTrace extract_attention(const TransformerModel& m, const std::vector<int>& src_ids,
                                 const std::vector<int>& tgt_ids) {
    AttentionTrace trace;
    forward(m, {src_ids}, {tgt_ids}, nullptr, &trace);
    return trace;
}

std::map<std::string, std::string> config_to_map(const ModelConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["model.name"] = cfg.name;
    kv["model.d_model"] = std::to_string(cfg.d_model);
    kv["model.n_layers"] = std::to_string(cfg.n_layers);
    kv["model.n_heads"] = std::to_string(cfg.n_heads);
    kv["model.d_ff"] = std::to_string(cfg.d_ff);
    std::ostringstream dr;
    dr << cfg.dropout_rate;
    kv["model.dropout"] = dr.str();
    kv["model.max_len"] = std::to_string(cfg.max_len);
    kv["model.src_vocab"] = std::to_string(cfg.src_vocab);
    kv["model.tgt_vocab"] = std::to_string(cfg.tgt_vocab);
    kv["model.norm_mode"] = nn::norm_mode_name(cfg.norm_mode);
    std::ostringstream rk;
    rk << cfg.residual_k;
    kv["model.residual_k"] = rk.str();
    kv["model.pe_mode"] = pe_mode_name(cfg.pe_mode);
    kv["model.pe_path"] = cfg.pe_path;
    kv["model.pe_smooth_window"] = std::to_string(cfg.pe_smooth_window);
    kv["model.zero_masked"] = cfg.zero_masked_self_attn ? "true" : "false";
    kv["model.post_softmax_zero"] = cfg.post_softmax_zero_variant ? "true" : "false";
    return kv;
}

ModelConfig config_from_map(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    };
    cfg.name = get("model.name");
    cfg.d_model = std::stoul(get("model.d_model"));
    cfg.n_layers = std::stoul(get("model.n_layers"));
    cfg.n_heads = std::stoul(get("model.n_heads"));
    cfg.d_ff = std::stoul(get("model.d_ff"));
    cfg.dropout_rate = std::stod(get("model.dropout"));
    cfg.max_len = std::stoul(get("model.max_len"));
    cfg.src_vocab = std::stoul(get("model.src_vocab"));
    cfg.tgt_vocab = std::stoul(get("model.tgt_vocab"));
    cfg.norm_mode = nn::parse_norm_mode(get("model.norm_mode"));
    cfg.residual_k = std::stod(get("model.residual_k"));
    cfg.pe_mode = parse_pe_mode(get("model.pe_mode"));
    cfg.pe_path = get("model.pe_path");
    cfg.pe_smooth_window = std::stoul(get("model.pe_smooth_window"));
    cfg.zero_masked_self_attn = get("model.zero_masked") == "true";
    cfg.post_softmax_zero_variant = get("model.post_softmax_zero") == "true";
    return cfg;
}

} // namespace et::model
