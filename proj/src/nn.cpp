#include "et/nn.hpp"

#include <cmath>
#include <limits>

namespace et::nn {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

LayerNormParams LayerNormParams::create(std::size_t d, double epsilon) {
    if (epsilon <= 0.0) throw ConfigError("layer norm epsilon must be > 0");
    LayerNormParams p;
    p.gamma = Tensor::full({d}, 1.0);
    p.beta = Tensor::zeros({d});
    p.epsilon = epsilon;
    return p;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
    if (x.shape().back() != p.gamma.shape()[0])
        throw ShapeError("layer_norm: feature dim " + std::to_string(x.shape().back()) +
                         " does not match params " + std::to_string(p.gamma.shape()[0]));
    auto [mean, var] = mean_var_lastdim(x);
    Tensor centered = sub(x, mean);
    Tensor denom = sqrt_op(add_scalar(var, p.epsilon));
    return add(mul(div(centered, denom), p.gamma), p.beta);
}

Tensor causal_mask(std::size_t t) {
    std::vector<double> m(t * t, 0.0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = kNegInf;
    return Tensor::from_data({1, 1, t, t}, std::move(m));
}

Tensor padding_mask(const std::vector<std::vector<int>>& ids, int pad_id) {
    const std::size_t b = ids.size();
    const std::size_t t = b ? ids[0].size() : 0;
    std::vector<double> m(b * t, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        if (ids[i].size() != t) throw ShapeError("padding_mask: ragged batch");
        for (std::size_t j = 0; j < t; ++j)
            if (ids[i][j] == pad_id) m[i * t + j] = kNegInf;
    }
    return Tensor::from_data({b, 1, 1, t}, std::move(m));
}

namespace {

// combined additive mask [B,1,Tq,Tk]; applies the zero-diagonal with the
// sole-key exemption when requested
Tensor combine_masks(const AttentionMaskSet& masks, std::size_t b, std::size_t tq,
                     std::size_t tk, bool zero_diag) {
    std::vector<double> m(b * tq * tk, 0.0);
    const double* pad = nullptr;
    if (masks.padding.defined()) {
        const Shape& s = masks.padding.shape();
        if (s != Shape{b, 1, 1, tk})
            throw ShapeError("padding mask shape " + shape_str(s) + " != expected [" +
                             std::to_string(b) + ",1,1," + std::to_string(tk) + "]");
        pad = masks.padding.data().data();
    }
    const double* cau = nullptr;
    if (masks.causal.defined()) {
        const Shape& s = masks.causal.shape();
        if (s != Shape{1, 1, tq, tk}) throw ShapeError("causal mask shape mismatch");
        cau = masks.causal.data().data();
    }
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t qi = 0; qi < tq; ++qi)
            for (std::size_t ki = 0; ki < tk; ++ki) {
                double v = 0.0;
                if (pad && pad[bi * tk + ki] == kNegInf) v = kNegInf;
                if (cau && cau[qi * tk + ki] == kNegInf) v = kNegInf;
                m[(bi * tq + qi) * tk + ki] = v;
            }
    if (zero_diag) {
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t qi = 0; qi < tq; ++qi) {
                double* row = m.data() + (bi * tq + qi) * tk;
                bool other_key = false;
                for (std::size_t ki = 0; ki < tk; ++ki)
                    if (ki != qi && row[ki] == 0.0) { other_key = true; break; }
                if (other_key) row[qi] = kNegInf; // exemption: sole key keeps itself
            }
    }
    return Tensor::from_data({b, 1, tq, tk}, std::move(m));
}

// multiplicative 0/1 diagonal mask for the post-softmax variant, same
// exemption rule
Tensor post_zero_mask(const Tensor& additive, std::size_t b, std::size_t t) {
    std::vector<double> m(b * t * t, 1.0);
    const auto& ad = additive.data();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t qi = 0; qi < t; ++qi) {
            const double* row = ad.data() + (bi * t + qi) * t;
            bool other_key = false;
            for (std::size_t ki = 0; ki < t; ++ki)
                if (ki != qi && row[ki] == 0.0) { other_key = true; break; }
            if (other_key) m[(bi * t + qi) * t + qi] = 0.0;
        }
    return Tensor::from_data({b, 1, t, t}, std::move(m));
}

} // namespace

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionMaskSet& masks, bool zero_masked,
                                     bool post_softmax_zero) {
    const Shape& sq = q.shape();
    const Shape& sk = k.shape();
    if (sq.size() != 4 || sk.size() != 4 || v.shape().size() != 4)
        throw ShapeError("scaled_dot_attention expects [B,h,T,d_k] tensors");
    const std::size_t b = sq[0], h = sq[1], tq = sq[2], dk = sq[3];
    const std::size_t tk = sk[2];
    if (zero_masked && tq != tk)
        throw ContractError("zero_masked requires self-attention (T_q == T_k)");

    Tensor scores = scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(double(dk)));
    const bool pre_zero = zero_masked && !post_softmax_zero;
    Tensor mask = combine_masks(masks, b, tq, tk, pre_zero);
    Tensor weights = softmax_lastdim(scores, mask);
    if (zero_masked && post_softmax_zero)
        weights = mul(weights, post_zero_mask(mask, b, tq));
    AttentionResult r;
    r.weights = weights;
    r.out = matmul(weights, v);
    (void)h;
    return r;
}

MhaParams MhaParams::create(std::size_t d_model, std::size_t heads, Rng& rng) {
    if (heads == 0 || d_model % heads != 0)
        throw ConfigError("d_model must be divisible by head count");
    const double s = std::sqrt(1.0 / double(d_model));
    MhaParams p;
    p.wq = Tensor::uniform({d_model, d_model}, -s, s, rng);
    p.wk = Tensor::uniform({d_model, d_model}, -s, s, rng);
    p.wv = Tensor::uniform({d_model, d_model}, -s, s, rng);
    p.wo = Tensor::uniform({d_model, d_model}, -s, s, rng);
    p.heads = heads;
    return p;
}

namespace {

// [B,T,d] -> [B,h,T,d_k]
Tensor split_heads(const Tensor& x, std::size_t h) {
    const Shape& s = x.shape();
    const std::size_t b = s[0], t = s[1], d = s[2];
    return transpose(reshape(x, {b, t, h, d / h}), 1, 2);
}

// [B,h,T,d_k] -> [B,T,d]
Tensor merge_heads(const Tensor& x) {
    const Shape& s = x.shape();
    const std::size_t b = s[0], h = s[1], t = s[2], dk = s[3];
    return reshape(transpose(x, 1, 2), {b, t, h * dk});
}

} // namespace

AttentionResult multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                                     const MhaParams& p, const AttentionMaskSet& masks,
                                     bool zero_masked, bool post_softmax_zero) {
    Tensor q = split_heads(matmul(x_q, p.wq), p.heads);
    Tensor k = split_heads(matmul(x_kv, p.wk), p.heads);
    Tensor v = split_heads(matmul(x_kv, p.wv), p.heads);
    AttentionResult att = scaled_dot_attention(q, k, v, masks, zero_masked, post_softmax_zero);
    AttentionResult r;
    r.weights = att.weights;
    r.out = matmul(merge_heads(att.out), p.wo);
    return r;
}

Tensor residual_sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                         const ResidualConfig& rc) {
    if (rc.k <= 0.0) throw ConfigError("residual weight k must be > 0");
    Tensor y = f(x);
    if (y.shape() != x.shape())
        throw ShapeError("residual sublayer changed shape " + shape_str(x.shape()) + " -> " +
                         shape_str(y.shape()));
    return add(y, scale(x, rc.k));
}

NormMode parse_norm_mode(const std::string& s) {
    if (s == "original") return NormMode::original;
    if (s == "full") return NormMode::full;
    if (s == "full_postsum") return NormMode::full_postsum;
    throw ConfigError("unknown norm mode: " + s);
}

std::string norm_mode_name(NormMode m) {
    switch (m) {
    case NormMode::original: return "original";
    case NormMode::full: return "full";
    case NormMode::full_postsum: return "full_postsum";
    }
    return "?";
}

Tensor prepare_inputs(const Tensor& token_embeddings, const Tensor& pe, NormMode mode,
                      const LayerNormParams& norm_e, const LayerNormParams& norm_p) {
    const Shape& se = token_embeddings.shape();
    const Shape& sp = pe.shape();
    if (se.size() != 3 || sp.size() != 2 || se[1] != sp[0] || se[2] != sp[1])
        throw ShapeError("prepare_inputs: embeddings " + shape_str(se) + " vs pe " +
                         shape_str(sp));
    switch (mode) {
    case NormMode::original:
        return add(token_embeddings, pe);
    case NormMode::full:
        return add(layer_norm(token_embeddings, norm_e), layer_norm(pe, norm_p));
    case NormMode::full_postsum:
        return layer_norm(add(token_embeddings, pe), norm_e);
    }
    throw ConfigError("bad norm mode");
}

Tensor position_wise_ffn(const Tensor& x, const Tensor& w1, const Tensor& w2) {
    return matmul(relu(matmul(x, w1)), w2);
}

Tensor dropout_apply(const Tensor& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double keep = 1.0 / (1.0 - rate);
    std::vector<double> m(x.size());
    for (auto& v : m) v = rng.next_unit() < rate ? 0.0 : keep;
    return mul(x, Tensor::from_data(x.shape(), std::move(m)));
}

} // namespace et::nn
