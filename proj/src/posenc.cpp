#include "et/posenc.hpp"

#include "et/errors.hpp"
#include "et/svg.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace et::posenc {

Similarity parse_similarity(const std::string& s) {
    if (s == "cosine") return Similarity::cosine;
    if (s == "dot") return Similarity::dot;
    throw ConfigError("unknown similarity: " + s);
}

PEMatrix sinusoidal_pe(std::size_t max_positions, std::size_t d_model) {
    if (d_model % 2 != 0)
        throw ConfigError("sinusoidal_pe: d_model must be even, got " + std::to_string(d_model));
    PEMatrix p;
    p.rows = max_positions;
    p.cols = d_model;
    p.source = "sinusoidal";
    p.values.resize(max_positions * d_model);
    for (std::size_t pos = 0; pos < max_positions; ++pos)
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double angle =
                double(pos) / std::pow(10000.0, 2.0 * double(i) / double(d_model));
            p.at(pos, 2 * i) = std::sin(angle);
            p.at(pos, 2 * i + 1) = std::cos(angle);
        }
    return p;
}

namespace {

double row_dot(const PEMatrix& p, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) s += p.at(a, j) * p.at(b, j);
    return s;
}

double row_norm(const PEMatrix& p, std::size_t a) {
    return std::sqrt(row_dot(p, a, a));
}

} // namespace

double pe_reward(const PEMatrix& p, const PEEnvConfig& cfg) {
    if (p.rows < 2) throw ConfigError("pe_reward needs at least 2 positions");
    std::vector<double> norms;
    if (cfg.similarity == Similarity::cosine) {
        norms.resize(p.rows);
        for (std::size_t a = 0; a < p.rows; ++a) norms[a] = row_norm(p, a);
    }
    double total = 0.0;
    for (std::size_t a = 0; a < p.rows; ++a)
        for (std::size_t b = a + 1; b < p.rows; ++b) {
            double sim;
            if (cfg.similarity == Similarity::cosine) {
                sim = (norms[a] == 0.0 || norms[b] == 0.0)
                          ? 0.0
                          : row_dot(p, a, b) / (norms[a] * norms[b]);
            } else {
                sim = row_dot(p, a, b);
            }
            total += sim / double(b - a);
        }
    return total;
}

double pe_reward_bruteforce(const PEMatrix& p, const PEEnvConfig& cfg) {
    if (p.rows < 2) throw ConfigError("pe_reward needs at least 2 positions");
    double total = 0.0;
    for (std::size_t a = 0; a < p.rows; ++a)
        for (std::size_t b = a + 1; b < p.rows; ++b) {
            double sim;
            if (cfg.similarity == Similarity::cosine) {
                const double na = row_norm(p, a);
                const double nb = row_norm(p, b);
                sim = (na == 0.0 || nb == 0.0) ? 0.0 : row_dot(p, a, b) / (na * nb);
            } else {
                sim = row_dot(p, a, b);
            }
            total += sim / double(b - a);
        }
    return total;
}

std::vector<double> pe_reward_grad(const PEMatrix& p, const PEEnvConfig& cfg) {
    std::vector<double> grad(p.rows * p.cols, 0.0);
    std::vector<double> norms(p.rows);
    for (std::size_t a = 0; a < p.rows; ++a) norms[a] = row_norm(p, a);
    for (std::size_t a = 0; a < p.rows; ++a)
        for (std::size_t b = a + 1; b < p.rows; ++b) {
            const double w = 1.0 / double(b - a);
            if (cfg.similarity == Similarity::dot) {
                for (std::size_t j = 0; j < p.cols; ++j) {
                    grad[a * p.cols + j] += w * p.at(b, j);
                    grad[b * p.cols + j] += w * p.at(a, j);
                }
            } else {
                const double na = norms[a], nb = norms[b];
                if (na == 0.0 || nb == 0.0) continue; // clamped, zero subgradient
                const double d = row_dot(p, a, b);
                for (std::size_t j = 0; j < p.cols; ++j) {
                    grad[a * p.cols + j] +=
                        w * (p.at(b, j) / (na * nb) - d * p.at(a, j) / (na * na * na * nb));
                    grad[b * p.cols + j] +=
                        w * (p.at(a, j) / (na * nb) - d * p.at(b, j) / (nb * nb * nb * na));
                }
            }
        }
    return grad;
}

PEMatrix direct_ascent_pe(const PEEnvConfig& cfg, std::size_t steps, double lr, Rng& rng,
                          const PEMatrix* init) {
    PEMatrix p;
    p.rows = cfg.n_positions;
    p.cols = cfg.n_dims;
    p.source = "learned";
    if (init) {
        if (init->rows != p.rows || init->cols != p.cols)
            throw ConfigError("direct_ascent_pe: init shape mismatch");
        p.values = init->values;
    } else {
        p.values.resize(p.rows * p.cols);
        for (auto& v : p.values) v = rng.uniform(-0.1, 0.1);
    }
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> g = pe_reward_grad(p, cfg);
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            p.values[i] += lr * g[i];
            p.values[i] = std::min(1.0, std::max(-1.0, p.values[i]));
        }
    }
    return p;
}

PEMatrix upsample_pe(const PEMatrix& p, std::size_t factor_pos, std::size_t factor_dim,
                     std::size_t smooth_window) {
    if (factor_pos < 1 || factor_dim < 1)
        throw ConfigError("upsample_pe: factors must be >= 1");
    if (smooth_window % 2 == 0)
        throw ConfigError("upsample_pe: smooth window must be odd");
    PEMatrix rep;
    rep.rows = p.rows * factor_pos;
    rep.cols = p.cols * factor_dim;
    rep.source = p.source;
    rep.values.resize(rep.rows * rep.cols);
    for (std::size_t r = 0; r < rep.rows; ++r)
        for (std::size_t c = 0; c < rep.cols; ++c)
            rep.at(r, c) = p.at(r / factor_pos, c / factor_dim);
    if (smooth_window == 1) return rep;

    const long hw = long(smooth_window) / 2;
    PEMatrix out = rep;
    for (long r = 0; r < long(rep.rows); ++r)
        for (long c = 0; c < long(rep.cols); ++c) {
            double s = 0.0;
            for (long dr = -hw; dr <= hw; ++dr)
                for (long dc = -hw; dc <= hw; ++dc) {
                    // edge replication at boundaries
                    const long rr = std::min(long(rep.rows) - 1, std::max(0L, r + dr));
                    const long cc = std::min(long(rep.cols) - 1, std::max(0L, c + dc));
                    s += rep.at(std::size_t(rr), std::size_t(cc));
                }
            out.at(std::size_t(r), std::size_t(c)) =
                s / double(smooth_window * smooth_window);
        }
    return out;
}

void pe_save_csv(const PEMatrix& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    char buf[40];
    for (std::size_t r = 0; r < p.rows; ++r) {
        for (std::size_t c = 0; c < p.cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", p.at(r, c));
            out << (c ? "," : "") << buf;
        }
        out << '\n';
    }
}

PEMatrix pe_load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    PEMatrix p;
    p.source = "learned";
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t cols = 0;
        while (std::getline(ss, cell, ',')) {
            p.values.push_back(std::stod(cell));
            ++cols;
        }
        if (p.rows == 0) p.cols = cols;
        else if (cols != p.cols)
            throw FormatError("ragged CSV row in " + path);
        ++p.rows;
    }
    if (p.rows == 0) throw FormatError("empty PE CSV: " + path);
    return p;
}

void pe_export_heatmap(const PEMatrix& p, const std::string& stem, std::size_t cell_px) {
    pe_save_csv(p, stem + ".csv");
    svg::write_heatmap(stem + ".svg", p.values, p.rows, p.cols, -1.0, 1.0, cell_px);
}

} // namespace et::posenc
