// etlab: train / evaluate / translate / pe-learn / ablate / gradcheck /
// heatmap for the enhanced-transformer laboratory.
//
// exit codes: 0 success, 1 usage error, 2 data or config error,
// 3 runtime failure (including a failed gradient suite)

#include "CLI11.hpp"

#include "et/checkpoint.hpp"
#include "et/config.hpp"
#include "et/corpus.hpp"
#include "et/errors.hpp"
#include "et/metrics.hpp"
#include "et/model.hpp"
#include "et/nn.hpp"
#include "et/posenc.hpp"
#include "et/svg.hpp"
#include "et/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace et;

std::string schema_help() {
    std::string out = "Configuration keys (config file line or --<key> <value> override):\n";
    for (const auto& e : config::schema()) {
        out += "  " + e.key + " (default: " + (e.def.empty() ? "<empty>" : e.def) + ") " +
               e.desc + "\n";
    }
    return out;
}

// CLI11 handles the named flags; every remaining "--some.key value" pair
// is a config override validated against the schema
void apply_overrides(config::Settings& s, const std::vector<std::string>& extras) {
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0)
            throw CLI::ParseError("unexpected argument: " + key, 1);
        key = key.substr(2);
        if (i + 1 >= extras.size())
            throw CLI::ParseError("missing value for --" + key, 1);
        s.set(key, extras[++i]);
    }
}

struct CorpusBundle {
    corpus::ParallelCorpus train, test;
    corpus::Vocabulary v_src, v_tgt;
    corpus::LoadReport report;
};

CorpusBundle load_corpus(const config::Settings& s) {
    CorpusBundle b;
    Rng rng = Rng::keyed(s.get_u64("train.seed"), "corpus_split");
    const std::size_t max_len = s.get_size("model.max_len");
    const double ratio = s.get_double("train.split_ratio");
    if (!s.get("corpus.tsv").empty()) {
        std::tie(b.train, b.test) =
            corpus::load_parallel_tsv(s.get("corpus.tsv"), max_len, ratio, rng, &b.report);
    } else if (!s.get("corpus.src").empty() && !s.get("corpus.tgt").empty()) {
        std::tie(b.train, b.test) = corpus::load_parallel(
            s.get("corpus.src"), s.get("corpus.tgt"), max_len, ratio, rng, &b.report);
    } else {
        throw ConfigError("no corpus: set corpus.tsv or corpus.src + corpus.tgt");
    }
    std::vector<std::vector<std::string>> src_sents, tgt_sents;
    for (const auto& p : b.train.pairs) {
        src_sents.push_back(p.src);
        tgt_sents.push_back(p.tgt);
    }
    const std::size_t min_freq = s.get_size("train.min_freq");
    b.v_src = corpus::Vocabulary::build(src_sents, min_freq);
    b.v_tgt = corpus::Vocabulary::build(tgt_sents, min_freq);
    return b;
}

model::ModelConfig model_config_of(const config::Settings& s, std::size_t src_vocab,
                                   std::size_t tgt_vocab) {
    model::ModelConfig m;
    m.name = s.get("model.name");
    m.d_model = s.get_size("model.d_model");
    m.n_layers = s.get_size("model.n_layers");
    m.n_heads = s.get_size("model.n_heads");
    m.d_ff = s.get_size("model.d_ff");
    m.dropout_rate = s.get_double("model.dropout");
    m.max_len = s.get_size("model.max_len");
    m.src_vocab = src_vocab;
    m.tgt_vocab = tgt_vocab;
    m.norm_mode = nn::parse_norm_mode(s.get("model.norm_mode"));
    m.residual_k = s.get_double("model.residual_k");
    m.pe_mode = model::parse_pe_mode(s.get("model.pe_mode"));
    m.pe_path = s.get("model.pe_path");
    m.pe_smooth_window = s.get_size("model.pe_smooth_window");
    m.zero_masked_self_attn = s.get_bool("model.zero_masked");
    m.post_softmax_zero_variant = s.get_bool("model.post_softmax_zero");
    m.validate();
    return m;
}

trainer::TrainConfig train_config_of(const config::Settings& s) {
    trainer::TrainConfig t;
    t.learning_rate = s.get_double("train.lr");
    t.batch_size = s.get_size("train.batch_size");
    t.epochs = s.get_size("train.epochs");
    t.eval_every = s.get_size("train.eval_every");
    t.seed = s.get_u64("train.seed");
    t.grad_clip = s.get_double("train.grad_clip");
    t.max_steps = s.get_size("train.max_steps");
    t.validate();
    return t;
}

posenc::PEEnvConfig pe_env_of(const config::Settings& s) {
    posenc::PEEnvConfig e;
    e.n_positions = s.get_size("pe.env.n_positions");
    e.n_dims = s.get_size("pe.env.n_dims");
    e.similarity = posenc::parse_similarity(s.get("pe.env.similarity"));
    return e;
}

posenc::SacConfig sac_config_of(const config::Settings& s) {
    posenc::SacConfig c;
    c.policy_hidden = s.get_size("sac.policy_hidden");
    c.critic_hidden = s.get_size("sac.critic_hidden");
    c.lr_policy = c.lr_critic = c.lr_alpha = s.get_double("sac.lr");
    c.init_alpha = s.get_double("sac.init_alpha");
    c.target_entropy = s.get_double("sac.target_entropy");
    c.replay_capacity = s.get_size("sac.replay");
    c.batch_size = s.get_size("sac.batch_size");
    c.steps = s.get_size("sac.steps");
    c.warmup = s.get_size("sac.warmup");
    return c;
}

std::string make_out_dir(const config::Settings& s) {
    std::string dir = s.get("out.dir");
    if (dir.empty()) {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
        dir = s.get("model.name") + "-" + s.get("train.seed") + "-" + std::to_string(secs);
    }
    std::filesystem::create_directories(dir);
    return dir;
}

void write_manifest(const config::Settings& s, const std::string& dir) {
    std::ofstream out(dir + "/run-manifest.txt");
    if (!out) throw IoError("cannot write manifest in " + dir);
    for (const auto& [k, v] : s.values()) out << k << "=" << v << "\n";
}

trainer::LoadedTraining load_model_checkpoint(const std::string& path) {
    if (path.empty()) throw ConfigError("--checkpoint is required");
    return trainer::load_training_checkpoint(path);
}

// ---- subcommand bodies ----

int cmd_train(const config::Settings& s) {
    CorpusBundle b = load_corpus(s);
    const std::string dir = make_out_dir(s);
    write_manifest(s, dir);
    corpus::write_drop_report(b.report, dir + "/drop-report.csv");

    model::ModelConfig mcfg = model_config_of(s, b.v_src.size(), b.v_tgt.size());
    trainer::TrainConfig tcfg = train_config_of(s);
    tcfg.checkpoint_path = dir + "/model.etck";
    tcfg.metrics_csv_path = dir + "/metrics.csv";
    trainer::TrainResult res = trainer::train_run(mcfg, tcfg, b.train, b.test, b.v_src,
                                                  b.v_tgt);
    std::printf("trained %zu steps; best test BLEU %.4f; artifacts in %s\n", res.steps,
                res.best_bleu * 100.0, dir.c_str());
    return 0;
}

int cmd_evaluate(const config::Settings& s, const std::string& ckpt) {
    trainer::LoadedTraining lt = load_model_checkpoint(ckpt);
    CorpusBundle b = load_corpus(s);
    std::vector<metrics::Tokens> cands, refs;
    for (const auto& p : b.test.pairs) {
        std::vector<int> ids = model::greedy_translate(
            lt.model, corpus::encode(lt.v_src, p.src, true), lt.model.cfg.max_len - 2);
        metrics::Tokens toks;
        for (int id : ids)
            if (id >= 0 && std::size_t(id) < lt.v_tgt.size())
                toks.push_back(lt.v_tgt.id_to_token[std::size_t(id)]);
        cands.push_back(std::move(toks));
        refs.push_back(p.tgt);
    }
    const double bleu = metrics::corpus_bleu(cands, refs);
    std::printf("test BLEU %.4f over %zu pairs\n", bleu * 100.0, refs.size());
    return 0;
}

int cmd_translate(const std::string& ckpt, const std::string& input_path) {
    trainer::LoadedTraining lt = load_model_checkpoint(ckpt);
    std::ifstream file;
    if (!input_path.empty()) {
        file.open(input_path);
        if (!file) throw IoError("cannot read " + input_path);
    }
    std::istream& in = input_path.empty() ? std::cin : file;
    std::string line;
    while (std::getline(in, line)) {
        const std::vector<std::string> toks = corpus::tokenize(line);
        if (toks.empty()) {
            std::printf("\n");
            continue;
        }
        std::vector<int> ids = model::greedy_translate(
            lt.model, corpus::encode(lt.v_src, toks, true), lt.model.cfg.max_len - 2);
        std::printf("%s\n", corpus::decode(lt.v_tgt, ids).c_str());
    }
    return 0;
}

int cmd_pe_learn(const config::Settings& s, const std::string& out_stem) {
    posenc::PEEnvConfig env = pe_env_of(s);
    posenc::SacConfig sac = sac_config_of(s);
    Rng rng = Rng::keyed(s.get_u64("train.seed"), "pe_learn");
    posenc::SacResult res = posenc::sac_learn_pe(env, sac, rng);

    std::string stem = out_stem;
    if (stem.empty()) stem = make_out_dir(s) + "/pe_learned";
    if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".csv")
        stem.resize(stem.size() - 4);
    posenc::pe_export_heatmap(res.best, stem);
    {
        std::ofstream trace(stem + "_trace.csv");
        if (!trace) throw IoError("cannot write " + stem + "_trace.csv");
        trace << "step,reward\n";
        for (std::size_t i = 0; i < res.trace.size(); ++i) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", res.trace[i]);
            trace << i << ',' << buf << '\n';
        }
    }

    const double sin_reward =
        posenc::pe_reward(posenc::sinusoidal_pe(env.n_positions, env.n_dims), env);
    std::printf("learned reward %.6f, sinusoidal reward %.6f, ratio %.4f\n",
                res.best_reward, sin_reward,
                sin_reward != 0.0 ? res.best_reward / sin_reward : 0.0);
    std::printf("matrix: %s.csv, heatmap: %s.svg, trace: %s_trace.csv\n", stem.c_str(),
                stem.c_str(), stem.c_str());
    return 0;
}

int cmd_ablate(const config::Settings& s) {
    CorpusBundle b = load_corpus(s);
    const std::string dir = make_out_dir(s);
    write_manifest(s, dir);
    corpus::write_drop_report(b.report, dir + "/drop-report.csv");

    model::ModelConfig base = model_config_of(s, b.v_src.size(), b.v_tgt.size());
    trainer::TrainConfig tcfg = train_config_of(s);
    trainer::AblationOptions opts;
    opts.threads = s.get_size("train.threads");
    opts.pe_csv = s.get("model.pe_path");
    opts.pe_env = pe_env_of(s);
    opts.sac = sac_config_of(s);
    auto runs = trainer::run_ablation(base, tcfg, b.train, b.test, b.v_src, b.v_tgt, dir,
                                      opts);
    for (const auto& r : runs)
        std::printf("%-16s final avg BLEU %.4f\n", r.name.c_str(),
                    r.final_avg_bleu * 100.0);
    std::printf("artifacts in %s\n", dir.c_str());
    return 0;
}

double op_check(const char* name, double err, bool& ok) {
    std::printf("%-24s max rel err %.3e\n", name, err);
    if (err > 1e-4) ok = false;
    return err;
}

Tensor rand_t(Shape shape, Rng& rng) {
    Tensor t = Tensor::uniform(std::move(shape), -1.0, 1.0, rng);
    for (auto& v : t.data())
        if (std::abs(v) < 0.05) v += v < 0 ? -0.1 : 0.1; // stay off kinks
    return t;
}

int cmd_gradcheck() {
    bool ok = true;
    using F = std::function<Tensor(const std::vector<Tensor>&)>;
    struct OpCase {
        const char* name;
        std::vector<Shape> shapes;
        F f;
    };
    const std::vector<OpCase> cases = {
        {"add", {{2, 3}, {2, 3}}, [](const auto& in) { return sum_all(add(in[0], in[1])); }},
        {"sub+broadcast", {{2, 3}, {1, 3}}, [](const auto& in) { return sum_all(sub(in[0], in[1])); }},
        {"mul", {{2, 3}, {2, 3}}, [](const auto& in) { return sum_all(mul(in[0], in[1])); }},
        {"div", {{2, 3}, {2, 3}}, [](const auto& in) {
             return sum_all(div(in[0], add_scalar(mul(in[1], in[1]), 0.5)));
         }},
        {"minimum", {{2, 3}, {2, 3}}, [](const auto& in) { return sum_all(minimum(in[0], in[1])); }},
        {"scale+add_scalar", {{2, 3}}, [](const auto& in) {
             return sum_all(add_scalar(scale(in[0], 2.5), 0.75));
         }},
        {"relu", {{3, 4}}, [](const auto& in) { return sum_all(relu(in[0])); }},
        {"tanh", {{3, 4}}, [](const auto& in) { return sum_all(tanh_op(in[0])); }},
        {"exp", {{3, 4}}, [](const auto& in) { return sum_all(exp_op(in[0])); }},
        {"log", {{3, 4}}, [](const auto& in) {
             return sum_all(log_op(add_scalar(mul(in[0], in[0]), 0.5)));
         }},
        {"sqrt", {{3, 4}}, [](const auto& in) {
             return sum_all(sqrt_op(add_scalar(mul(in[0], in[0]), 0.5)));
         }},
        {"clamp", {{3, 4}}, [](const auto& in) { return sum_all(clamp_op(in[0], -0.5, 0.5)); }},
        {"matmul", {{2, 3}, {3, 4}}, [](const auto& in) { return sum_all(matmul(in[0], in[1])); }},
        {"matmul_batched", {{2, 2, 3}, {1, 3, 2}}, [](const auto& in) {
             return sum_all(matmul(in[0], in[1]));
         }},
        {"reshape+transpose", {{2, 6}}, [](const auto& in) {
             return sum_all(mul(transpose(reshape(in[0], {3, 4}), 0, 1),
                                transpose(reshape(in[0], {3, 4}), 0, 1)));
         }},
        {"concat_lastdim", {{2, 3}, {2, 2}}, [](const auto& in) {
             Tensor c = concat_lastdim(in[0], in[1]);
             return sum_all(mul(c, c));
         }},
        {"mean_all", {{3, 4}}, [](const auto& in) { return mean_all(mul(in[0], in[0])); }},
        {"sum_lastdim", {{3, 4}}, [](const auto& in) {
             return sum_all(mul(sum_lastdim(in[0]), sum_lastdim(in[0])));
         }},
        {"mean_var_lastdim", {{3, 4}}, [](const auto& in) {
             auto [mean, var] = mean_var_lastdim(in[0]);
             return sum_all(add(mean, var));
         }},
        {"softmax_lastdim", {{3, 4}}, [](const auto& in) {
             Tensor w = softmax_lastdim(in[0]);
             return sum_all(mul(w, w));
         }},
        {"gather_rows", {{5, 3}}, [](const auto& in) {
             Tensor g = gather_rows(in[0], {0, 2, 2, 4});
             return sum_all(mul(g, g));
         }},
        {"layer_norm", {{2, 6}}, [](const auto& in) {
             nn::LayerNormParams p = nn::LayerNormParams::create(6, 1e-8);
             // per-entry weights break the row symmetry that would
             // otherwise make the summed output constant
             std::vector<double> w(12);
             for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * double(i + 1);
             Tensor y = nn::layer_norm(in[0], p);
             return sum_all(mul(y, Tensor::from_data({2, 6}, w)));
         }},
        {"attention", {{1, 1, 3, 4}, {1, 1, 3, 4}, {1, 1, 3, 4}}, [](const auto& in) {
             auto r = nn::scaled_dot_attention(in[0], in[1], in[2], {}, false);
             return sum_all(mul(r.out, r.out));
         }},
        {"attention_zero_masked", {{1, 2, 3, 4}, {1, 2, 3, 4}, {1, 2, 3, 4}},
         [](const auto& in) {
             auto r = nn::scaled_dot_attention(in[0], in[1], in[2], {}, true);
             return sum_all(mul(r.out, r.out));
         }},
        {"residual_sublayer_k4", {{2, 4}}, [](const auto& in) {
             return sum_all(nn::residual_sublayer(in[0], [](const Tensor& x) {
                 return tanh_op(x);
             }, {4.0}));
         }},
        {"position_wise_ffn", {{2, 3, 4}, {4, 6}, {6, 4}}, [](const auto& in) {
             return sum_all(nn::position_wise_ffn(in[0], in[1], in[2]));
         }},
        {"cross_entropy_logits", {{2, 3, 5}}, [](const auto& in) {
             return cross_entropy_logits(in[0], {1, 2, 0, 4, 3, 0}, 0);
         }},
    };

    for (const auto& c : cases) {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            Rng rng(seed * 977 + 11);
            std::vector<Tensor> inputs;
            for (const auto& sh : c.shapes) inputs.push_back(rand_t(sh, rng));
            worst = std::max(worst, grad_check(c.f, inputs, 1e-5));
        }
        op_check(c.name, worst, ok);
    }

    // end-to-end micro model, all 16 toggle combinations
    const std::vector<std::vector<int>> SRC = {{4, 5, 6, 2}, {4, 7, 2, 0}};
    const std::vector<std::vector<int>> TGT = {{1, 5, 6}, {1, 8, 0}};
    const std::vector<int> OUT = {5, 6, 2, 8, 2, 0};
    double worst_model = 0.0;
    for (int combo = 0; combo < 16; ++combo) {
        model::ModelConfig cfg = model::ModelConfig::desk(10, 10);
        cfg.d_model = 8;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.max_len = 8;
        cfg.norm_mode = (combo & 1) ? nn::NormMode::full : nn::NormMode::original;
        cfg.residual_k = (combo & 2) ? 4.0 : 1.0;
        cfg.zero_masked_self_attn = (combo & 4) != 0;
        cfg.post_softmax_zero_variant = (combo & 8) != 0 && cfg.zero_masked_self_attn;
        model::TransformerModel m = model::build_model(cfg, 31);
        auto params = m.parameters();
        std::vector<Tensor> probe = {
            params.at("src_embed"),     params.at("out_proj"),
            params.at("enc.0.self.wq"), params.at("dec.0.cross.wo"),
            params.at("dec.0.ffn.w1"),  params.at("enc.0.norm2.gamma"),
            params.at("dec.0.norm3.beta")};
        if (cfg.norm_mode == nn::NormMode::full) {
            probe.push_back(params.at("enc.norm_p.gamma"));
            probe.push_back(params.at("dec.norm_e.beta"));
        }
        auto f = [&](const std::vector<Tensor>&) {
            return cross_entropy_logits(model::forward(m, SRC, TGT), OUT, 0);
        };
        worst_model = std::max(worst_model, grad_check(f, probe, 1e-4));
    }
    op_check("model_16_combos", worst_model, ok);

    std::printf(ok ? "gradient suite PASS\n" : "gradient suite FAIL\n");
    return ok ? 0 : 3;
}

int cmd_heatmap(const config::Settings& s, const std::string& ckpt,
                const std::string& sentence) {
    trainer::LoadedTraining lt = load_model_checkpoint(ckpt);
    const std::string dir = make_out_dir(s);

    const std::vector<std::string> toks = corpus::tokenize(sentence);
    if (toks.empty()) throw ConfigError("empty sentence");
    std::vector<int> src = corpus::encode(lt.v_src, toks, true);
    std::vector<int> out = model::greedy_translate(lt.model, src, lt.model.cfg.max_len - 2);
    std::vector<int> tgt = {1};
    tgt.insert(tgt.end(), out.begin(), out.end());

    model::AttentionTrace tr = model::extract_attention(lt.model, src, tgt);
    std::size_t files = 0;
    for (std::size_t l = 0; l < tr.encoder_self.size(); ++l) {
        const Tensor& w = tr.encoder_self[l]; // [1,h,T,T]
        const Shape& sh = w.shape();
        for (std::size_t h = 0; h < sh[1]; ++h) {
            std::vector<double> cells(sh[2] * sh[3]);
            for (std::size_t q = 0; q < sh[2]; ++q)
                for (std::size_t k = 0; k < sh[3]; ++k)
                    cells[q * sh[3] + k] = w.at({0, h, q, k});
            svg::write_heatmap(dir + "/enc_l" + std::to_string(l) + "_h" +
                                   std::to_string(h) + ".svg",
                               cells, sh[2], sh[3], 0.0, 1.0);
            ++files;
        }
    }
    svg::write_heatmap(dir + "/pe.svg", lt.model.pe.values, lt.model.pe.rows,
                       lt.model.pe.cols, -1.0, 1.0, 2);
    std::printf("wrote %zu attention heatmaps + pe.svg to %s\n", files, dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"enhanced-transformer laboratory"};
    app.footer(schema_help());
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, input_path, sentence, out_stem;

    CLI::App* train = app.add_subcommand("train", "train a model, write CSV + checkpoint");
    CLI::App* evaluate = app.add_subcommand("evaluate", "BLEU of a checkpoint on the test split");
    CLI::App* translate = app.add_subcommand("translate", "greedy-translate lines to stdout");
    CLI::App* pe_learn = app.add_subcommand("pe-learn", "learn a positional encoding matrix");
    CLI::App* ablate = app.add_subcommand("ablate", "run the nine-configuration study");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "run the full gradient suite");
    CLI::App* heatmap = app.add_subcommand("heatmap", "export attention + PE heatmaps");

    for (CLI::App* sub : {train, evaluate, translate, pe_learn, ablate, heatmap}) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->allow_extras();
    }
    evaluate->add_option("--checkpoint", checkpoint_path, "model checkpoint");
    translate->add_option("--checkpoint", checkpoint_path, "model checkpoint");
    heatmap->add_option("--checkpoint", checkpoint_path, "model checkpoint");
    translate->add_option("--input", input_path, "input file (default: stdin)");
    heatmap->add_option("--sentence", sentence, "sentence to visualize")->required();
    pe_learn->add_option("--out", out_stem, "output stem for .csv/.svg/_trace.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        config::Settings s = config::Settings::defaults();
        CLI::App* sub = app.get_subcommands().front();
        if (!config_path.empty()) s.load_file(config_path);
        apply_overrides(s, sub->remaining());

        if (sub == train) return cmd_train(s);
        if (sub == evaluate) return cmd_evaluate(s, checkpoint_path);
        if (sub == translate) return cmd_translate(checkpoint_path, input_path);
        if (sub == pe_learn) return cmd_pe_learn(s, out_stem);
        if (sub == ablate) return cmd_ablate(s);
        if (sub == gradcheck) return cmd_gradcheck();
        if (sub == heatmap) return cmd_heatmap(s, checkpoint_path, sentence);
        return 1;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CorpusError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
