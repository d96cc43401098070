#include "et/trainer.hpp"

#include "et/checkpoint.hpp"
#include "et/errors.hpp"
#include "et/metrics.hpp"
#include "et/svg.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace et::trainer {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string s;
    for (const auto& t : toks) {
        if (!s.empty()) s += ' ';
        s += t;
    }
    return s;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

corpus::Vocabulary vocab_from_tokens(std::vector<std::string> tokens) {
    corpus::Vocabulary v;
    v.id_to_token = std::move(tokens);
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
        v.token_to_id[v.id_to_token[i]] = int(i);
    return v;
}

std::vector<metrics::Tokens> translate_corpus(const model::TransformerModel& m,
                                              const corpus::ParallelCorpus& split,
                                              const corpus::Vocabulary& v_src,
                                              const corpus::Vocabulary& v_tgt) {
    std::vector<metrics::Tokens> out;
    out.reserve(split.pairs.size());
    for (const auto& p : split.pairs) {
        std::vector<int> ids =
            model::greedy_translate(m, corpus::encode(v_src, p.src, true), m.cfg.max_len - 2);
        metrics::Tokens toks;
        for (int id : ids)
            if (id >= 0 && std::size_t(id) < v_tgt.size())
                toks.push_back(v_tgt.id_to_token[std::size_t(id)]);
        out.push_back(std::move(toks));
    }
    return out;
}

double evaluate_bleu(const model::TransformerModel& m, const corpus::ParallelCorpus& split,
                     const corpus::Vocabulary& v_src, const corpus::Vocabulary& v_tgt) {
    std::vector<metrics::Tokens> refs;
    refs.reserve(split.pairs.size());
    for (const auto& p : split.pairs) refs.push_back(p.tgt);
    return metrics::corpus_bleu(translate_corpus(m, split, v_src, v_tgt), refs);
}

} // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
}

TrainConfig TrainConfig::desk() {
    TrainConfig t;
    t.learning_rate = 3e-4;
    t.batch_size = 16;
    t.epochs = 200;
    t.eval_every = 10;
    return t;
}

void write_run_record_csv(const RunRecord& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,config,train_loss,test_bleu,avg_bleu_last100\n";
    for (const auto& row : r.rows)
        out << row.epoch << ',' << row.config << ',' << fmt_double(row.train_loss) << ','
            << fmt_double(row.test_bleu) << ',' << fmt_double(row.avg_bleu_last100) << '\n';
}

void save_training_checkpoint(const model::TransformerModel& m,
                              const optim::AdamState& adam,
                              const corpus::Vocabulary& v_src,
                              const corpus::Vocabulary& v_tgt, std::uint64_t rng_state,
                              std::size_t epoch, const std::string& path) {
    checkpoint::Checkpoint c;
    auto params = m.parameters();
    for (const auto& [name, t] : params) {
        c.tensors[name] = t;
        auto im = adam.m.find(name);
        if (im != adam.m.end())
            c.tensors["adam.m." + name] = Tensor::from_data(t.shape(), im->second);
        auto iv = adam.v.find(name);
        if (iv != adam.v.end())
            c.tensors["adam.v." + name] = Tensor::from_data(t.shape(), iv->second);
    }
    c.tensors["pe"] = Tensor::from_data({m.pe.rows, m.pe.cols}, m.pe.values);
    c.config = model::config_to_map(m.cfg);
    c.config["pe.source"] = m.pe.source;
    c.config["adam.step"] = std::to_string(adam.step);
    c.config["train.epoch"] = std::to_string(epoch);
    c.config["train.rng_state"] = std::to_string(rng_state);
    c.config["vocab.src"] = join_tokens(v_src.id_to_token);
    c.config["vocab.tgt"] = join_tokens(v_tgt.id_to_token);
    checkpoint::save(c, path);
}

LoadedTraining load_training_checkpoint(const std::string& path) {
    checkpoint::Checkpoint c = checkpoint::load(path);
    LoadedTraining lt;
    model::ModelConfig cfg = model::config_from_map(c.config);

    // rebuild without touching the PE file the config originally named;
    // the learned matrix travels inside the checkpoint
    model::ModelConfig build_cfg = cfg;
    build_cfg.pe_mode = model::PeMode::sinusoidal;
    build_cfg.pe_path.clear();
    lt.model = model::build_model(build_cfg, 0);
    lt.model.cfg = cfg;

    auto params = lt.model.parameters();
    for (auto& [name, t] : params) {
        auto it = c.tensors.find(name);
        if (it == c.tensors.end()) throw FormatError("checkpoint missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw FormatError("checkpoint tensor shape mismatch for " + name);
        t.data() = it->second.data();
        auto im = c.tensors.find("adam.m." + name);
        if (im != c.tensors.end()) lt.adam.m[name] = im->second.data();
        auto iv = c.tensors.find("adam.v." + name);
        if (iv != c.tensors.end()) lt.adam.v[name] = iv->second.data();
    }
    auto pe = c.tensors.find("pe");
    if (pe == c.tensors.end()) throw FormatError("checkpoint missing tensor pe");
    lt.model.pe.rows = pe->second.shape()[0];
    lt.model.pe.cols = pe->second.shape()[1];
    lt.model.pe.values = pe->second.data();
    lt.model.pe.source = c.config.count("pe.source") ? c.config.at("pe.source") : "sinusoidal";

    lt.adam.step = std::stoul(c.config.at("adam.step"));
    lt.epoch = std::stoul(c.config.at("train.epoch"));
    lt.rng_state = std::stoull(c.config.at("train.rng_state"));
    lt.v_src = vocab_from_tokens(split_ws(c.config.at("vocab.src")));
    lt.v_tgt = vocab_from_tokens(split_ws(c.config.at("vocab.tgt")));
    return lt;
}

TrainResult train_run(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                      const corpus::ParallelCorpus& train_split,
                      const corpus::ParallelCorpus& test_split,
                      const corpus::Vocabulary& v_src, const corpus::Vocabulary& v_tgt,
                      const std::string& resume_path) {
    mcfg.validate();
    tcfg.validate();
    if (train_split.pairs.empty()) throw TrainError("empty training split");

    TrainResult result;
    optim::AdamState adam;
    Rng rng = Rng::keyed(tcfg.seed, "train_loop");
    std::size_t start_epoch = 0;
    std::vector<double> bleu_history;

    if (resume_path.empty()) {
        result.model = model::build_model(mcfg, tcfg.seed);
    } else {
        LoadedTraining lt = load_training_checkpoint(resume_path);
        result.model = std::move(lt.model);
        adam = std::move(lt.adam);
        rng.set_state(lt.rng_state);
        start_epoch = lt.epoch;
        checkpoint::Checkpoint raw = checkpoint::load(resume_path);
        if (raw.config.count("train.bleu_history"))
            for (const std::string& s : split_ws(raw.config.at("train.bleu_history")))
                bleu_history.push_back(std::stod(s));
    }

    auto params = result.model.parameters();
    const bool eval_possible = !test_split.pairs.empty();
    double best_bleu = -1.0;
    std::size_t steps = 0;
    bool step_cap_hit = false;

    auto save_state = [&](std::size_t epoch, const std::string& path) {
        save_training_checkpoint(result.model, adam, v_src, v_tgt, rng.state(), epoch, path);
        // append the eval history so a resumed run reports the same
        // last-100 averages as an uninterrupted one
        checkpoint::Checkpoint c = checkpoint::load(path);
        std::string hist;
        for (double b : bleu_history) {
            if (!hist.empty()) hist += ' ';
            hist += fmt_double(b);
        }
        c.config["train.bleu_history"] = hist;
        checkpoint::save(c, path);
    };

    for (std::size_t epoch = start_epoch + 1; epoch <= tcfg.epochs && !step_cap_hit;
         ++epoch) {
        auto batches = corpus::make_batches(train_split, v_src, v_tgt, tcfg.batch_size, rng);
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (const corpus::Batch& b : batches) {
            if (tcfg.max_steps > 0 && steps >= tcfg.max_steps) {
                step_cap_hit = true;
                break;
            }
            std::vector<int> targets;
            for (const auto& row : b.tgt_out_ids)
                targets.insert(targets.end(), row.begin(), row.end());
            Rng* drop = result.model.cfg.dropout_rate > 0.0 ? &rng : nullptr;
            Tensor loss = cross_entropy_logits(
                model::forward(result.model, b.src_ids, b.tgt_in_ids, drop), targets,
                corpus::PAD_ID);
            const double lv = loss.item();
            if (std::isnan(lv))
                throw TrainError("NaN loss at epoch " + std::to_string(epoch));
            backward(loss);
            if (tcfg.grad_clip > 0.0) optim::clip_grad_norm(params, tcfg.grad_clip);
            optim::adam_step(params, adam, tcfg.learning_rate);
            loss_sum += lv;
            ++loss_count;
            ++steps;
        }
        if (loss_count == 0) break;

        const bool eval_now =
            eval_possible && (epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs ||
                              step_cap_hit);
        if (eval_now) {
            const double bleu = evaluate_bleu(result.model, test_split, v_src, v_tgt);
            bleu_history.push_back(bleu);
            RunRecordRow row;
            row.epoch = epoch;
            row.config = result.model.cfg.name;
            row.train_loss = loss_sum / double(loss_count);
            row.test_bleu = bleu;
            row.avg_bleu_last100 = metrics::running_average_last_k(bleu_history, 100);
            result.record.rows.push_back(row);
            if (bleu > best_bleu) {
                best_bleu = bleu;
                if (!tcfg.checkpoint_path.empty())
                    save_state(epoch, tcfg.checkpoint_path + ".best");
            }
        }
        if (!tcfg.checkpoint_path.empty() && (epoch == tcfg.epochs || step_cap_hit))
            save_state(epoch, tcfg.checkpoint_path);
    }

    result.best_bleu = best_bleu < 0.0 ? 0.0 : best_bleu;
    result.steps = steps;
    if (!tcfg.metrics_csv_path.empty())
        write_run_record_csv(result.record, tcfg.metrics_csv_path);
    return result;
}

namespace {

model::ModelConfig strip_toggles(model::ModelConfig cfg) {
    cfg.norm_mode = nn::NormMode::original;
    cfg.residual_k = 1.0;
    cfg.pe_mode = model::PeMode::sinusoidal;
    cfg.pe_path.clear();
    cfg.zero_masked_self_attn = false;
    cfg.post_softmax_zero_variant = false;
    return cfg;
}

} // namespace

std::vector<AblationRun> run_ablation(const model::ModelConfig& base,
                                      const TrainConfig& tcfg,
                                      const corpus::ParallelCorpus& train_split,
                                      const corpus::ParallelCorpus& test_split,
                                      const corpus::Vocabulary& v_src,
                                      const corpus::Vocabulary& v_tgt,
                                      const std::string& out_dir,
                                      const AblationOptions& opts) {
    std::filesystem::create_directories(out_dir);

    std::string pe_csv = opts.pe_csv;
    if (pe_csv.empty()) {
        Rng sac_rng = Rng::keyed(tcfg.seed, "ablation_sac");
        posenc::SacResult sr = posenc::sac_learn_pe(opts.pe_env, opts.sac, sac_rng);
        posenc::pe_export_heatmap(sr.best, out_dir + "/pe_learned");
        pe_csv = out_dir + "/pe_learned.csv";
    }

    const model::ModelConfig orig = strip_toggles(base);
    std::vector<AblationRun> runs;
    auto push = [&](const std::string& name, model::ModelConfig cfg) {
        cfg.name = name;
        AblationRun r;
        r.name = name;
        r.cfg = std::move(cfg);
        runs.push_back(std::move(r));
    };
    push("original", orig);
    {
        model::ModelConfig c = orig;
        c.norm_mode = nn::NormMode::full;
        push("full_layer_norm", c);
    }
    for (double k : {2.0, 3.0, 4.0, 5.0}) {
        model::ModelConfig c = orig;
        c.residual_k = k;
        push("residual_k" + std::to_string(int(k)), c);
    }
    {
        model::ModelConfig c = orig;
        c.pe_mode = model::PeMode::learned;
        c.pe_path = pe_csv;
        push("rl_pe", c);
    }
    {
        model::ModelConfig c = orig;
        c.zero_masked_self_attn = true;
        push("zero_mask", c);
    }
    {
        model::ModelConfig c = orig;
        c.norm_mode = nn::NormMode::full;
        c.residual_k = 4.0;
        c.pe_mode = model::PeMode::learned;
        c.pe_path = pe_csv;
        c.zero_masked_self_attn = true;
        push("combined", c);
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::string> failures(runs.size());
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= runs.size()) return;
            try {
                TrainConfig t = tcfg;
                t.checkpoint_path = out_dir + "/" + runs[i].name + ".etck";
                t.metrics_csv_path = out_dir + "/" + runs[i].name + ".csv";
                TrainResult res =
                    train_run(runs[i].cfg, t, train_split, test_split, v_src, v_tgt);
                runs[i].record = std::move(res.record);
                if (!runs[i].record.rows.empty())
                    runs[i].final_avg_bleu = runs[i].record.rows.back().avg_bleu_last100;
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, opts.threads);
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i + 1 < n_threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < runs.size(); ++i)
        if (!failures[i].empty())
            throw TrainError("ablation run '" + runs[i].name + "' failed: " + failures[i]);

    // merged CSV in enumeration order
    RunRecord merged;
    for (const auto& r : runs)
        merged.rows.insert(merged.rows.end(), r.record.rows.begin(), r.record.rows.end());
    write_run_record_csv(merged, out_dir + "/ablation.csv");

    std::vector<svg::Series> series;
    for (const auto& r : runs) {
        svg::Series s;
        s.label = r.name;
        for (const auto& row : r.record.rows)
            s.points.emplace_back(double(row.epoch), row.test_bleu * 100.0);
        series.push_back(std::move(s));
    }
    svg::write_line_chart(out_dir + "/ablation.svg", series, "test BLEU by configuration",
                          "epoch", "BLEU x100");

    std::ofstream manifest(out_dir + "/run-manifest.txt");
    if (!manifest) throw IoError("cannot write " + out_dir + "/run-manifest.txt");
    manifest << "runs=" << runs.size() << "\n";
    manifest << "seed=" << tcfg.seed << "\n";
    manifest << "epochs=" << tcfg.epochs << "\n";
    manifest << "learning_rate=" << fmt_double(tcfg.learning_rate) << "\n";
    manifest << "batch_size=" << tcfg.batch_size << "\n";
    manifest << "pe_csv=" << pe_csv << "\n";
    for (const auto& r : runs)
        manifest << "final_avg_bleu." << r.name << "=" << fmt_double(r.final_avg_bleu)
                 << "\n";
    return runs;
}

} // namespace et::trainer
