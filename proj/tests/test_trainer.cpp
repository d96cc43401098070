#include "doctest.h"

#include "et/checkpoint.hpp"
#include "et/errors.hpp"
#include "et/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace et;
using namespace et::trainer;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// tiny paired corpus: each source maps to its reversed target
corpus::ParallelCorpus tiny_corpus(std::size_t n) {
    static const std::vector<std::string> words = {"sun", "moon", "star", "tree",
                                                   "bird", "fish", "rock", "wind"};
    corpus::ParallelCorpus c;
    for (std::size_t i = 0; i < n; ++i) {
        corpus::Pair p;
        p.src = {words[i % 8], words[(i / 2) % 8], words[(i * 3 + 1) % 8],
                 words[(i * 5 + 2) % 8]};
        p.tgt = {p.src[3], p.src[2], p.src[1], p.src[0]};
        p.line = i + 1;
        c.pairs.push_back(std::move(p));
    }
    return c;
}

corpus::Vocabulary vocab_of(const corpus::ParallelCorpus& c) {
    std::vector<std::vector<std::string>> sents;
    for (const auto& p : c.pairs) {
        sents.push_back(p.src);
        sents.push_back(p.tgt);
    }
    return corpus::Vocabulary::build(sents, 1);
}

model::ModelConfig tiny_model(const corpus::Vocabulary& v) {
    model::ModelConfig cfg = model::ModelConfig::desk(v.size(), v.size());
    cfg.d_model = 32;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.max_len = 16;
    return cfg;
}

} // namespace

TEST_CASE("adam_step fixtures") {
    std::map<std::string, Tensor> params;
    Tensor w = Tensor::from_data({3}, {0.5, -0.25, 0.1});
    w.set_requires_grad();
    params["w"] = w;
    optim::AdamState st;

    // zero gradient: parameters unchanged, step still increments
    w.zero_grad();
    optim::adam_step(params, st, 0.01);
    CHECK(st.step == 1);
    CHECK(w.data() == std::vector<double>{0.5, -0.25, 0.1});

    // first step with a real gradient moves by about -lr*sign(g)
    std::map<std::string, Tensor> params2;
    Tensor u = Tensor::from_data({2}, {1.0, 1.0});
    u.set_requires_grad();
    params2["u"] = u;
    Tensor loss = sum_all(mul(u, Tensor::from_data({2}, {3.0, -0.5})));
    backward(loss);
    optim::AdamState st2;
    optim::adam_step(params2, st2, 0.01);
    CHECK(u.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(u.data()[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));

    // NaN gradient fails fast
    Tensor n = Tensor::from_data({1}, {1.0});
    n.set_requires_grad();
    std::map<std::string, Tensor> params3{{"n", n}};
    n.impl()->ensure_grad();
    n.impl()->grad[0] = std::nan("");
    optim::AdamState st3;
    CHECK_THROWS_AS(optim::adam_step(params3, st3, 0.01), TrainError);
}

TEST_CASE("clip_grad_norm") {
    Tensor a = Tensor::from_data({2}, {0.0, 0.0});
    a.set_requires_grad();
    a.zero_grad();
    a.impl()->grad = {3.0, 4.0}; // norm 5
    std::map<std::string, Tensor> params{{"a", a}};
    CHECK(optim::clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(a.grad()[1] == doctest::Approx(0.8));
    // under the cap: untouched
    a.impl()->grad = {0.3, 0.4};
    CHECK(optim::clip_grad_norm(params, 1.0) == doctest::Approx(0.5));
    CHECK(a.grad()[0] == doctest::Approx(0.3));
}

TEST_CASE("checkpoint container round trip and errors") {
    checkpoint::Checkpoint c;
    Rng rng(4);
    c.tensors["alpha"] = Tensor::uniform({3, 2}, -1, 1, rng);
    c.tensors["beta"] = Tensor::from_data({4}, {1e-300, -0.0, 3.5, 1.0 / 3.0});
    c.config["model.name"] = "x";
    c.config["adam.step"] = "17";
    checkpoint::save(c, "ckpt_a.etck");
    checkpoint::Checkpoint d = checkpoint::load("ckpt_a.etck");
    checkpoint::save(d, "ckpt_b.etck");
    CHECK(slurp("ckpt_a.etck") == slurp("ckpt_b.etck")); // byte-identical
    CHECK(d.tensors.at("beta").data() == c.tensors.at("beta").data());
    CHECK(d.config == c.config);

    // bad magic
    {
        std::ofstream out("ckpt_bad.etck", std::ios::binary);
        out << "NOPE" << std::string(16, '\0');
    }
    CHECK_THROWS_AS(checkpoint::load("ckpt_bad.etck"), FormatError);

    // version bump
    {
        std::string raw = slurp("ckpt_a.etck");
        raw[4] = char(99);
        std::ofstream out("ckpt_v99.etck", std::ios::binary);
        out << raw;
    }
    CHECK_THROWS_AS(checkpoint::load("ckpt_v99.etck"), FormatError);

    // truncation
    {
        std::string raw = slurp("ckpt_a.etck");
        raw.resize(raw.size() / 2);
        std::ofstream out("ckpt_trunc.etck", std::ios::binary);
        out << raw;
    }
    CHECK_THROWS_AS(checkpoint::load("ckpt_trunc.etck"), FormatError);

    for (const char* f : {"ckpt_a.etck", "ckpt_b.etck", "ckpt_bad.etck", "ckpt_v99.etck",
                          "ckpt_trunc.etck"})
        std::remove(f);
}

TEST_CASE("training checkpoint carries the full state inventory") {
    corpus::ParallelCorpus c = tiny_corpus(6);
    corpus::Vocabulary v = vocab_of(c);
    model::ModelConfig mcfg = tiny_model(v);
    TrainConfig tcfg = TrainConfig::desk();
    tcfg.epochs = 2;
    tcfg.eval_every = 1;
    tcfg.batch_size = 4;
    tcfg.checkpoint_path = "train_state.etck";
    TrainResult res = train_run(mcfg, tcfg, c, c, v, v);

    checkpoint::Checkpoint ck = checkpoint::load("train_state.etck");
    auto params = res.model.parameters();
    for (const auto& [name, t] : params) {
        REQUIRE(ck.tensors.count(name) == 1);
        CHECK(ck.tensors.at(name).data() == t.data());
        CHECK(ck.tensors.count("adam.m." + name) == 1);
        CHECK(ck.tensors.count("adam.v." + name) == 1);
    }
    CHECK(ck.tensors.size() == 3 * params.size() + 1); // + pe
    CHECK(ck.config.at("train.epoch") == "2");
    CHECK(ck.config.count("vocab.src") == 1);

    LoadedTraining lt = load_training_checkpoint("train_state.etck");
    CHECK(lt.epoch == 2);
    CHECK(lt.v_src.size() == v.size());
    CHECK(lt.v_src.id_to_token == v.id_to_token);
    auto lp = lt.model.parameters();
    for (const auto& [name, t] : params) CHECK(lp.at(name).data() == t.data());

    std::remove("train_state.etck");
    std::remove("train_state.etck.best");
}

TEST_CASE("resume matches the uninterrupted trajectory bit-exactly") {
    corpus::ParallelCorpus c = tiny_corpus(8);
    corpus::Vocabulary v = vocab_of(c);
    model::ModelConfig mcfg = tiny_model(v);

    TrainConfig full = TrainConfig::desk();
    full.epochs = 4;
    full.eval_every = 1;
    full.batch_size = 4;
    full.checkpoint_path = "resume_full.etck";
    TrainResult a = train_run(mcfg, full, c, c, v, v);

    TrainConfig half = full;
    half.epochs = 2;
    half.checkpoint_path = "resume_half.etck";
    train_run(mcfg, half, c, c, v, v);
    TrainConfig second = full;
    second.checkpoint_path = "resume_cont.etck";
    TrainResult b = train_run(mcfg, second, c, c, v, v, "resume_half.etck");

    auto pa = a.model.parameters();
    auto pb = b.model.parameters();
    for (const auto& [name, t] : pa) CHECK(pb.at(name).data() == t.data());

    // resumed record holds epochs 3..4 and matches the full run's tail,
    // including the running average that spans the boundary
    REQUIRE(a.record.rows.size() == 4);
    REQUIRE(b.record.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& ra = a.record.rows[2 + i];
        const auto& rb = b.record.rows[i];
        CHECK(ra.epoch == rb.epoch);
        CHECK(ra.train_loss == rb.train_loss);
        CHECK(ra.test_bleu == rb.test_bleu);
        CHECK(ra.avg_bleu_last100 == rb.avg_bleu_last100);
    }

    for (const char* f : {"resume_full.etck", "resume_full.etck.best", "resume_half.etck",
                          "resume_half.etck.best", "resume_cont.etck",
                          "resume_cont.etck.best"})
        std::remove(f);
}

TEST_CASE("csv format and rerun determinism") {
    corpus::ParallelCorpus c = tiny_corpus(6);
    corpus::Vocabulary v = vocab_of(c);
    model::ModelConfig mcfg = tiny_model(v);
    TrainConfig tcfg = TrainConfig::desk();
    tcfg.epochs = 3;
    tcfg.eval_every = 2; // rows at epochs 2 and 3 (last epoch always evaluates)
    tcfg.batch_size = 4;
    tcfg.metrics_csv_path = "run_a.csv";
    train_run(mcfg, tcfg, c, c, v, v);
    tcfg.metrics_csv_path = "run_b.csv";
    train_run(mcfg, tcfg, c, c, v, v);

    const std::string a = slurp("run_a.csv");
    CHECK(a == slurp("run_b.csv"));
    CHECK(a.rfind("epoch,config,train_loss,test_bleu,avg_bleu_last100\n", 0) == 0);
    std::istringstream lines(a);
    std::string line;
    std::getline(lines, line);
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        CHECK(line.rfind(rows == 0 ? "2,desk," : "3,desk,", 0) == 0);
        ++rows;
    }
    CHECK(rows == 2);
    std::remove("run_a.csv");
    std::remove("run_b.csv");
}

TEST_CASE("memorization: loss halves and bleu climbs on a tiny corpus") {
    corpus::ParallelCorpus c = tiny_corpus(8);
    corpus::Vocabulary v = vocab_of(c);
    model::ModelConfig mcfg = tiny_model(v);
    TrainConfig tcfg = TrainConfig::desk();
    tcfg.epochs = 500;
    tcfg.eval_every = 50;
    tcfg.batch_size = 8;
    tcfg.learning_rate = 1e-3;
    TrainResult res = train_run(mcfg, tcfg, c, c, v, v);
    REQUIRE(!res.record.rows.empty());
    const double first_loss = res.record.rows.front().train_loss;
    const double last_loss = res.record.rows.back().train_loss;
    CHECK(last_loss < 0.5 * first_loss);
    CHECK(res.best_bleu >= 0.9);
    // NaN-free, monotone epoch column
    for (std::size_t i = 1; i < res.record.rows.size(); ++i)
        CHECK(res.record.rows[i].epoch > res.record.rows[i - 1].epoch);
}

TEST_CASE("ablation smoke on a micro budget") {
    corpus::ParallelCorpus c = tiny_corpus(8);
    corpus::Vocabulary v = vocab_of(c);
    model::ModelConfig mcfg = tiny_model(v);
    TrainConfig tcfg = TrainConfig::desk();
    tcfg.epochs = 2;
    tcfg.eval_every = 1;
    tcfg.batch_size = 4;

    AblationOptions opts;
    opts.threads = 4;
    opts.pe_env.n_positions = 8;
    opts.pe_env.n_dims = 4;
    opts.sac.policy_hidden = 8;
    opts.sac.critic_hidden = 8;
    opts.sac.batch_size = 8;
    opts.sac.steps = 30;
    opts.sac.warmup = 10;

    const std::string dir = "ablation_test_out";
    std::filesystem::remove_all(dir);
    auto runs = run_ablation(mcfg, tcfg, c, c, v, v, dir, opts);

    REQUIRE(runs.size() == 9);
    const std::vector<std::string> names = {"original",    "full_layer_norm", "residual_k2",
                                            "residual_k3", "residual_k4",     "residual_k5",
                                            "rl_pe",       "zero_mask",       "combined"};
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(runs[i].name == names[i]);
        CHECK(std::isfinite(runs[i].final_avg_bleu));
        CHECK(runs[i].final_avg_bleu >= 0.0);
        CHECK(std::filesystem::exists(dir + "/" + names[i] + ".csv"));
        CHECK(std::filesystem::exists(dir + "/" + names[i] + ".etck"));
    }
    CHECK(runs[8].cfg.residual_k == 4.0);
    CHECK(runs[8].cfg.norm_mode == nn::NormMode::full);
    CHECK(runs[8].cfg.zero_masked_self_attn);
    CHECK(runs[8].cfg.pe_mode == model::PeMode::learned);

    CHECK(std::filesystem::exists(dir + "/ablation.csv"));
    CHECK(std::filesystem::exists(dir + "/ablation.svg"));
    CHECK(std::filesystem::exists(dir + "/run-manifest.txt"));
    CHECK(std::filesystem::exists(dir + "/pe_learned.csv"));

    // merged csv holds all 9 config names in order
    std::string merged = slurp(dir + "/ablation.csv");
    std::size_t pos = 0;
    for (const auto& n : names) {
        pos = merged.find("," + n + ",", pos);
        CHECK(pos != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
