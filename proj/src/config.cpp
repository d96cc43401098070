#include "et/config.hpp"

#include "et/errors.hpp"

#include <fstream>

namespace et::config {

const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> s = {
        {"model.name", "original", "configuration label used in CSV rows"},
        {"model.d_model", "512", "embedding / hidden width"},
        {"model.n_layers", "6", "encoder and decoder layer count"},
        {"model.n_heads", "8", "attention heads"},
        {"model.d_ff", "2048", "feed-forward inner width"},
        {"model.dropout", "0.2", "dropout rate in [0,1)"},
        {"model.max_len", "256", "maximum sequence length incl. BOS/EOS"},
        {"model.norm_mode", "original", "original | full | full_postsum"},
        {"model.residual_k", "1", "residual weight k in H(x)=F(x)+kx"},
        {"model.pe_mode", "sinusoidal", "sinusoidal | learned"},
        {"model.pe_path", "", "CSV matrix for learned positional encoding"},
        {"model.pe_smooth_window", "3", "odd box-filter width for PE upsampling"},
        {"model.zero_masked", "false", "zero the self-attention diagonal"},
        {"model.post_softmax_zero", "false", "zero the diagonal after softmax instead"},
        {"train.lr", "1e-05", "Adam learning rate"},
        {"train.batch_size", "128", "sentence pairs per optimizer step"},
        {"train.epochs", "1000", "training epochs"},
        {"train.eval_every", "1", "epochs between BLEU evaluations"},
        {"train.seed", "1", "seed for init, shuffling, and splits"},
        {"train.grad_clip", "5", "global gradient-norm cap, 0 disables"},
        {"train.max_steps", "0", "optimizer-step cap, 0 = none"},
        {"train.min_freq", "2", "vocabulary frequency threshold"},
        {"train.split_ratio", "0.8", "train fraction of the corpus"},
        {"train.threads", "1", "parallel workers for the ablation runner"},
        {"corpus.tsv", "", "parallel corpus as source TAB target lines"},
        {"corpus.src", "", "source-side corpus file (with corpus.tgt)"},
        {"corpus.tgt", "", "target-side corpus file (with corpus.src)"},
        {"pe.env.n_positions", "16", "positions in the PE learning environment"},
        {"pe.env.n_dims", "8", "dimensions per position vector"},
        {"pe.env.similarity", "cosine", "cosine | dot pairwise similarity"},
        {"pe.ascent_steps", "500", "gradient-ascent steps for the baseline learner"},
        {"pe.ascent_lr", "0.05", "gradient-ascent step size"},
        {"sac.policy_hidden", "64", "policy network hidden width"},
        {"sac.critic_hidden", "64", "critic network hidden width"},
        {"sac.lr", "0.0003", "actor, critic, and temperature learning rate"},
        {"sac.init_alpha", "0.2", "initial entropy temperature"},
        {"sac.target_entropy", "0", "entropy target, 0 = -action_dim"},
        {"sac.replay", "20000", "replay buffer capacity"},
        {"sac.batch_size", "64", "replay samples per update"},
        {"sac.steps", "1500", "environment episodes"},
        {"sac.warmup", "64", "uniform-random episodes before updates"},
        {"out.dir", "", "output directory; default <config>-<seed>-<timestamp>"},
    };
    return s;
}

Settings Settings::defaults() {
    Settings s;
    for (const auto& e : schema()) s.kv_[e.key] = e.def;
    return s;
}

bool Settings::known(const std::string& key) const { return kv_.count(key) == 1; }

void Settings::set(const std::string& key, const std::string& value) {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown config key: " + key);
    it->second = value;
}

void Settings::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        std::size_t vs = 0;
        while (vs < value.size() && (value[vs] == ' ' || value[vs] == '\t')) ++vs;
        value = value.substr(vs);
        try {
            set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

const std::string& Settings::get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

double Settings::get_double(const std::string& key) const {
    try {
        std::size_t pos = 0;
        const double v = std::stod(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not a number: '" + get(key) + "'");
    }
}

std::size_t Settings::get_size(const std::string& key) const {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument(key);
        return std::size_t(v);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an integer: '" + get(key) + "'");
    }
}

std::uint64_t Settings::get_u64(const std::string& key) const {
    return std::uint64_t(get_size(key));
}

bool Settings::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: '" + v + "'");
}

} // namespace et::config
