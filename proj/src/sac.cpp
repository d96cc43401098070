#include "et/posenc.hpp"

#include "et/errors.hpp"
#include "et/optim.hpp"

#include <cmath>

namespace et::posenc {

namespace {

using Params = std::map<std::string, Tensor>;

Tensor param_init(Shape shape, std::size_t fan_in, Rng& rng) {
    const double s = std::sqrt(1.0 / double(fan_in));
    Tensor t = Tensor::uniform(std::move(shape), -s, s, rng);
    t.set_requires_grad();
    return t;
}

Tensor linear(const Tensor& x, const Params& p, const std::string& w, const std::string& b) {
    return add(matmul(x, p.at(w)), p.at(b));
}

struct PolicyOut {
    Tensor action; // [B,A], tanh-squashed
    Tensor logp;   // [B,1]
};

PolicyOut policy_forward(const Params& p, const Tensor& state, const Tensor& eps) {
    Tensor h = relu(linear(state, p, "w1", "b1"));
    h = relu(linear(h, p, "w2", "b2"));
    Tensor mu = linear(h, p, "wmu", "bmu");
    Tensor log_std = clamp_op(linear(h, p, "wls", "bls"), -5.0, 2.0);
    Tensor std = exp_op(log_std);
    Tensor u = add(mu, mul(std, eps));
    Tensor a = tanh_op(u);
    // log N(u; mu, std) - sum log(1 - a^2 + 1e-6), reparameterized
    Tensor z = div(sub(u, mu), std);
    Tensor term = scale(mul(z, z), -0.5);
    term = sub(term, log_std);
    term = add_scalar(term, -0.5 * std::log(2.0 * M_PI));
    term = sub(term, log_op(add_scalar(scale(mul(a, a), -1.0), 1.0 + 1e-6)));
    PolicyOut out;
    out.action = a;
    out.logp = sum_lastdim(term);
    return out;
}

Tensor critic_forward(const Params& c, const Tensor& state, const Tensor& action) {
    Tensor x = concat_lastdim(state, action);
    Tensor h = relu(linear(x, c, "w1", "b1"));
    h = relu(linear(h, c, "w2", "b2"));
    return linear(h, c, "w3", "b3"); // [B,1]
}

void zero_grads(Params& p) {
    for (auto& [k, t] : p) t.zero_grad();
}

} // namespace

SacResult sac_learn_pe(const PEEnvConfig& env, const SacConfig& sac, Rng& rng) {
    if (env.n_positions < 2) throw ConfigError("sac_learn_pe: n_positions must be >= 2");
    const std::size_t A = env.n_positions * env.n_dims;
    const std::size_t S = A; // state is the (fixed) flattened matrix slot
    const std::size_t H = sac.policy_hidden;
    const std::size_t HC = sac.critic_hidden;
    const double target_entropy =
        sac.target_entropy != 0.0 ? sac.target_entropy : -double(A);
    const double reward_scale = 0.1; // keeps critic targets O(1)

    Params policy;
    policy["w1"] = param_init({S, H}, S, rng);
    policy["b1"] = param_init({1, H}, S, rng);
    policy["w2"] = param_init({H, H}, H, rng);
    policy["b2"] = param_init({1, H}, H, rng);
    policy["wmu"] = param_init({H, A}, H, rng);
    policy["bmu"] = param_init({1, A}, H, rng);
    policy["wls"] = param_init({H, A}, H, rng);
    policy["bls"] = param_init({1, A}, H, rng);

    auto make_critic = [&](Params& c) {
        c["w1"] = param_init({S + A, HC}, S + A, rng);
        c["b1"] = param_init({1, HC}, S + A, rng);
        c["w2"] = param_init({HC, HC}, HC, rng);
        c["b2"] = param_init({1, HC}, HC, rng);
        c["w3"] = param_init({HC, 1}, HC, rng);
        c["b3"] = param_init({1, 1}, HC, rng);
    };
    Params critic1, critic2;
    make_critic(critic1);
    make_critic(critic2);

    Params alpha_group;
    Tensor log_alpha = Tensor::scalar(std::log(sac.init_alpha));
    log_alpha.set_requires_grad();
    alpha_group["log_alpha"] = log_alpha;

    optim::AdamState opt_pi, opt_c1, opt_c2, opt_a;

    // replay buffer: flat actions + rewards, ring
    std::vector<std::vector<double>> buf_a;
    std::vector<double> buf_r;
    std::size_t ring = 0;
    auto push = [&](std::vector<double> a, double r) {
        if (buf_a.size() < sac.replay_capacity) {
            buf_a.push_back(std::move(a));
            buf_r.push_back(r);
        } else {
            buf_a[ring] = std::move(a);
            buf_r[ring] = r;
            ring = (ring + 1) % sac.replay_capacity;
        }
    };

    SacResult result;
    result.best.rows = env.n_positions;
    result.best.cols = env.n_dims;
    result.best.source = "learned";
    result.best_reward = -1e300;

    const Tensor state1 = Tensor::zeros({1, S});
    const Tensor state_b = Tensor::zeros({sac.batch_size, S});

    for (std::size_t step = 0; step < sac.steps; ++step) {
        // ---- one-step episode ----
        std::vector<double> act(A);
        if (step < sac.warmup) {
            for (auto& v : act) v = rng.uniform(-1.0, 1.0);
        } else {
            Tensor eps = Tensor::zeros({1, A});
            for (auto& v : eps.data()) v = rng.normal();
            PolicyOut po = policy_forward(policy, state1, eps);
            act = po.action.data();
        }
        PEMatrix m;
        m.rows = env.n_positions;
        m.cols = env.n_dims;
        m.source = "learned";
        m.values = act;
        const double reward = pe_reward(m, env);
        if (std::isnan(reward)) throw TrainError("sac_learn_pe: NaN reward");
        result.trace.push_back(reward);
        if (reward > result.best_reward) {
            result.best_reward = reward;
            result.best.values = act;
        }
        push(std::move(act), reward);

        // ---- updates ----
        if (step + 1 < sac.warmup || buf_a.size() < sac.batch_size) continue;

        const std::size_t B = sac.batch_size;
        std::vector<double> ad(B * A), rd(B);
        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t idx = rng.next_u64() % buf_a.size();
            std::copy(buf_a[idx].begin(), buf_a[idx].end(), ad.begin() + i * A);
            rd[i] = buf_r[idx] * reward_scale;
        }
        Tensor actions = Tensor::from_data({B, A}, std::move(ad));
        Tensor rewards = Tensor::from_data({B, 1}, std::move(rd));

        // critic regression to the terminal reward (horizon 1, no bootstrap)
        for (auto* cp : {&critic1, &critic2}) {
            Tensor q = critic_forward(*cp, state_b, actions);
            Tensor d = sub(q, rewards);
            backward(mean_all(mul(d, d)));
            optim::adam_step(*cp, cp == &critic1 ? opt_c1 : opt_c2, sac.lr_critic);
        }

        // policy: maximize E[min Q - alpha log pi]
        Tensor eps = Tensor::zeros({B, A});
        for (auto& v : eps.data()) v = rng.normal();
        PolicyOut po = policy_forward(policy, state_b, eps);
        Tensor q1 = critic_forward(critic1, state_b, po.action);
        Tensor q2 = critic_forward(critic2, state_b, po.action);
        const double alpha = std::exp(log_alpha.item());
        Tensor pi_loss = mean_all(sub(scale(po.logp, alpha), minimum(q1, q2)));
        backward(pi_loss);
        optim::adam_step(policy, opt_pi, sac.lr_policy);
        zero_grads(critic1);
        zero_grads(critic2);

        // temperature: pull entropy toward the target
        double mean_logp = 0.0;
        for (double v : po.logp.data()) mean_logp += v;
        mean_logp /= double(B);
        Tensor a_loss = scale(log_alpha, -(mean_logp + target_entropy));
        backward(a_loss);
        optim::adam_step(alpha_group, opt_a, sac.lr_alpha);
        if (log_alpha.data()[0] < -10.0) log_alpha.data()[0] = -10.0;
        if (log_alpha.data()[0] > 5.0) log_alpha.data()[0] = 5.0;
    }
    return result;
}

} // namespace et::posenc
