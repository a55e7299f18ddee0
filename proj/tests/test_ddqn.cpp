#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tslim/ddqn.hpp"
#include "tslim/qnet.hpp"
#include "tslim/rng.hpp"

using namespace tslim;

namespace {

// tabular MDP: transition[s][a] = next state, reward[s][a], terminal flag
struct ToyMdp {
    int n_states = 0, n_actions = 0;
    std::vector<std::vector<int>> next;
    std::vector<std::vector<double>> reward;
    std::vector<bool> terminal;

    // Q* by value iteration
    std::vector<std::vector<double>> optimal_q(double gamma) const {
        std::vector<std::vector<double>> q(n_states, std::vector<double>(n_actions, 0.0));
        for (int sweep = 0; sweep < 10000; ++sweep) {
            double delta = 0.0;
            for (int s = 0; s < n_states; ++s) {
                if (terminal[s]) continue;
                for (int a = 0; a < n_actions; ++a) {
                    const int s2 = next[s][a];
                    double mx = 0.0;
                    if (!terminal[s2]) {
                        mx = q[s2][0];
                        for (int a2 = 1; a2 < n_actions; ++a2) mx = std::max(mx, q[s2][a2]);
                    }
                    const double target = reward[s][a] + gamma * mx;
                    delta = std::max(delta, std::abs(target - q[s][a]));
                    q[s][a] = target;
                }
            }
            if (delta < 1e-12) break;
        }
        return q;
    }
};

ToyMdp two_state_mdp() {
    // staying in the second state pays best; switching costs nothing
    ToyMdp m;
    m.n_states = 2;
    m.n_actions = 2;
    m.next = {{0, 1}, {0, 1}};
    m.reward = {{0.0, 1.0}, {0.0, 2.0}};
    m.terminal = {false, false};
    return m;
}

ToyMdp chain_mdp() {
    // four states in a row, the goal at the right end pays on arrival
    ToyMdp m;
    m.n_states = 4;
    m.n_actions = 2;  // 0 = left, 1 = right
    m.next.assign(4, {0, 0});
    m.reward.assign(4, {0.0, 0.0});
    m.terminal = {false, false, false, true};
    for (int s = 0; s < 4; ++s) {
        m.next[s][0] = std::max(0, s - 1);
        m.next[s][1] = std::min(3, s + 1);
    }
    m.reward[2][1] = 1.0;
    return m;
}

class MdpEnv final : public Environment {
public:
    MdpEnv(const ToyMdp& m, int max_steps) : mdp_(m), max_steps_(max_steps) {}
    int state_dim() const override { return mdp_.n_states; }
    int n_actions() const override { return mdp_.n_actions; }
    std::vector<double> reset() override {
        s_ = 0;
        steps_ = 0;
        return one_hot(s_);
    }
    Step step(int a) override {
        const int s2 = mdp_.next[s_][a];
        Step out;
        out.reward = mdp_.reward[s_][a];
        out.done = mdp_.terminal[s2] || ++steps_ >= max_steps_;
        s_ = s2;
        out.state = one_hot(s_);
        return out;
    }

private:
    std::vector<double> one_hot(int s) const {
        std::vector<double> v(static_cast<std::size_t>(mdp_.n_states), 0.0);
        v[static_cast<std::size_t>(s)] = 1.0;
        return v;
    }
    ToyMdp mdp_;
    int max_steps_;
    int s_ = 0, steps_ = 0;
};

}  // namespace

TEST_CASE("backpropagation matches central finite differences") {
    Rng rng(99);
    QNet net(6, 12, {16, 16}, 4242);

    // a fixed batch of random probes
    std::vector<std::vector<double>> xs;
    std::vector<QNet::Sample> batch;
    for (int i = 0; i < 8; ++i) {
        std::vector<double> x(6);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        xs.push_back(std::move(x));
    }
    for (int i = 0; i < 8; ++i) {
        batch.push_back({&xs[i], static_cast<int>(rng.below(12)), rng.uniform(-1.0, 1.0)});
    }

    std::vector<double> grad;
    net.loss_and_gradient(batch, grad);
    auto params = net.params_flat();

    const auto loss_at = [&](const std::vector<double>& p) {
        QNet probe = net;
        probe.set_params_flat(p);
        std::vector<double> unused;
        return probe.loss_and_gradient(batch, unused);
    };

    const double h = 1e-6;
    int checked = 0;
    for (int probe = 0; probe < 50; ++probe) {
        const std::size_t idx = rng.below(params.size());
        auto plus = params, minus = params;
        plus[idx] += h;
        minus[idx] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        const double scale = std::max({1e-6, std::abs(fd), std::abs(grad[idx])});
        CHECK(std::abs(fd - grad[idx]) / scale < 1e-5);
        ++checked;
    }
    CHECK(checked == 50);
}

TEST_CASE("training drives a single-sample output to its target") {
    // zero discount, one repeated transition, reward one
    std::vector<double> x{1.0, 0.0};
    QNet net(2, 2, {8}, 7);
    for (int it = 0; it < 4000; ++it) {
        std::vector<QNet::Sample> batch{{&x, 0, 1.0}};
        net.train_batch(batch, 0.05);
    }
    CHECK(net.q_value(x, 0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("tabular update converges to its fixed point") {
    TabularDoubleQ q(2, 2);
    for (int it = 0; it < 200; ++it) {
        q.update(0, 1, 1.0, 1, true, 0.5, 0.0, 10);
    }
    CHECK(q.a(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("tabular argmax matches value iteration on finite problems") {
    for (const ToyMdp& mdp : {two_state_mdp(), chain_mdp()}) {
        const double gamma = 0.9;
        const auto q_star = mdp.optimal_q(gamma);

        TabularDoubleQ q(mdp.n_states, mdp.n_actions);
        Rng rng(31337);
        int s = 0;
        for (long long it = 0; it < 200000; ++it) {
            // decaying step size under persistent exploration
            const double alpha = 1.0 / (1.0 + 1e-4 * static_cast<double>(it));
            const int a = static_cast<int>(rng.below(mdp.n_actions));
            const int s2 = mdp.next[s][a];
            q.update(s, a, mdp.reward[s][a], s2, mdp.terminal[s2], alpha, gamma, 50);
            s = mdp.terminal[s2] ? 0 : s2;
        }
        for (int st = 0; st < mdp.n_states; ++st) {
            if (mdp.terminal[st]) continue;
            int oracle = 0;
            for (int a = 1; a < mdp.n_actions; ++a) {
                if (q_star[st][a] > q_star[st][oracle]) oracle = a;
            }
            CHECK(q.greedy(st) == oracle);
        }
    }
}

TEST_CASE("trained network policy matches value iteration over five seeds") {
    for (const ToyMdp& mdp : {two_state_mdp(), chain_mdp()}) {
        const auto q_star = mdp.optimal_q(0.9);
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            MdpEnv env(mdp, 24);
            DdqnConfig cfg;
            cfg.gamma = 0.9;
            cfg.lr_alpha = 5e-3;
            cfg.hidden = {32, 32};
            cfg.episodes = 250;
            cfg.max_steps_per_episode = 24;
            cfg.epsilon_decay_episodes = 150;
            cfg.epsilon_end = 0.1;
            cfg.batch_size = 16;
            cfg.target_update_interval = 100;
            QFunctionPair qpair(env.state_dim(), env.n_actions(), cfg.hidden, 1);
            (void)train_ddqn(env, cfg, seed, &qpair);

            for (int s = 0; s < mdp.n_states; ++s) {
                if (mdp.terminal[s]) continue;
                std::vector<double> x(static_cast<std::size_t>(mdp.n_states), 0.0);
                x[static_cast<std::size_t>(s)] = 1.0;
                int oracle = 0;
                for (int a = 1; a < mdp.n_actions; ++a) {
                    if (q_star[s][a] > q_star[s][oracle]) oracle = a;
                }
                CHECK(greedy_action(qpair, x) == oracle);
            }
        }
    }
}

TEST_CASE("training is reproducible per seed") {
    const ToyMdp mdp = chain_mdp();
    MdpEnv env1(mdp, 24), env2(mdp, 24);
    DdqnConfig cfg;
    cfg.episodes = 50;
    cfg.hidden = {16};
    const TrainResult a = train_ddqn(env1, cfg, 77);
    const TrainResult b = train_ddqn(env2, cfg, 77);
    CHECK(a.episode_rewards == b.episode_rewards);
    CHECK(a.total_updates == b.total_updates);
}

TEST_CASE("running best reward never decreases") {
    const ToyMdp mdp = two_state_mdp();
    MdpEnv env(mdp, 24);
    DdqnConfig cfg;
    cfg.episodes = 60;
    cfg.hidden = {16};
    const TrainResult r = train_ddqn(env, cfg, 5);
    REQUIRE(r.running_best.size() == r.episode_rewards.size());
    for (std::size_t e = 1; e < r.running_best.size(); ++e) {
        CHECK(r.running_best[e] >= r.running_best[e - 1]);
    }
}

TEST_CASE("replay buffer wraps at capacity") {
    ReplayBuffer buf(4);
    for (int i = 0; i < 10; ++i) {
        Transition t;
        t.a = i;
        buf.push(std::move(t));
        CHECK(buf.size() <= 4);
    }
    // the newest four survive
    std::vector<int> seen;
    for (std::size_t i = 0; i < buf.size(); ++i) seen.push_back(buf.at(i).a);
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<int>{6, 7, 8, 9});
}

TEST_CASE("the delayed network copies on schedule") {
    QFunctionPair qpair(2, 2, {8}, 3);
    DdqnConfig cfg;
    cfg.target_update_interval = 3;
    cfg.lr_alpha = 0.01;

    std::vector<double> x{1.0, 0.0};
    Transition t;
    t.s = x;
    t.a = 0;
    t.r = 1.0;
    t.s2 = x;
    t.done = true;
    std::vector<const Transition*> batch{&t};

    const double before = qpair.net_b.q_value(x, 0);
    ddqn_update(qpair, batch, cfg);
    ddqn_update(qpair, batch, cfg);
    CHECK(qpair.net_b.q_value(x, 0) == before);  // not yet copied
    ddqn_update(qpair, batch, cfg);
    CHECK(qpair.net_b.q_value(x, 0) == qpair.net_a.q_value(x, 0));
}

TEST_CASE("canonical estimator changes only the bootstrap term") {
    QFunctionPair qpair(2, 2, {8}, 3);
    QFunctionPair qpair2(2, 2, {8}, 3);
    // desynchronize the delayed network so argmax(A) differs from max(B)
    std::vector<double> y{0.0, 1.0};
    for (int it = 0; it < 200; ++it) {
        std::vector<QNet::Sample> b1{{&y, 0, 2.0}, {&y, 1, -1.0}};
        qpair.net_a.train_batch(b1, 0.05);
        qpair2.net_a.train_batch(b1, 0.05);
    }

    std::vector<double> x{1.0, 0.0};
    Transition t;
    t.s = x;
    t.a = 0;
    t.r = 0.0;
    t.s2 = y;
    t.done = false;
    std::vector<const Transition*> batch{&t};

    DdqnConfig printed;
    printed.lr_alpha = 0.0;  // probe the targets without moving weights
    printed.double_dqn_canonical = false;
    DdqnConfig canonical = printed;
    canonical.double_dqn_canonical = true;

    const double loss_printed = ddqn_update(qpair, batch, printed);
    const double loss_canonical = ddqn_update(qpair2, batch, canonical);
    // printed rule bootstraps from max Q_B, canonical from Q_B at argmax Q_A
    const double max_b = qpair.net_b.max_q(y);
    const double b_at_argmax_a = qpair.net_b.q_value(y, qpair.net_a.argmax(y));
    const double qa = qpair.net_a.q_value(x, 0);
    CHECK(loss_printed ==
          doctest::Approx(0.5 * (qa - printed.gamma * max_b) * (qa - printed.gamma * max_b)));
    CHECK(loss_canonical == doctest::Approx(0.5 * (qa - canonical.gamma * b_at_argmax_a) *
                                            (qa - canonical.gamma * b_at_argmax_a)));
}
