#include "tslim/ddqn.hpp"

#include <algorithm>

namespace tslim {

void ReplayBuffer::push(Transition t) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

double ddqn_update(QFunctionPair& qpair, const std::vector<const Transition*>& batch,
                   const DdqnConfig& cfg) {
    if (batch.empty()) return 0.0;
    std::vector<QNet::Sample> samples;
    samples.reserve(batch.size());
    for (const Transition* t : batch) {
        double target = t->r;
        if (!t->done) {
            if (cfg.double_dqn_canonical) {
                const int a_star = qpair.net_a.argmax(t->s2);
                target += cfg.gamma * qpair.net_b.q_value(t->s2, a_star);
            } else {
                target += cfg.gamma * qpair.net_b.max_q(t->s2);
            }
        }
        samples.push_back({&t->s, t->a, target});
    }
    const double loss = qpair.net_a.train_batch(samples, cfg.lr_alpha);
    if (++qpair.updates_since_copy >= cfg.target_update_interval) {
        qpair.net_b.copy_from(qpair.net_a);
        qpair.updates_since_copy = 0;
    }
    return loss;
}

int greedy_action(const QFunctionPair& qpair, const std::vector<double>& state) {
    return qpair.net_a.argmax(state);
}

TrainResult train_ddqn(Environment& env, const DdqnConfig& cfg, std::uint64_t seed,
                       QFunctionPair* out_qpair) {
    Rng rng(Rng::derive(seed, 0xddf1));
    QFunctionPair qpair(env.state_dim(), env.n_actions(), cfg.hidden, Rng::derive(seed, 0x9e7));
    ReplayBuffer replay(static_cast<std::size_t>(cfg.replay_capacity));

    TrainResult result;
    double best = -1e300;

    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const double frac =
            std::min(1.0, static_cast<double>(ep) /
                              std::max(1, cfg.epsilon_decay_episodes));
        const double eps = cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);

        std::vector<double> state = env.reset();
        double ep_reward = 0.0;

        for (int step = 0; step < cfg.max_steps_per_episode; ++step) {
            int action;
            if (rng.uniform() < eps) {
                action = static_cast<int>(rng.below(static_cast<std::uint64_t>(env.n_actions())));
            } else {
                action = qpair.net_a.argmax(state);
            }
            auto out = env.step(action);
            ep_reward += out.reward;
            replay.push({state, action, out.reward, out.state, out.done});
            ++result.total_env_steps;

            if (replay.size() >= static_cast<std::size_t>(cfg.batch_size)) {
                std::vector<const Transition*> batch;
                batch.reserve(static_cast<std::size_t>(cfg.batch_size));
                for (int b = 0; b < cfg.batch_size; ++b) {
                    batch.push_back(&replay.at(rng.below(replay.size())));
                }
                ddqn_update(qpair, batch, cfg);
                ++result.total_updates;
            }

            state = out.state;
            if (out.done) break;
        }

        best = std::max(best, ep_reward);
        result.episode_rewards.push_back(ep_reward);
        result.running_best.push_back(best);
    }

    if (out_qpair) *out_qpair = std::move(qpair);
    return result;
}

void TabularDoubleQ::update(int s, int act, double r, int s2, bool done, double alpha,
                            double gamma, int copy_interval) {
    double target = r;
    if (!done) {
        double mx = b(s2, 0);
        for (int a2 = 1; a2 < n_actions; ++a2) mx = std::max(mx, b(s2, a2));
        target += gamma * mx;
    }
    a(s, act) = (1.0 - alpha) * a(s, act) + alpha * target;
    if (++updates_since_copy >= copy_interval) {
        qb = qa;
        updates_since_copy = 0;
    }
}

int TabularDoubleQ::greedy(int s) const {
    int best = 0;
    for (int act = 1; act < n_actions; ++act) {
        if (qa[static_cast<std::size_t>(s) * n_actions + act] >
            qa[static_cast<std::size_t>(s) * n_actions + best]) {
            best = act;
        }
    }
    return best;
}

}  // namespace tslim
