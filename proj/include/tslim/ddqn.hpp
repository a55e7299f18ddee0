#pragma once

#include <functional>
#include <vector>

#include "tslim/qnet.hpp"
#include "tslim/rng.hpp"

namespace tslim {

// Episodic environment with a vector state. Implementations own any
// domain-side bookkeeping (the fitting environment tracks candidate
// solutions itself).
class Environment {
public:
    virtual ~Environment() = default;
    virtual int state_dim() const = 0;
    virtual int n_actions() const = 0;
    virtual std::vector<double> reset() = 0;
    struct Step {
        std::vector<double> state;
        double reward = 0.0;
        bool done = false;
    };
    virtual Step step(int action) = 0;
};

struct DdqnConfig {
    double lr_alpha = 1e-3;
    double gamma = 0.6;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int epsilon_decay_episodes = 400;
    int replay_capacity = 20000;
    int batch_size = 32;
    int target_update_interval = 250;  // updates between target-network copies
    int episodes = 600;
    int max_steps_per_episode = 80;
    std::vector<int> hidden{64, 64};
    // Update target as printed (max over the delayed network). The canonical
    // estimator instead evaluates the online argmax on the delayed network.
    bool double_dqn_canonical = false;
};

struct Transition {
    std::vector<double> s;
    int a = 0;
    double r = 0.0;
    std::vector<double> s2;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
    void push(Transition t);
    std::size_t size() const { return data_.size(); }
    const Transition& at(std::size_t i) const { return data_[i]; }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> data_;
};

// Online/target network pair ("agent A" learns, "agent B" lags by periodic
// copy). Exposed separately from the trainer so updates are unit-testable.
struct QFunctionPair {
    QNet net_a;
    QNet net_b;
    int updates_since_copy = 0;

    QFunctionPair(int input_dim, int output_dim, const std::vector<int>& hidden,
                  std::uint64_t seed)
        : net_a(input_dim, output_dim, hidden, seed),
          net_b(input_dim, output_dim, hidden, seed) {
        net_b.copy_from(net_a);
    }
};

// One gradient step on the replay batch; copies A into B every
// target_update_interval updates. Returns the training loss.
double ddqn_update(QFunctionPair& qpair, const std::vector<const Transition*>& batch,
                   const DdqnConfig& cfg);

struct TrainResult {
    std::vector<double> episode_rewards;
    std::vector<double> running_best;
    long long total_updates = 0;
    long long total_env_steps = 0;
};

// Epsilon-greedy training loop; fully deterministic for a given seed.
TrainResult train_ddqn(Environment& env, const DdqnConfig& cfg, std::uint64_t seed,
                       QFunctionPair* out_qpair = nullptr);

// Greedy action of the trained online network.
int greedy_action(const QFunctionPair& qpair, const std::vector<double>& state);

// -----------------------------------------------------------------------
// Tabular double-Q update (the printed update rule verbatim) for property
// tests on finite MDPs.
struct TabularDoubleQ {
    int n_states, n_actions;
    std::vector<double> qa, qb;
    int updates_since_copy = 0;

    TabularDoubleQ(int ns, int na)
        : n_states(ns), n_actions(na),
          qa(static_cast<std::size_t>(ns) * na, 0.0),
          qb(static_cast<std::size_t>(ns) * na, 0.0) {}

    double& a(int s, int act) { return qa[static_cast<std::size_t>(s) * n_actions + act]; }
    double& b(int s, int act) { return qb[static_cast<std::size_t>(s) * n_actions + act]; }

    void update(int s, int act, double r, int s2, bool done, double alpha, double gamma,
                int copy_interval);
    int greedy(int s) const;
};

}  // namespace tslim
