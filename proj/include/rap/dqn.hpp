#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rap {

// Minimal episodic environment surface the trainer needs. Action indices are
// dense in [0, action_count); illegal ones are masked out per state.
class RlEnv {
public:
    virtual ~RlEnv() = default;
    virtual int state_dim() const = 0;
    virtual int action_count() const = 0;
    virtual std::vector<double> reset() = 0;
    virtual std::vector<std::uint8_t> legal_mask() const = 0;
    virtual bool done() const = 0;

    struct Step {
        std::vector<double> state;
        double reward = 0.0;
        bool done = false;
    };
    virtual Step step(int action) = 0;
};

// 2-layer MLP: Q = W2 * relu(W1 * s + b1) + b2. Row-major weights.
struct QNetworkParams {
    int in_dim = 0;
    int hidden = 0;
    int out_dim = 0;
    std::vector<double> w1;  // hidden x in_dim
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // out_dim x hidden
    std::vector<double> b2;  // out_dim

    std::size_t param_count() const {
        return w1.size() + b1.size() + w2.size() + b2.size();
    }
    bool finite() const;

    // Uniform +/- 1/sqrt(fan_in) init from the given generator.
    static QNetworkParams init(int in_dim, int hidden, int out_dim, std::mt19937_64& rng);

    void save(const std::string& path, std::uint64_t seed, std::uint64_t config_hash) const;
};

struct LoadedCheckpoint {
    QNetworkParams params;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

std::vector<double> forward(const QNetworkParams& net, std::span<const double> state);

// r for terminal transitions, else r + gamma * max over legal next actions.
double bellman_target(double r, std::span<const double> next_q, bool terminal, double gamma,
                      std::span<const std::uint8_t> legal_next);

struct Transition {
    std::vector<double> s;
    int a = 0;
    double r = 0.0;
    std::vector<double> s_next;
    bool terminal = false;
    std::vector<std::uint8_t> legal_next;
};

// Fixed-capacity ring with uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return ring_.size(); }
    const Transition& at(std::size_t i) const { return ring_.at(i); }
    std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

private:
    std::vector<Transition> ring_;
    std::size_t head_ = 0;
    std::size_t size_ = 0;
};

struct DqnConfig {
    double gamma = 0.99;
    double eps_start = 1.0;
    double eps_end = 0.05;
    // Fraction of total env steps over which epsilon decays linearly.
    double eps_decay_fraction = 0.5;
    double learning_rate = 1e-3;
    std::size_t minibatch = 32;
    int episodes = 500;       // M
    int max_steps = 128;      // T
    int target_refresh = 500; // updates between target-network copies
    std::size_t replay_capacity = 20000;
    int hidden = 256;
    std::uint64_t seed = 0;

    void validate() const;
    std::uint64_t hash() const;
};

// One SGD step on the mean squared TD error over the minibatch; gradient flows
// only through each transition's taken action.
void td_update(QNetworkParams& net, std::span<const Transition* const> batch,
               const QNetworkParams& target, double gamma, double learning_rate);

// Epsilon-greedy over legal actions; greedy ties break to the lowest index.
int select_action(const QNetworkParams& net, std::span<const double> state, double epsilon,
                  std::span<const std::uint8_t> legal, std::mt19937_64& rng);

int masked_argmax(std::span<const double> q, std::span<const std::uint8_t> legal);

struct EpisodeStat {
    int episode = 0;
    double ret = 0.0;
    double epsilon = 0.0;
    int steps = 0;
};

struct TrainResult {
    QNetworkParams theta;
    std::vector<EpisodeStat> curve;
};

// Algorithm: episodic epsilon-greedy rollouts, uniform replay, fixed-target
// TD regression. Deterministic for a given seed.
TrainResult train(RlEnv& env, const DqnConfig& cfg);

void save_reward_curve(const std::string& path, std::span<const EpisodeStat> curve);

}  // namespace rap
