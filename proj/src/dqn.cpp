#include "rap/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "rap/errors.hpp"

namespace rap {

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'A', 'P', 'Q', 'N', 'E', 'T', '1'};

std::vector<double> hidden_pre(const QNetworkParams& net, std::span<const double> s) {
    std::vector<double> z(net.hidden);
    for (int h = 0; h < net.hidden; ++h) {
        double acc = net.b1[h];
        const double* row = &net.w1[static_cast<std::size_t>(h) * net.in_dim];
        for (int i = 0; i < net.in_dim; ++i) acc += row[i] * s[i];
        z[h] = acc;
    }
    return z;
}

}  // namespace

bool QNetworkParams::finite() const {
    auto ok = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(w1) && ok(b1) && ok(w2) && ok(b2);
}

QNetworkParams QNetworkParams::init(int in_dim, int hidden, int out_dim,
                                    std::mt19937_64& rng) {
    if (in_dim < 1 || hidden < 1 || out_dim < 1) {
        throw ContractError("network dims must be >= 1");
    }
    QNetworkParams p;
    p.in_dim = in_dim;
    p.hidden = hidden;
    p.out_dim = out_dim;
    auto fill = [&rng](std::vector<double>& v, std::size_t n, int fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        v.resize(n);
        for (double& x : v) x = dist(rng);
    };
    fill(p.w1, static_cast<std::size_t>(hidden) * in_dim, in_dim);
    fill(p.b1, hidden, in_dim);
    fill(p.w2, static_cast<std::size_t>(out_dim) * hidden, hidden);
    fill(p.b2, out_dim, hidden);
    return p;
}

void QNetworkParams::save(const std::string& path, std::uint64_t seed,
                          std::uint64_t config_hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    auto w64 = [&out](std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));  // little-endian host
    };
    w64(static_cast<std::uint64_t>(in_dim));
    w64(static_cast<std::uint64_t>(hidden));
    w64(static_cast<std::uint64_t>(out_dim));
    w64(seed);
    w64(config_hash);
    for (const auto* v : {&w1, &b1, &w2, &b2}) {
        out.write(reinterpret_cast<const char*>(v->data()),
                  static_cast<std::streamsize>(v->size() * sizeof(double)));
    }
    if (!out) throw ConfigError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ConfigError("bad checkpoint header in " + path);
    }
    auto r64 = [&in, &path] {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw ConfigError("truncated checkpoint: " + path);
        return v;
    };
    LoadedCheckpoint out;
    out.params.in_dim = static_cast<int>(r64());
    out.params.hidden = static_cast<int>(r64());
    out.params.out_dim = static_cast<int>(r64());
    out.seed = r64();
    out.config_hash = r64();
    auto& p = out.params;
    p.w1.resize(static_cast<std::size_t>(p.hidden) * p.in_dim);
    p.b1.resize(p.hidden);
    p.w2.resize(static_cast<std::size_t>(p.out_dim) * p.hidden);
    p.b2.resize(p.out_dim);
    for (std::vector<double>* v : {&p.w1, &p.b1, &p.w2, &p.b2}) {
        in.read(reinterpret_cast<char*>(v->data()),
                static_cast<std::streamsize>(v->size() * sizeof(double)));
    }
    if (!in) throw ConfigError("truncated checkpoint: " + path);
    return out;
}

std::vector<double> forward(const QNetworkParams& net, std::span<const double> state) {
    if (static_cast<int>(state.size()) != net.in_dim) {
        throw DimensionError("state dim does not match network input");
    }
    std::vector<double> z = hidden_pre(net, state);
    for (double& v : z) v = std::max(v, 0.0);
    std::vector<double> q(net.out_dim);
    for (int o = 0; o < net.out_dim; ++o) {
        double acc = net.b2[o];
        const double* row = &net.w2[static_cast<std::size_t>(o) * net.hidden];
        for (int h = 0; h < net.hidden; ++h) acc += row[h] * z[h];
        q[o] = acc;
    }
    return q;
}

double bellman_target(double r, std::span<const double> next_q, bool terminal, double gamma,
                      std::span<const std::uint8_t> legal_next) {
    if (terminal) return r;
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t a = 0; a < next_q.size(); ++a) {
        if (a < legal_next.size() && !legal_next[a]) continue;
        best = std::max(best, next_q[a]);
        any = true;
    }
    if (!any) throw ContractError("non-terminal state with no legal next action");
    return r + gamma * best;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) {
    if (capacity == 0) throw ContractError("replay capacity must be >= 1");
    ring_.resize(capacity);
}

void ReplayBuffer::push(Transition t) {
    ring_[head_] = std::move(t);
    head_ = (head_ + 1) % ring_.size();
    size_ = std::min(size_ + 1, ring_.size());
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n,
                                                    std::mt19937_64& rng) const {
    if (size_ < n) throw ContractError("replay buffer smaller than minibatch");
    std::uniform_int_distribution<std::size_t> dist(0, size_ - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &ring_[dist(rng)];
    return out;
}

void DqnConfig::validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0,1]");
    for (double e : {eps_start, eps_end}) {
        if (e < 0.0 || e > 1.0) throw ConfigError("epsilon must be in [0,1]");
    }
    if (eps_decay_fraction <= 0.0 || eps_decay_fraction > 1.0) {
        throw ConfigError("eps_decay_fraction must be in (0,1]");
    }
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (minibatch < 1) throw ConfigError("minibatch must be >= 1");
    if (episodes < 1 || max_steps < 1) throw ConfigError("episodes and max_steps must be >= 1");
    if (target_refresh < 1) throw ConfigError("target_refresh must be >= 1");
    if (replay_capacity < minibatch) throw ConfigError("replay capacity < minibatch");
    if (hidden < 1) throw ConfigError("hidden width must be >= 1");
}

std::uint64_t DqnConfig::hash() const {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    auto mixd = [&mix](double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
    };
    mixd(gamma);
    mixd(eps_start);
    mixd(eps_end);
    mixd(eps_decay_fraction);
    mixd(learning_rate);
    mix(minibatch);
    mix(static_cast<std::uint64_t>(episodes));
    mix(static_cast<std::uint64_t>(max_steps));
    mix(static_cast<std::uint64_t>(target_refresh));
    mix(replay_capacity);
    mix(static_cast<std::uint64_t>(hidden));
    mix(seed);
    return h;
}

void td_update(QNetworkParams& net, std::span<const Transition* const> batch,
               const QNetworkParams& target, double gamma, double learning_rate) {
    if (batch.empty()) throw ContractError("td_update needs a non-empty minibatch");
    std::vector<double> gw1(net.w1.size(), 0.0), gb1(net.b1.size(), 0.0);
    std::vector<double> gw2(net.w2.size(), 0.0), gb2(net.b2.size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (const Transition* t : batch) {
        std::vector<double> z = hidden_pre(net, t->s);
        std::vector<double> h(z);
        for (double& v : h) v = std::max(v, 0.0);
        const double* w2row = &net.w2[static_cast<std::size_t>(t->a) * net.hidden];
        double q = net.b2[t->a];
        for (int k = 0; k < net.hidden; ++k) q += w2row[k] * h[k];

        std::vector<double> next_q = forward(target, t->s_next);
        double y = bellman_target(t->r, next_q, t->terminal, gamma, t->legal_next);

        // d/dq of mean (y - q)^2 over the batch
        double dq = -2.0 * (y - q) * inv_b;
        if (!std::isfinite(dq)) {
            throw ContractError("non-finite TD gradient; diverged (y=" + std::to_string(y) +
                                ", q=" + std::to_string(q) + ")");
        }
        gb2[t->a] += dq;
        double* gw2row = &gw2[static_cast<std::size_t>(t->a) * net.hidden];
        for (int k = 0; k < net.hidden; ++k) gw2row[k] += dq * h[k];
        for (int k = 0; k < net.hidden; ++k) {
            if (z[k] <= 0.0) continue;  // ReLU gate
            double dh = dq * w2row[k];
            gb1[k] += dh;
            double* gw1row = &gw1[static_cast<std::size_t>(k) * net.in_dim];
            for (int i = 0; i < net.in_dim; ++i) gw1row[i] += dh * t->s[i];
        }
    }

    for (std::size_t i = 0; i < net.w1.size(); ++i) net.w1[i] -= learning_rate * gw1[i];
    for (std::size_t i = 0; i < net.b1.size(); ++i) net.b1[i] -= learning_rate * gb1[i];
    for (std::size_t i = 0; i < net.w2.size(); ++i) net.w2[i] -= learning_rate * gw2[i];
    for (std::size_t i = 0; i < net.b2.size(); ++i) net.b2[i] -= learning_rate * gb2[i];
}

int masked_argmax(std::span<const double> q, std::span<const std::uint8_t> legal) {
    int best = -1;
    double best_q = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < q.size(); ++a) {
        if (a < legal.size() && !legal[a]) continue;
        if (q[a] > best_q) {  // strict: ties keep the lowest index
            best_q = q[a];
            best = static_cast<int>(a);
        }
    }
    if (best < 0) throw ContractError("masked_argmax: no legal action");
    return best;
}

int select_action(const QNetworkParams& net, std::span<const double> state, double epsilon,
                  std::span<const std::uint8_t> legal, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < epsilon) {
        std::vector<int> candidates;
        for (std::size_t a = 0; a < legal.size(); ++a) {
            if (legal[a]) candidates.push_back(static_cast<int>(a));
        }
        if (candidates.empty()) throw ContractError("select_action: no legal action");
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        return candidates[pick(rng)];
    }
    std::vector<double> q = forward(net, state);
    return masked_argmax(q, legal);
}

TrainResult train(RlEnv& env, const DqnConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    QNetworkParams theta =
        QNetworkParams::init(env.state_dim(), cfg.hidden, env.action_count(), rng);
    QNetworkParams target = theta;
    ReplayBuffer buffer(cfg.replay_capacity);

    const double total_steps =
        static_cast<double>(cfg.episodes) * static_cast<double>(cfg.max_steps);
    const double decay_steps = std::max(1.0, total_steps * cfg.eps_decay_fraction);
    std::uint64_t global_step = 0;
    std::uint64_t updates = 0;

    TrainResult result;
    result.curve.reserve(cfg.episodes);

    for (int ep = 0; ep < cfg.episodes; ++ep) {
        std::vector<double> s = env.reset();
        std::vector<std::uint8_t> legal = env.legal_mask();
        double ret = 0.0;
        int steps = 0;
        double eps = cfg.eps_start;
        for (int t = 0; t < cfg.max_steps && !env.done(); ++t) {
            double frac = std::min(1.0, static_cast<double>(global_step) / decay_steps);
            eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
            int a = select_action(theta, s, eps, legal, rng);
            RlEnv::Step out = env.step(a);
            std::vector<std::uint8_t> legal_next = env.legal_mask();
            buffer.push(Transition{s, a, out.reward, out.state, out.done, legal_next});
            ret += out.reward;
            s = std::move(out.state);
            legal = std::move(legal_next);
            ++steps;
            ++global_step;

            if (buffer.size() >= cfg.minibatch) {
                auto batch = buffer.sample(cfg.minibatch, rng);
                td_update(theta, batch, target, cfg.gamma, cfg.learning_rate);
                ++updates;
                if (updates % static_cast<std::uint64_t>(cfg.target_refresh) == 0) {
                    target = theta;
                }
                if (updates % 256 == 0 && !theta.finite()) {
                    throw ContractError("Q-network diverged to non-finite values");
                }
            }
        }
        result.curve.push_back(EpisodeStat{ep, ret, eps, steps});
    }
    if (!theta.finite()) throw ContractError("Q-network diverged to non-finite values");
    result.theta = std::move(theta);
    return result;
}

void save_reward_curve(const std::string& path, std::span<const EpisodeStat> curve) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write reward curve: " + path);
    out.precision(17);
    out << "episode,return,epsilon,steps\n";
    for (const auto& e : curve) {
        out << e.episode << "," << e.ret << "," << e.epsilon << "," << e.steps << "\n";
    }
}

}  // namespace rap
