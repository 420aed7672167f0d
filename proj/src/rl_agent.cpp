#include "odorloc/rl_agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace odorloc {

GridEnv::GridEnv(int n, Cell source, int max_steps) : n_(n), source_(source), max_steps_(max_steps) {
    if (n < 2) throw ConfigError("grid size must be >= 2");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (source.i < 0 || source.i >= n || source.j < 0 || source.j >= n) throw ConfigError("source cell outside the grid");
    agent_ = {0, 0};
}

void GridEnv::reset(Cell start) {
    if (start.i < 0 || start.i >= n_ || start.j < 0 || start.j >= n_) throw ConfigError("start cell outside the grid");
    agent_ = start;
    steps_ = 0;
}

Vec2 GridEnv::normalized(Cell c) const { return {static_cast<double>(c.i) / n_, static_cast<double>(c.j) / n_}; }

double GridEnv::reward_at(Cell c) const { return -norm(normalized(c) - normalized(source_)); }

Cell GridEnv::moved(Cell c, Action a) const {
    switch (a) {
        case Action::Up: c.j = std::min(c.j + 1, n_ - 1); break;
        case Action::Down: c.j = std::max(c.j - 1, 0); break;
        case Action::Left: c.i = std::max(c.i - 1, 0); break;
        case Action::Right: c.i = std::min(c.i + 1, n_ - 1); break;
    }
    return c;
}

StepResult GridEnv::step(Action a) {
    agent_ = moved(agent_, a);
    ++steps_;
    StepResult r;
    r.next_state = state();
    r.reward = reward_at(agent_);
    r.reached = agent_ == source_;
    r.done = r.reached || steps_ >= max_steps_;
    return r;
}

Cell cell_of(Vec2 pos, Vec2 domain_size, int n) {
    auto idx = [n](double v, double l) {
        return static_cast<int>(std::clamp<long>(std::lround(v / l * n), 0L, static_cast<long>(n - 1)));
    };
    return {idx(pos.x, domain_size.x), idx(pos.y, domain_size.y)};
}

Vec2 cell_position(Cell c, Vec2 domain_size, int n) {
    return {static_cast<double>(c.i) / n * domain_size.x, static_cast<double>(c.j) / n * domain_size.y};
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw ConfigError("replay capacity must be >= 1");
    items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
    if (items_.size() < capacity_) {
        items_.push_back(t);
        return;
    }
    items_[head_] = t;
    head_ = (head_ + 1) % capacity_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch) {
    if (batch > items_.size()) throw ConfigError("replay batch larger than the buffer");
    // partial Fisher-Yates over indices
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t k = 0; k < batch; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng_)]);
        out.push_back(items_[idx[k]]);
    }
    return out;
}

std::vector<Transition> ReplayBuffer::contents() const {
    std::vector<Transition> out(items_.begin() + static_cast<std::ptrdiff_t>(head_), items_.end());
    out.insert(out.end(), items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(head_));
    return out;
}

double epsilon_at(const DqnOptions& opt, int episode) {
    return std::max(opt.epsilon_end, opt.epsilon_start * std::pow(opt.epsilon_decay, episode));
}

DenseNet make_qnet(const DqnOptions& opt) {
    std::vector<int> dims{2};
    std::vector<Activation> acts;
    for (int h : opt.hidden) {
        dims.push_back(h);
        acts.push_back(Activation::ReLU);
    }
    dims.push_back(kActionCount);
    acts.push_back(Activation::Identity);
    DenseNet net = init_net(dims, acts, opt.seed);
    if (opt.zero_init) net.set_parameters(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.parameter_count())));
    return net;
}

namespace {

Eigen::MatrixXd states(std::span<const Transition> batch, bool next) {
    Eigen::MatrixXd X(2, static_cast<Eigen::Index>(batch.size()));
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Vec2 s = next ? batch[k].next_state : batch[k].state;
        X(0, static_cast<Eigen::Index>(k)) = s.x;
        X(1, static_cast<Eigen::Index>(k)) = s.y;
    }
    return X;
}

}  // namespace

std::vector<double> dqn_targets(const DenseNet& net, std::span<const Transition> batch, double gamma) {
    const Eigen::MatrixXd q = forward_batch(net, states(batch, true));
    std::vector<double> y(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        y[k] = batch[k].reward;
        if (!batch[k].terminal) y[k] += gamma * q.col(static_cast<Eigen::Index>(k)).maxCoeff();
    }
    return y;
}

double dqn_update(DenseNet& net, AdamState& adam, std::span<const Transition> batch, const DenseNet& target_net,
                  double gamma) {
    const std::vector<double> y = dqn_targets(target_net, batch, gamma);
    Tape tape;
    const Eigen::MatrixXd q = forward_batch(net, states(batch, false), &tape);
    Eigen::MatrixXd up = Eigen::MatrixXd::Zero(q.rows(), q.cols());
    const double n = static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(k);
        const double r = q(batch[k].action, c) - y[k];
        loss += r * r / n;
        up(batch[k].action, c) = 2.0 * r / n;
    }
    Eigen::VectorXd p = net.parameters();
    adam_step(p, backward(net, tape, up).flatten(), adam);
    net.set_parameters(p);
    return loss;
}

int greedy_action(const DenseNet& net, Vec2 state) {
    const Eigen::VectorXd q = forward(net, Eigen::Vector2d(state.x, state.y));
    Eigen::Index best = 0;
    q.maxCoeff(&best);  // first maximum on ties
    return static_cast<int>(best);
}

DqnTraining train_dqn(const GridEnv& env_template, const DqnOptions& opt) {
    if (opt.episodes < 1) throw ConfigError("episodes must be >= 1");
    if (opt.batch_size == 0 || opt.batch_size > opt.buffer_capacity) throw ConfigError("batch must be in [1, capacity]");
    if (opt.gamma < 0.0 || opt.gamma > 1.0) throw ConfigError("gamma must be in [0, 1]");
    const Stopwatch sw;
    DqnTraining out;
    out.net = make_qnet(opt);
    DenseNet target = out.net;
    AdamState adam;
    adam.lr = opt.lr;
    ReplayBuffer buffer(opt.buffer_capacity, derive_seed(opt.seed, 1));
    std::mt19937_64 rng(derive_seed(opt.seed, 2));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any_action(0, kActionCount - 1);
    std::uniform_int_distribution<int> any_cell(0, env_template.size() - 1);
    GridEnv env(env_template.size(), env_template.source(), opt.max_steps);
    long updates = 0;

    for (int ep = 0; ep < opt.episodes && !out.diverged; ++ep) {
        const double eps = epsilon_at(opt, ep);
        Cell start = opt.start;
        if (opt.random_starts) {
            do {
                start = {any_cell(rng), any_cell(rng)};
            } while (start == env.source());
        }
        env.reset(start);
        EpisodeLog row{ep + 1, 0.0, 0, eps};
        bool done = env.agent() == env.source();
        while (!done) {
            const Vec2 s = env.state();
            const int a = unit(rng) < eps ? any_action(rng) : greedy_action(out.net, s);
            const StepResult r = env.step(static_cast<Action>(a));
            buffer.push({s, a, r.reward, r.next_state, r.reached});
            row.total_reward += r.reward;
            done = r.done;
            if (buffer.size() >= opt.batch_size) {
                const auto batch = buffer.sample(opt.batch_size);
                dqn_update(out.net, adam, batch, opt.target_network ? target : out.net, opt.gamma);
                ++updates;
                if (opt.target_network && updates % opt.target_sync == 0) target = out.net;
                const Eigen::VectorXd q = forward(out.net, Eigen::Vector2d(s.x, s.y));
                if (!q.allFinite() || q.cwiseAbs().maxCoeff() > opt.divergence_limit) {
                    out.diverged = true;
                    break;
                }
            }
        }
        row.steps = env.steps();
        out.log.push_back(row);
    }
    out.seconds = sw.seconds();
    return out;
}

Rollout rollout(const DenseNet& net, GridEnv env, Cell start, Vec2 domain_size, Vec2 truth) {
    const Stopwatch sw;
    Rollout out;
    env.reset(start);
    out.path.push_back(start);
    out.reached = env.agent() == env.source();
    while (!out.reached && env.steps() < env.max_steps()) {
        const StepResult r = env.step(static_cast<Action>(greedy_action(net, env.state())));
        out.path.push_back(env.agent());
        out.reached = r.reached;
    }
    out.final_cell = env.agent();
    out.estimate.method = "RL";
    out.estimate.estimate = cell_position(out.final_cell, domain_size, env.size());
    out.estimate.inference_s = sw.seconds();
    if (!out.reached) add_flag(out.estimate.flags, "source not reached");
    score(out.estimate, truth);
    return out;
}

void write_episode_log(const std::string& path, std::span<const EpisodeLog> log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(12);
    out << "episode,total_reward,steps,epsilon\n";
    for (const auto& r : log) out << r.episode << "," << r.total_reward << "," << r.steps << "," << r.epsilon << "\n";
}

void save_policy(const std::string& path, const DenseNet& net, const GridEnv& env) {
    nlohmann::json meta;
    meta["kind"] = "dqn";
    meta["grid_size"] = env.size();
    meta["source_cell"] = {env.source().i, env.source().j};
    save_checkpoint(path, net, meta);
}

DenseNet load_policy(const std::string& path) {
    nlohmann::json meta;
    DenseNet net = load_checkpoint(path, &meta);
    if (!meta.is_object() || meta.value("kind", "") != "dqn") throw ConfigError("'" + path + "' is not a DQN policy");
    if (net.input_dim() != 2 || net.output_dim() != kActionCount) throw ConfigError("policy must map 2 inputs to 4 actions");
    return net;
}

}  // namespace odorloc
