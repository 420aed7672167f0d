#pragma once

// Active search on a discrete grid with a deep Q-network. The state is the
// agent position divided by the grid size; concentration is not observed.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "odorloc/common.hpp"
#include "odorloc/nn_engine.hpp"

namespace odorloc {

struct Cell {
    int i = 0;
    int j = 0;
    friend bool operator==(Cell, Cell) = default;
};

enum class Action { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr int kActionCount = 4;

struct StepResult {
    Vec2 next_state;
    double reward = 0.0;
    bool reached = false;  // agent on the source
    bool done = false;     // reached or out of steps
};

class GridEnv {
public:
    GridEnv(int n, Cell source, int max_steps = 200);

    int size() const { return n_; }
    Cell source() const { return source_; }
    Cell agent() const { return agent_; }
    int steps() const { return steps_; }
    int max_steps() const { return max_steps_; }

    void reset(Cell start);
    Vec2 state() const { return normalized(agent_); }
    Vec2 normalized(Cell c) const;
    /// -distance between the cell and the source, normalized units.
    double reward_at(Cell c) const;
    Cell moved(Cell c, Action a) const;  // clamped at the walls
    StepResult step(Action a);

private:
    int n_;
    Cell source_;
    Cell agent_;
    int steps_ = 0;
    int max_steps_;
};

/// Nearest grid node of a position in a domain of the given size.
Cell cell_of(Vec2 pos, Vec2 domain_size, int n);
/// Grid node back to meters: i / N * L.
Vec2 cell_position(Cell c, Vec2 domain_size, int n);

struct Transition {
    Vec2 state;
    int action = 0;
    double reward = 0.0;
    Vec2 next_state;
    bool terminal = false;  // true only when the source was reached
};

class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::uint64_t seed);

    void push(const Transition& t);
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    /// Distinct transitions; throws ConfigError if batch > size().
    std::vector<Transition> sample(std::size_t batch);
    /// Oldest first.
    std::vector<Transition> contents() const;

private:
    std::size_t capacity_;
    std::vector<Transition> items_;
    std::size_t head_ = 0;  // next slot to overwrite once full
    std::mt19937_64 rng_;
};

struct DqnOptions {
    int episodes = 500;
    double gamma = 0.99;
    double lr = 1e-3;
    std::size_t buffer_capacity = 10000;
    std::size_t batch_size = 64;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay = 0.995;  // per episode
    int max_steps = 200;
    std::vector<int> hidden{64, 64};
    bool target_network = false;
    int target_sync = 200;  // gradient steps between target copies
    bool random_starts = true;
    Cell start{0, 0};  // used when random_starts is off
    std::uint64_t seed = 0;
    bool zero_init = false;
    double divergence_limit = 1e6;
};

/// epsilon after `episode` completed episodes.
double epsilon_at(const DqnOptions& opt, int episode);

struct EpisodeLog {
    int episode = 0;
    double total_reward = 0.0;
    int steps = 0;
    double epsilon = 0.0;
};

struct DqnTraining {
    DenseNet net;
    std::vector<EpisodeLog> log;
    bool diverged = false;
    double seconds = 0.0;
};

DenseNet make_qnet(const DqnOptions& opt);

/// r for terminal transitions, r + gamma * max_a' Q(s', a') otherwise.
std::vector<double> dqn_targets(const DenseNet& net, std::span<const Transition> batch, double gamma);

/// One Adam step on the squared TD error of the taken actions. Returns the
/// loss before the step.
double dqn_update(DenseNet& net, AdamState& adam, std::span<const Transition> batch, const DenseNet& target_net,
                  double gamma);

int greedy_action(const DenseNet& net, Vec2 state);

DqnTraining train_dqn(const GridEnv& env, const DqnOptions& opt = {});

struct Rollout {
    std::vector<Cell> path;  // start first
    Cell final_cell;
    bool reached = false;
    SourceEstimate estimate;
};

/// Greedy rollout from `start`; the final cell is converted to meters and
/// scored against `truth`.
Rollout rollout(const DenseNet& net, GridEnv env, Cell start, Vec2 domain_size, Vec2 truth);

/// CSV: episode,total_reward,steps,epsilon
void write_episode_log(const std::string& path, std::span<const EpisodeLog> log);

void save_policy(const std::string& path, const DenseNet& net, const GridEnv& env);
DenseNet load_policy(const std::string& path);

}  // namespace odorloc
