#pragma once

// Test-side oracles. Each is an independent route to a value the
// implementation computes some other way; none of them share code with
// the paths they check.

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "palmer/buffer.hpp"
#include "palmer/env.hpp"

namespace palmer::testing {

// Synchronous value iteration over the true grid transition model with
// the indicator TD target; the exact reference for converged tabular Q.
class GridValueIteration {
public:
    GridValueIteration(const GridEnv& env, double gamma, int sweeps = 2000, double tol = 1e-14)
        : env_(env), gamma_(gamma) {
        const auto& cells = env.free_cells();
        n_ = cells.size();
        for (std::size_t i = 0; i < n_; ++i) id_[cells[i]] = int(i);
        next_.assign(n_ * 4, 0);
        for (std::size_t i = 0; i < n_; ++i) {
            auto [x, y] = cells[i];
            for (int a = 0; a < 4; ++a) {
                auto out = env.step(AgentState{double(x), double(y)}, a);
                next_[i * 4 + std::size_t(a)] = id_.at({int(out.next.x), int(out.next.y)});
            }
        }
        q_.assign(n_ * 4 * n_, 0.0);
        std::vector<double> fresh(q_.size());
        for (int it = 0; it < sweeps; ++it) {
            double delta = 0.0;
            for (std::size_t g = 0; g < n_; ++g)
                for (std::size_t s = 0; s < n_; ++s)
                    for (int a = 0; a < 4; ++a) {
                        std::size_t ns = std::size_t(next_[s * 4 + std::size_t(a)]);
                        double v = (ns == g) ? 1.0 : gamma * max_at(ns, g);
                        fresh[(s * 4 + std::size_t(a)) * n_ + g] = v;
                        delta = std::max(delta, std::abs(v - q_[(s * 4 + std::size_t(a)) * n_ + g]));
                    }
            q_.swap(fresh);
            if (delta < tol) break;
        }
    }

    int cell_id(int x, int y) const { return id_.at({x, y}); }
    double q(int s, int a, int g) const { return q_[(std::size_t(s) * 4 + std::size_t(a)) * n_ + std::size_t(g)]; }
    double max_q(int s, int g) const { return max_at(std::size_t(s), std::size_t(g)); }
    int argmax(int s, int g) const {
        int best = 0;
        for (int a = 1; a < 4; ++a)
            if (q(s, a, g) > q(s, best, g)) best = a;
        return best;
    }
    std::size_t state_count() const { return n_; }

private:
    double max_at(std::size_t s, std::size_t g) const {
        double m = q_[(s * 4) * n_ + g];
        for (int a = 1; a < 4; ++a) m = std::max(m, q_[(s * 4 + std::size_t(a)) * n_ + g]);
        return m;
    }

    const GridEnv& env_;
    double gamma_;
    std::size_t n_ = 0;
    std::map<std::pair<int, int>, int> id_;
    std::vector<int> next_;
    std::vector<double> q_;
};

// A log that enumerates every (state, action) pair of a grid exactly once,
// as single-transition episodes. Gives sweep training the complete model.
inline TrajectoryLog enumerate_transitions(const GridEnv& env) {
    TrajectoryLog log(env.obs_dim(), env.action_arity());
    for (auto [x, y] : env.free_cells()) {
        AgentState s{double(x), double(y)};
        for (int a = 0; a < env.action_arity(); ++a) {
            Episode ep;
            ep.states.push_back(env.observe(s));
            ep.states.push_back(env.observe(env.step(s, a).next));
            ep.actions.push_back(a);
            log.append_episode(std::move(ep));
        }
    }
    return log;
}

// Brute-force PER: enumerate all same-episode state pairs (i, j), i <= j,
// start in A, end in B, j - i <= l_max; pick max reward with the
// (episode, i) tie-break. Reward defaults to negative length.
struct BrutePerResult {
    bool found = false;
    Segment seg;
};

inline BrutePerResult brute_force_retrieve(const TrajectoryLog& log,
                                           const std::vector<std::size_t>& start_set,
                                           const std::vector<std::size_t>& end_set,
                                           long long l_max,
                                           const std::vector<double>* step_rewards = nullptr) {
    std::vector<char> in_start(log.state_count(), 0), in_end(log.state_count(), 0);
    for (auto i : start_set) in_start[i] = 1;
    for (auto i : end_set) in_end[i] = 1;
    BrutePerResult best;
    double best_reward = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < log.episode_count(); ++e) {
        const auto& ep = log.episode(int(e));
        std::size_t base_state = log.global_state_index(int(e), 0);
        std::size_t base_trans = ep.length() ? log.global_transition_index(int(e), 0) : 0;
        for (std::size_t i = 0; i <= ep.length(); ++i) {
            if (!in_start[base_state + i]) continue;
            for (std::size_t j = i; j <= ep.length() && (long long)(j - i) <= l_max; ++j) {
                if (!in_end[base_state + j]) continue;
                double reward = 0.0;
                if (step_rewards) {
                    for (std::size_t k = i; k < j; ++k) reward += (*step_rewards)[base_trans + k];
                } else {
                    reward = -double(j - i);
                }
                if (reward > best_reward) {
                    best_reward = reward;
                    best = {true, Segment{int(e), i, j}};
                }
            }
        }
    }
    return best;
}

// Bellman-Ford shortest path; reference for Dijkstra.
struct BfGraph {
    int vertices = 0;
    std::vector<std::tuple<int, int, double>> edges; // u -> v, cost
};

inline std::optional<double> bellman_ford(const BfGraph& g, int src, int dst) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(std::size_t(g.vertices), inf);
    dist[std::size_t(src)] = 0.0;
    for (int it = 0; it < g.vertices; ++it) {
        bool changed = false;
        for (const auto& [u, v, c] : g.edges) {
            if (dist[std::size_t(u)] + c < dist[std::size_t(v)]) {
                dist[std::size_t(v)] = dist[std::size_t(u)] + c;
                changed = true;
            }
        }
        if (!changed) break;
    }
    if (dist[std::size_t(dst)] == inf) return std::nullopt;
    return dist[std::size_t(dst)];
}

} // namespace palmer::testing
