#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "palmer/io.hpp"
#include "palmer/rng.hpp"

namespace palmer {

// An observation as seen by the learner. Stored as float32 so that log
// round-trips are bit-exact.
using Obs = std::vector<float>;

inline bool obs_equal(const Obs& a, const Obs& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

inline double obs_distance(const Obs& a, const Obs& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

// One transition, as supplied to append_trajectory.
struct TransitionRecord {
    Obs obs;
    int action = 0;
    Obs next_obs;
};

// A contiguous run of transitions: states[k] --actions[k]--> states[k+1].
struct Episode {
    std::vector<Obs> states;  // length = transitions + 1
    std::vector<int> actions; // length = transitions

    std::size_t length() const { return actions.size(); }
};

// A contiguous slice of one episode, by state positions i <= j.
// len = j - i transitions; i == j is a single-state segment.
struct Segment {
    int episode = -1;
    std::size_t i = 0;
    std::size_t j = 0;

    std::size_t len() const { return j - i; }
    bool operator==(const Segment&) const = default;
};

struct StateRef {
    int episode;
    std::size_t pos; // state position within episode, 0..length
};

// Hindsight sample: transition at (episode, pos) with goal state at pos + T.
struct HindsightSample {
    int episode = 0;
    std::size_t pos = 0;
    long long t_offset = 0;
};

enum class HindsightMode { geometric, mixed_uniform };

struct HindsightParams {
    double geom_p = 0.1;    // geometric mode
    long long t_max = 10;   // mixed_uniform mode
};

// The replay buffer M: episodic storage of (obs, action, next_obs) runs
// with global state and transition indexing.
class TrajectoryLog {
public:
    TrajectoryLog(std::size_t obs_dim, int action_arity)
        : obs_dim_(obs_dim), action_arity_(action_arity) {
        if (action_arity <= 0) throw std::invalid_argument("action arity must be positive");
        state_prefix_.push_back(0);
        trans_prefix_.push_back(0);
    }

    std::size_t obs_dim() const { return obs_dim_; }
    int action_arity() const { return action_arity_; }
    std::size_t episode_count() const { return episodes_.size(); }
    std::size_t total_steps() const { return trans_prefix_.back(); }
    std::size_t state_count() const { return state_prefix_.back(); }
    bool empty() const { return episodes_.empty(); }

    const Episode& episode(int e) const {
        check_episode(e);
        return episodes_[std::size_t(e)];
    }

    // Appends a new episode from a transition run. The chain must be
    // contiguous: next_obs of step k equals obs of step k+1 exactly.
    void append_trajectory(std::span<const TransitionRecord> transitions) {
        if (transitions.empty()) throw std::invalid_argument("append_trajectory: empty transition run");
        Episode ep;
        ep.states.reserve(transitions.size() + 1);
        ep.actions.reserve(transitions.size());
        for (std::size_t k = 0; k < transitions.size(); ++k) {
            const auto& tr = transitions[k];
            check_obs(tr.obs);
            check_obs(tr.next_obs);
            check_action(tr.action);
            if (k == 0) {
                ep.states.push_back(tr.obs);
            } else if (!obs_equal(transitions[k - 1].next_obs, tr.obs)) {
                throw std::invalid_argument("append_trajectory: broken chain at step " + std::to_string(k));
            }
            ep.actions.push_back(tr.action);
            ep.states.push_back(tr.next_obs);
        }
        push_episode(std::move(ep));
    }

    // Direct episode form used by collectors and rollout recording.
    void append_episode(Episode ep) {
        if (ep.actions.empty()) throw std::invalid_argument("append_episode: no transitions");
        if (ep.states.size() != ep.actions.size() + 1)
            throw std::invalid_argument("append_episode: states/actions size mismatch");
        for (const auto& o : ep.states) check_obs(o);
        for (int a : ep.actions) check_action(a);
        push_episode(std::move(ep));
    }

    std::size_t global_state_index(int e, std::size_t pos) const {
        check_episode(e);
        if (pos >= episodes_[std::size_t(e)].states.size())
            throw std::out_of_range("state position out of range");
        return state_prefix_[std::size_t(e)] + pos;
    }

    StateRef locate_state(std::size_t global) const {
        if (global >= state_count()) throw std::out_of_range("global state index out of range");
        // binary search over prefix sums
        std::size_t lo = 0, hi = episodes_.size();
        while (lo + 1 < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (state_prefix_[mid] <= global) lo = mid; else hi = mid;
        }
        return {int(lo), global - state_prefix_[lo]};
    }

    const Obs& state(std::size_t global) const {
        StateRef r = locate_state(global);
        return episodes_[std::size_t(r.episode)].states[r.pos];
    }

    const Obs& state(int e, std::size_t pos) const {
        check_episode(e);
        return episodes_[std::size_t(e)].states.at(pos);
    }

    std::size_t global_transition_index(int e, std::size_t k) const {
        check_episode(e);
        if (k >= episodes_[std::size_t(e)].length())
            throw std::out_of_range("transition index out of range");
        return trans_prefix_[std::size_t(e)] + k;
    }

    StateRef locate_transition(std::size_t global) const {
        if (global >= total_steps()) throw std::out_of_range("global transition index out of range");
        std::size_t lo = 0, hi = episodes_.size();
        while (lo + 1 < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (trans_prefix_[mid] <= global) lo = mid; else hi = mid;
        }
        return {int(lo), global - trans_prefix_[lo]};
    }

    Segment segment(int e, std::size_t i, std::size_t j) const {
        check_episode(e);
        const auto& ep = episodes_[std::size_t(e)];
        if (i > j) throw std::invalid_argument("segment: i > j");
        if (j >= ep.states.size())
            throw std::out_of_range("segment: j beyond episode end");
        return Segment{e, i, j};
    }

    std::vector<Obs> segment_states(const Segment& s) const {
        const auto& ep = episode(s.episode);
        return {ep.states.begin() + long(s.i), ep.states.begin() + long(s.j) + 1};
    }

    std::vector<int> segment_actions(const Segment& s) const {
        const auto& ep = episode(s.episode);
        return {ep.actions.begin() + long(s.i), ep.actions.begin() + long(s.j)};
    }

    std::vector<std::size_t> segment_state_indices(const Segment& s) const {
        std::vector<std::size_t> out;
        out.reserve(s.len() + 1);
        for (std::size_t p = s.i; p <= s.j; ++p)
            out.push_back(global_state_index(s.episode, p));
        return out;
    }

    // Hindsight relabelling: draws a transition (s_t, a_t, s_{t+1}) and a
    // goal s_{t+T} from the same episode. Geometric mode draws T ~ Geom(p)
    // with support {1,2,...}; mixed_uniform draws T ~ U{0..T_max} half the
    // time and T ~ U{T_max..remaining} the other half. Draws whose goal
    // would fall outside the episode are rejected and redrawn.
    HindsightSample sample_hindsight(HindsightMode mode, Rng& rng,
                                     const HindsightParams& params = {}) const {
        if (empty() || total_steps() == 0) throw std::runtime_error("sample_hindsight: empty log");
        if (longest_episode_ < 2) throw std::runtime_error("sample_hindsight: no episode with >= 2 steps");
        for (int attempt = 0; attempt < 100000; ++attempt) {
            std::size_t t = rng.uniform_index(total_steps());
            StateRef r = locate_transition(t);
            long long len = (long long)episodes_[std::size_t(r.episode)].length();
            if (len < 2) continue;
            long long k = (long long)r.pos;
            long long T = 0;
            if (mode == HindsightMode::geometric) {
                T = rng.geometric(params.geom_p);
                if (k + T > len) continue;
            } else {
                long long remaining = len - k; // max valid offset
                if (rng.coin()) {
                    T = rng.uniform_int(0, std::min(params.t_max, remaining));
                } else {
                    if (remaining <= params.t_max) continue;
                    T = rng.uniform_int(params.t_max, remaining);
                }
            }
            return HindsightSample{r.episode, r.pos, T};
        }
        throw std::runtime_error("sample_hindsight: rejection limit exceeded");
    }

    const Obs& hs_obs(const HindsightSample& h) const { return state(h.episode, h.pos); }
    int hs_action(const HindsightSample& h) const { return episode(h.episode).actions.at(h.pos); }
    const Obs& hs_next_obs(const HindsightSample& h) const { return state(h.episode, h.pos + 1); }
    const Obs& hs_goal(const HindsightSample& h) const {
        return state(h.episode, h.pos + std::size_t(h.t_offset));
    }

    // ---- binary log format (.plog) ----
    static constexpr std::uint32_t kFormatVersion = 1;

    void save(const std::string& path) const {
        BinWriter w(path);
        w.magic("PLOG");
        w.u32(kFormatVersion);
        w.u32(std::uint32_t(obs_dim_));
        w.u32(std::uint32_t(action_arity_));
        w.u64(episodes_.size());
        for (const auto& ep : episodes_) w.u64(ep.length());
        for (const auto& ep : episodes_) {
            for (const auto& o : ep.states) w.f32_span(o.data(), o.size());
            for (int a : ep.actions) w.i32(a);
        }
        w.close();
    }

    static TrajectoryLog load(const std::string& path) {
        BinReader r(path);
        r.expect_magic("PLOG", "plog");
        r.expect_version(kFormatVersion, "plog");
        std::size_t obs_dim = r.u32();
        int arity = int(r.u32());
        if (arity <= 0) throw std::runtime_error("plog: corrupt header (bad action arity)");
        std::uint64_t n_ep = r.u64();
        std::vector<std::uint64_t> lens(n_ep);
        for (auto& l : lens) {
            l = r.u64();
            if (l == 0) throw std::runtime_error("plog: corrupt episode table (zero-length episode)");
        }
        TrajectoryLog log(obs_dim, arity);
        for (std::uint64_t e = 0; e < n_ep; ++e) {
            Episode ep;
            ep.states.assign(lens[e] + 1, Obs(obs_dim));
            ep.actions.assign(lens[e], 0);
            for (auto& o : ep.states) r.f32_span(o.data(), obs_dim);
            for (auto& a : ep.actions) {
                a = r.i32();
                if (a < 0 || a >= arity) throw std::runtime_error("plog: action out of range");
            }
            log.push_episode(std::move(ep));
        }
        if (!r.at_eof()) throw std::runtime_error("plog: trailing bytes after payload");
        return log;
    }

private:
    void check_episode(int e) const {
        if (e < 0 || std::size_t(e) >= episodes_.size())
            throw std::out_of_range("episode id out of range");
    }
    void check_obs(const Obs& o) const {
        if (o.size() != obs_dim_) throw std::invalid_argument("observation dimension mismatch");
    }
    void check_action(int a) const {
        if (a < 0 || a >= action_arity_) throw std::invalid_argument("action index out of range");
    }
    void push_episode(Episode ep) {
        longest_episode_ = std::max(longest_episode_, (long long)ep.length());
        state_prefix_.push_back(state_prefix_.back() + ep.states.size());
        trans_prefix_.push_back(trans_prefix_.back() + ep.actions.size());
        episodes_.push_back(std::move(ep));
    }

    std::size_t obs_dim_;
    int action_arity_;
    std::vector<Episode> episodes_;
    std::vector<std::size_t> state_prefix_; // episodes + 1
    std::vector<std::size_t> trans_prefix_; // episodes + 1
    long long longest_episode_ = 0;
};

} // namespace palmer
