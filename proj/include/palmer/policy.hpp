#pragma once

#include <functional>

#include "palmer/planners.hpp"

namespace palmer {

struct PolicyStep {
    int action = 0;
    bool fallback = false;    // retrieval or query failed; acted greedily
    bool zero_length = false; // retrieval degenerated to the goal itself
    bool replanned = false;   // pi_M*: a fresh stitched plan was formed
};

// Baseline: argmax_a Q(s_t, a, s_g), lowest action index on ties.
class GreedyQPolicy {
public:
    explicit GreedyQPolicy(const QFunction& q) : q_(q) {}

    PolicyStep step(const Obs& s, const Obs& g) { return {q_.argmax_action(s, g), false, false, false}; }

private:
    const QFunction& q_;
};

// PER local MPC policy: retrieve tau_M(s_t, s_g) each step and act toward
// its first-step state with argmax_a Q. Zero-length retrievals and
// retrieval misses fall back to acting toward the goal directly.
// Retrieval snaps to a d_p ball around s_t, so the segment may begin a
// little behind the agent: leading states the goal test deems already
// reached are skipped, otherwise argmax_a Q(s, a, ~s) rewards wall bumps.
class PiMPolicy {
public:
    PiMPolicy(const Retriever& r, const QFunction& q) : r_(r), q_(q) {}

    PolicyStep step(const Obs& s, const Obs& g) {
        auto seg = r_.retrieve(s, g);
        if (!seg) return {q_.argmax_action(s, g), true, false, false};
        if (seg->len() == 0) return {q_.argmax_action(s, g), false, true, false};
        for (std::size_t p = seg->i + 1; p <= seg->j; ++p) {
            const Obs& target = r_.log().state(seg->episode, p);
            if (!q_.goal_test().equal(target, s))
                return {q_.argmax_action(s, target), false, false, false};
        }
        return {q_.argmax_action(s, g), false, true, false};
    }

private:
    const Retriever& r_;
    const QFunction& q_;
};

// Global replanning policy: R-PRM query each step (or every k steps),
// acting toward the stitched trajectory's first-step state. Falls back to
// the local PER policy when the roadmap query comes back empty.
class PiMStarPolicy {
public:
    PiMStarPolicy(const Roadmap& map, const Retriever& r, const QFunction& q,
                  long long replan_every = 1)
        : map_(map), r_(r), q_(q), local_(r, q), replan_every_(std::max(1ll, replan_every)) {}

    PolicyStep step(const Obs& s, const Obs& g) {
        bool replanned = false;
        if (since_replan_ >= replan_every_ || plan_.empty()) {
            auto stitched = rprm_query(map_, r_, s, g);
            replanned = true;
            since_replan_ = 0;
            plan_.clear();
            if (stitched) plan_ = stitched->flatten_states(r_.log());
        }
        ++since_replan_;
        if (plan_.empty()) {
            PolicyStep out = local_.step(s, g);
            out.fallback = true;
            out.replanned = replanned;
            return out;
        }
        if (plan_.size() == 1) {
            // zero-length plan: the roadmap thinks we are at the goal
            return {q_.argmax_action(s, g), false, true, replanned};
        }
        std::size_t last = plan_.size() - 1;
        std::size_t idx = replanned ? std::min<std::size_t>(1, last)
                                    : std::min<std::size_t>(std::size_t(replan_every_), last);
        // skip plan states already covered by the goal test (stitch slack)
        while (idx < last && q_.goal_test().equal(r_.log().state(plan_[idx]), s)) ++idx;
        const Obs& target = r_.log().state(plan_[idx]);
        if (q_.goal_test().equal(target, s)) return {q_.argmax_action(s, g), false, true, replanned};
        return {q_.argmax_action(s, target), false, false, replanned};
    }

private:
    const Roadmap& map_;
    const Retriever& r_;
    const QFunction& q_;
    PiMPolicy local_;
    long long replan_every_;
    long long since_replan_ = std::numeric_limits<long long>::max() / 2;
    std::vector<std::size_t> plan_;
};

// Rollout engine -------------------------------------------------------------

struct RolloutResult {
    Episode traj; // recorded observations and actions, buffer-appendable
    bool success = false;
    long long steps_taken = 0;
    Obs goal;
    std::vector<PolicyStep> decisions;
};

// Environment access is injected: `observe` reads the current observation,
// `apply` advances the environment, `succeeded` is the harness's
// ground-truth proximity oracle. The success predicate is checked before
// the first action and after every step.
struct RolloutHooks {
    std::function<Obs()> observe;
    std::function<void(int action)> apply;
    std::function<bool()> succeeded;
};

inline RolloutResult execute(const std::function<PolicyStep(const Obs&, const Obs&)>& policy,
                             const RolloutHooks& hooks, const Obs& goal, long long budget) {
    if (budget < 1) throw std::invalid_argument("execute: budget must be >= 1");
    RolloutResult out;
    out.goal = goal;
    out.traj.states.push_back(hooks.observe());
    if (hooks.succeeded()) {
        out.success = true;
        out.steps_taken = 0;
        return out;
    }
    for (long long step = 1; step <= budget; ++step) {
        PolicyStep d = policy(out.traj.states.back(), goal);
        hooks.apply(d.action);
        out.traj.actions.push_back(d.action);
        out.traj.states.push_back(hooks.observe());
        out.decisions.push_back(d);
        out.steps_taken = step;
        if (hooks.succeeded()) {
            out.success = true;
            break;
        }
    }
    return out;
}

} // namespace palmer
