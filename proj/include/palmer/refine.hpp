#pragma once

#include "palmer/buffer.hpp"
#include "palmer/config.hpp"
#include "palmer/policy.hpp"

namespace palmer {

struct RefineConfig {
    long long rounds = 1;
    long long goals_per_round = 100;
    double budget_multiplier = 4.0;
    bool keep_only_successes = true;
    long long target_steps = 0; // > 0: collect until reached, then truncate to exactly this

    static RefineConfig from_config(const Config& c) {
        RefineConfig r;
        r.rounds = c.integer("refine.rounds", r.rounds);
        r.goals_per_round = c.integer("refine.goals_per_round", r.goals_per_round);
        r.budget_multiplier = c.real("refine.budget_multiplier", r.budget_multiplier);
        r.keep_only_successes = c.flag("refine.keep_only_successes", r.keep_only_successes);
        r.target_steps = c.integer("refine.target_steps", r.target_steps);
        if (r.rounds < 1) throw std::runtime_error("refine.rounds must be >= 1");
        return r;
    }
};

struct RoundReport {
    long long round = 0;
    long long attempts = 0;
    long long successes = 0;
    double success_rate = 0.0;
    double mean_success_len = 0.0;
    std::size_t collected_steps = 0;
};

// One exploitation round: plan + execute `goals_per_round` rollouts and
// insert the kept trajectories as new episodes. `run_one` samples a
// (start, goal) pair and runs the full rollout; the harness wires in the
// environment and the ground-truth success oracle.
template <typename RunOne>
RoundReport refinement_round(TrajectoryLog& log, RunOne&& run_one, const RefineConfig& cfg,
                             Rng& rng, long long round_idx = 0) {
    RoundReport rep;
    rep.round = round_idx;
    double len_sum = 0.0;
    for (long long k = 0; k < cfg.goals_per_round; ++k) {
        RolloutResult res = run_one(rng);
        ++rep.attempts;
        if (res.success) {
            ++rep.successes;
            len_sum += double(res.steps_taken);
        }
        bool keep = res.success || !cfg.keep_only_successes;
        if (keep && !res.traj.actions.empty()) {
            rep.collected_steps += res.traj.actions.size();
            log.append_episode(std::move(res.traj));
        }
    }
    rep.success_rate = rep.attempts ? double(rep.successes) / double(rep.attempts) : 0.0;
    rep.mean_success_len = rep.successes ? len_sum / double(rep.successes) : 0.0;
    return rep;
}

// Keeps the leading `steps` transitions, truncating the final episode.
inline TrajectoryLog truncate_log(const TrajectoryLog& log, std::size_t steps) {
    TrajectoryLog out(log.obs_dim(), log.action_arity());
    std::size_t kept = 0;
    for (std::size_t e = 0; e < log.episode_count() && kept < steps; ++e) {
        const auto& ep = log.episode(int(e));
        std::size_t take = std::min(ep.length(), steps - kept);
        if (take == 0) break;
        Episode cut;
        cut.states.assign(ep.states.begin(), ep.states.begin() + long(take) + 1);
        cut.actions.assign(ep.actions.begin(), ep.actions.begin() + long(take));
        out.append_episode(std::move(cut));
        kept += take;
    }
    return out;
}

struct RefineCollection {
    TrajectoryLog refined;
    std::vector<RoundReport> rounds;
};

// Runs rounds until the collected successful steps reach `target_steps`
// (or `rounds` rounds have passed), then truncates to exactly the target.
// The refined log contains only newly-executed trajectories.
template <typename RunOne>
RefineCollection collect_refined_log(std::size_t obs_dim, int action_arity, RunOne&& run_one,
                                     const RefineConfig& cfg, Rng& rng) {
    RefineCollection out{TrajectoryLog(obs_dim, action_arity), {}};
    for (long long round = 0; round < cfg.rounds; ++round) {
        out.rounds.push_back(refinement_round(out.refined, run_one, cfg, rng, round));
        if (cfg.target_steps > 0 && out.refined.total_steps() >= std::size_t(cfg.target_steps))
            break;
    }
    if (cfg.target_steps > 0 && out.refined.total_steps() > std::size_t(cfg.target_steps))
        out.refined = truncate_log(out.refined, std::size_t(cfg.target_steps));
    return out;
}

// Retrains all model components from scratch on the refined data only.
// `train` maps a log to fresh models; callers decide what "models" are.
template <typename TrainFn>
auto retrain_all(const TrajectoryLog& refined, std::size_t required_steps, TrainFn&& train) {
    if (refined.total_steps() < required_steps)
        throw std::runtime_error("retrain_all: refined data has " +
                                 std::to_string(refined.total_steps()) + " steps, need " +
                                 std::to_string(required_steps));
    return train(refined);
}

} // namespace palmer
