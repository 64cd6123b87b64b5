#pragma once

#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "palmer/buffer.hpp"
#include "palmer/embed.hpp"

namespace palmer {

struct PerConfig {
    double d_p = 1.0;
    long long l_max = 20; // segment length cap in timesteps

    // reward per global transition index; null means R(tau) = -len(tau)
    std::shared_ptr<const std::vector<double>> step_rewards;

    bool neg_length() const { return step_rewards == nullptr; }
};

// Perceptual Experience Retrieval over an embedding index: radius
// neighbor queries and the segment-retrieval optimizer. All queries are
// exact linear scans; reads only, safe to share.
class Retriever {
public:
    Retriever(const Encoder& enc, const EmbeddingIndex& index, const TrajectoryLog& log,
              PerConfig cfg)
        : enc_(enc), index_(index), log_(log), cfg_(std::move(cfg)) {
        if (index_.rows() != log_.state_count())
            throw std::invalid_argument("embedding index does not match log state count");
        if (cfg_.d_p < 0) throw std::invalid_argument("per: d_p must be non-negative");
        if (cfg_.l_max < 1) throw std::invalid_argument("per: l_max must be >= 1");
        if (cfg_.step_rewards) {
            if (cfg_.step_rewards->size() != log_.total_steps())
                throw std::invalid_argument("per: step_rewards size mismatch");
            build_prefix_rewards();
        }
    }

    const PerConfig& config() const { return cfg_; }
    const TrajectoryLog& log() const { return log_; }
    const EmbeddingIndex& index() const { return index_; }
    const Encoder& encoder() const { return enc_; }

    // N_dp(query): global state indices within radius d_p, ascending.
    std::vector<std::size_t> neighbors(const Obs& query) const {
        return neighbors_z(enc_.embed(query));
    }

    std::vector<std::size_t> neighbors_z(const Vec& z) const {
        std::vector<std::size_t> out;
        double r2 = cfg_.d_p * cfg_.d_p;
        for (Eigen::Index i = 0; i < index_.z.rows(); ++i)
            if ((index_.z.row(i).transpose() - z).squaredNorm() <= r2)
                out.push_back(std::size_t(i));
        return out;
    }

    // cached neighbor set of a buffer state (planners query these repeatedly)
    const std::vector<std::size_t>& neighbors_of_state(std::size_t global) const {
        auto it = state_cache_.find(global);
        if (it == state_cache_.end()) {
            it = state_cache_.emplace(global, neighbors_z(index_.z.row(Eigen::Index(global)).transpose())).first;
        }
        return it->second;
    }

    std::size_t visitation_count(const Obs& query) const { return neighbors(query).size(); }

    // Eq. 1: highest-reward contiguous segment whose start lies in
    // N_dp(s_c) and end in N_dp(s_g), with len <= l_max. In neg_length
    // mode this is the minimal j - i pair. Ties resolve to the lowest
    // (episode, i, j). Absence is a value.
    std::optional<Segment> retrieve(const Obs& s_c, const Obs& s_g) const {
        return retrieve_between(neighbors(s_c), neighbors(s_g));
    }

    std::optional<Segment> retrieve_states(std::size_t c_global, std::size_t g_global) const {
        return retrieve_between(neighbors_of_state(c_global), neighbors_of_state(g_global));
    }

    std::optional<Segment> retrieve_between(std::span<const std::size_t> start_set,
                                            std::span<const std::size_t> end_set) const {
        if (start_set.empty() || end_set.empty()) return std::nullopt;
        if (cfg_.neg_length()) return solve_min_len(start_set, end_set);
        return solve_max_reward(start_set, end_set);
    }

    double segment_len_metric(const Obs& s_c, const Obs& s_g) const {
        auto seg = retrieve(s_c, s_g);
        if (!seg) return std::numeric_limits<double>::infinity();
        return double(seg->len());
    }

    double reward_of(const Segment& s) const {
        if (cfg_.neg_length()) return -double(s.len());
        const auto& prefix = prefix_rewards_[std::size_t(s.episode)];
        return prefix[s.j] - prefix[s.i];
    }

    double cost_of(const Segment& s) const { return -reward_of(s); }

private:
    struct EpisodeRun {
        int episode;
        std::size_t a_begin, a_end; // range in start_set
        std::size_t b_begin, b_end; // range in end_set
    };

    // split both (ascending) index sets into per-episode position lists
    template <typename Fn>
    void for_each_shared_episode(std::span<const std::size_t> a, std::span<const std::size_t> b,
                                 Fn&& fn) const {
        std::size_t ia = 0, ib = 0;
        while (ia < a.size() && ib < b.size()) {
            StateRef ra = log_.locate_state(a[ia]);
            StateRef rb = log_.locate_state(b[ib]);
            if (ra.episode < rb.episode) {
                ++ia;
                continue;
            }
            if (rb.episode < ra.episode) {
                ++ib;
                continue;
            }
            int e = ra.episode;
            std::size_t base = log_.global_state_index(e, 0);
            std::size_t limit = base + log_.episode(e).length();
            std::size_t ja = ia, jb = ib;
            while (ja < a.size() && a[ja] <= limit) ++ja;
            while (jb < b.size() && b[jb] <= limit) ++jb;
            fn(e, base, a.subspan(ia, ja - ia), b.subspan(ib, jb - ib));
            ia = ja;
            ib = jb;
        }
    }

    std::optional<Segment> solve_min_len(std::span<const std::size_t> a,
                                         std::span<const std::size_t> b) const {
        bool found = false;
        Segment best{};
        std::size_t best_len = std::size_t(cfg_.l_max) + 1;
        for_each_shared_episode(a, b, [&](int e, std::size_t base, auto sa, auto sb) {
            std::size_t jb = 0;
            for (std::size_t ia = 0; ia < sa.size(); ++ia) {
                while (jb < sb.size() && sb[jb] < sa[ia]) ++jb;
                if (jb == sb.size()) break;
                std::size_t diff = sb[jb] - sa[ia];
                if (diff < best_len) {
                    best_len = diff;
                    best = Segment{e, sa[ia] - base, sb[jb] - base};
                    found = true;
                }
            }
        });
        if (!found) return std::nullopt;
        return best;
    }

    std::optional<Segment> solve_max_reward(std::span<const std::size_t> a,
                                            std::span<const std::size_t> b) const {
        bool found = false;
        Segment best{};
        double best_r = -std::numeric_limits<double>::infinity();
        for_each_shared_episode(a, b, [&](int e, std::size_t base, auto sa, auto sb) {
            const auto& prefix = prefix_rewards_[std::size_t(e)];
            std::size_t lb = 0;
            for (std::size_t ia = 0; ia < sa.size(); ++ia) {
                while (lb < sb.size() && sb[lb] < sa[ia]) ++lb;
                for (std::size_t ib = lb; ib < sb.size(); ++ib) {
                    std::size_t diff = sb[ib] - sa[ia];
                    if ((long long)diff > cfg_.l_max) break;
                    double r = prefix[sb[ib] - base] - prefix[sa[ia] - base];
                    if (r > best_r) {
                        best_r = r;
                        best = Segment{e, sa[ia] - base, sb[ib] - base};
                        found = true;
                    }
                }
            }
        });
        if (!found) return std::nullopt;
        return best;
    }

    void build_prefix_rewards() {
        prefix_rewards_.resize(log_.episode_count());
        for (std::size_t e = 0; e < log_.episode_count(); ++e) {
            const auto& ep = log_.episode(int(e));
            auto& pre = prefix_rewards_[e];
            pre.assign(ep.length() + 1, 0.0);
            for (std::size_t k = 0; k < ep.length(); ++k)
                pre[k + 1] = pre[k] + (*cfg_.step_rewards)[log_.global_transition_index(int(e), k)];
        }
    }

    const Encoder& enc_;
    const EmbeddingIndex& index_;
    const TrajectoryLog& log_;
    PerConfig cfg_;
    std::vector<std::vector<double>> prefix_rewards_;
    mutable std::map<std::size_t, std::vector<std::size_t>> state_cache_;
};

} // namespace palmer
