#pragma once

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>

#include "palmer/embed.hpp"
#include "palmer/env.hpp"
#include "palmer/per.hpp"
#include "palmer/planners.hpp"
#include "palmer/policy.hpp"
#include "palmer/qlearn.hpp"
#include "palmer/refine.hpp"
#include "palmer/svg.hpp"

namespace palmer {

using Json = nlohmann::ordered_json;

inline std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
    return buf;
}

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// Goal-equality rule per observation mode: exact bytes for invertible
// liftings, proximity tolerance for random features / point mass.
inline GoalTest make_goal_test(const Env& env) {
    if (env.is_grid() && env.grid().spec().obs_mode != ObsMode::random_feature)
        return GoalTest{true, 0.0};
    return GoalTest{false, env.obs_eq_tol()};
}

// Statistics -----------------------------------------------------------------

// Wilson 95% score interval for a binomial proportion.
inline std::pair<double, double> wilson_interval(long long successes, long long n) {
    if (n == 0) return {0.0, 1.0};
    const double z = 1.959963984540054;
    double p = double(successes) / double(n);
    double z2 = z * z;
    double denom = 1.0 + z2 / double(n);
    double center = (p + z2 / (2.0 * double(n))) / denom;
    double half = z * std::sqrt(p * (1.0 - p) / double(n) + z2 / (4.0 * double(n) * double(n))) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

// Spearman rank correlation with average ranks on ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: bad input");
    auto ranks = [](const std::vector<double>& v) {
        std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = (double(i) + double(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(ra.size());
    mb /= double(rb.size());
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0 || db == 0) return 0.0;
    return num / std::sqrt(da * db);
}

// Evaluation protocol --------------------------------------------------------

struct EvalConfig {
    std::vector<long long> bands{4, 8, 12};
    long long pairs_per_band = 200;
    double success_radius = 1.0; // multiples of delta
    double budget_multiplier = 4.0;
    std::string band_mode = "euclid"; // euclid | geodesic
    std::uint64_t seed = 0;
    long long max_rejections = 4000000;

    static EvalConfig from_config(const Config& c) {
        EvalConfig e;
        e.bands = c.int_list("eval.bands", e.bands);
        e.pairs_per_band = c.integer("eval.pairs_per_band", e.pairs_per_band);
        e.success_radius = c.real("eval.success_radius", e.success_radius);
        e.budget_multiplier = c.real("eval.budget_multiplier", e.budget_multiplier);
        e.band_mode = c.str("eval.band_mode", e.band_mode);
        e.seed = std::uint64_t(c.integer("seed", 0));
        if (e.bands.empty() || e.pairs_per_band < 1)
            throw std::runtime_error("eval config: bands nonempty and pairs_per_band >= 1 required");
        return e;
    }
};

// Ground-truth states whose observations appear in the log; evaluation
// start/goal pairs are drawn from these.
inline std::vector<AgentState> observed_states(const Env& env, const TrajectoryLog& log) {
    StateCodec codec = StateCodec::from_log(log);
    std::vector<AgentState> out;
    out.reserve(codec.size());
    for (std::size_t i = 0; i < codec.size(); ++i) out.push_back(env.decode(codec.obs_of(int(i))));
    return out;
}

// Rejection-samples (start, goal) pairs whose distance falls in the band:
// euclidean in [n*delta, (n+1)*delta), or geodesic in [n, n+8) steps.
inline std::vector<std::pair<AgentState, AgentState>> sample_eval_pairs(
    const Env& env, const std::vector<AgentState>& candidates, long long band, long long count,
    const std::string& mode, Rng& rng, long long max_rejections = 4000000) {
    if (candidates.size() < 2) throw std::runtime_error("sample_eval_pairs: not enough states");
    std::vector<std::pair<AgentState, AgentState>> out;
    double delta = env.delta();
    for (long long rejections = 0; (long long)out.size() < count;) {
        const AgentState& a = candidates[rng.uniform_index(candidates.size())];
        const AgentState& b = candidates[rng.uniform_index(candidates.size())];
        bool ok = false;
        if (mode == "euclid") {
            double d = env.ground_distance(a, b);
            ok = d >= double(band) * delta && d < double(band + 1) * delta;
        } else if (mode == "geodesic") {
            auto g = env.geodesic(a, b);
            ok = g && *g >= band && *g < band + 8;
        } else {
            throw std::runtime_error("unknown eval.band_mode: " + mode);
        }
        if (ok) {
            out.push_back({a, b});
        } else if (++rejections > max_rejections) {
            throw std::runtime_error("sample_eval_pairs: band " + std::to_string(band) +
                                     " infeasible after " + std::to_string(rejections) + " rejections");
        }
    }
    return out;
}

using PolicyFn = std::function<PolicyStep(const Obs&, const Obs&)>;
using PolicyFactory = std::function<PolicyFn()>;

struct BandResult {
    long long band = 0;
    long long pairs = 0;
    long long successes = 0;
    double rate = 0.0;
    double ci_lo = 0.0, ci_hi = 1.0;
    double mean_steps_success = 0.0;
};

struct SuccessReport {
    std::string policy;
    std::vector<BandResult> bands;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
};

inline RolloutResult run_rollout(const Env& env, const AgentState& start, const AgentState& goal,
                                 const PolicyFn& policy, long long budget, double success_radius) {
    AgentState cur = start;
    RolloutHooks hooks{
        [&]() { return env.observe(cur); },
        [&](int a) { cur = env.step(cur, a).next; },
        [&]() { return env.ground_distance(cur, goal) <= success_radius; },
    };
    return execute(policy, hooks, env.observe(goal), budget);
}

// Per-band success rates with a 4n step budget (Fig 4 protocol, desk scale).
inline SuccessReport eval_success_curve(const Env& env, const std::vector<AgentState>& candidates,
                                        const PolicyFactory& factory, const EvalConfig& cfg,
                                        const std::string& policy_name, std::uint64_t config_hash) {
    SuccessReport rep;
    rep.policy = policy_name;
    rep.config_hash = config_hash;
    rep.seed = cfg.seed;
    for (long long band : cfg.bands) {
        Rng rng(cfg.seed ^ (0x9e3779b9u * std::uint64_t(band + 1)));
        auto pairs = sample_eval_pairs(env, candidates, band, cfg.pairs_per_band, cfg.band_mode, rng,
                                       cfg.max_rejections);
        BandResult br;
        br.band = band;
        br.pairs = cfg.pairs_per_band;
        long long budget = std::max(1ll, (long long)std::llround(cfg.budget_multiplier * double(band)));
        double step_sum = 0.0;
        for (const auto& [start, goal] : pairs) {
            PolicyFn policy = factory();
            auto res = run_rollout(env, start, goal, policy, budget,
                                   cfg.success_radius * env.delta());
            if (res.success) {
                ++br.successes;
                step_sum += double(res.steps_taken);
            }
        }
        br.rate = double(br.successes) / double(br.pairs);
        std::tie(br.ci_lo, br.ci_hi) = wilson_interval(br.successes, br.pairs);
        br.mean_steps_success = br.successes ? step_sum / double(br.successes) : 0.0;
        rep.bands.push_back(br);
    }
    return rep;
}

// False edges (Fig 5) --------------------------------------------------------

struct FalseEdgeCounts {
    std::size_t total = 0;
    std::size_t bfs_false = 0;     // ground-truth BFS > k * claimed bound
    std::size_t wall_crossing = 0; // straight endpoint line crosses a wall
};

inline bool line_crosses_blocked(const GridEnv& grid, double x0, double y0, double x1, double y1) {
    double len = std::hypot(x1 - x0, y1 - y0);
    int steps = std::max(2, int(std::ceil(len * 8.0)));
    for (int k = 0; k <= steps; ++k) {
        double t = double(k) / double(steps);
        int cx = int(std::lround(x0 + t * (x1 - x0)));
        int cy = int(std::lround(y0 + t * (y1 - y0)));
        if (grid.blocked(cx, cy)) return true;
    }
    return false;
}

// An edge is false when its endpoints' true BFS distance exceeds
// k * claimed_bound: the graph asserts reachability the world denies.
// Wall crossings of the straight endpoint line are counted alongside as
// the visual proxy used in roadmap figures.
inline FalseEdgeCounts false_edge_count(const Roadmap& map, const Env& env,
                                        const TrajectoryLog& log, double claimed_bound,
                                        double k_slack = 2.0) {
    FalseEdgeCounts out;
    if (!env.is_grid()) throw std::runtime_error("false_edge_count: grid environments only");
    const GridEnv& grid = env.grid();
    for (std::size_t u = 0; u < map.vertices.size(); ++u) {
        AgentState su = grid.decode(log.state(map.vertices[u]));
        for (const auto& e : map.out[u]) {
            AgentState sv = grid.decode(log.state(map.vertices[std::size_t(e.to)]));
            ++out.total;
            auto bfs = grid.geodesic(su, sv);
            if (!bfs || double(*bfs) > k_slack * claimed_bound) ++out.bfs_false;
            if (line_crosses_blocked(grid, su.x, su.y, sv.x, sv.y)) ++out.wall_crossing;
        }
    }
    return out;
}

// Baseline roadmap on explicit vertices (paired comparisons reuse the
// R-PRM vertex set).
inline Roadmap baseline_q_roadmap_on(const std::vector<std::size_t>& vertices,
                                     const TrajectoryLog& log, const QFunction& q,
                                     double threshold, const PlannerConfig& cfg) {
    Roadmap map;
    map.params = cfg;
    map.vertices = vertices;
    map.out.resize(vertices.size());
    for (std::size_t u = 0; u < vertices.size(); ++u) {
        const Obs& ou = log.state(vertices[u]);
        for (std::size_t v = u + 1; v < vertices.size(); ++v) {
            double dq = q.d_q(ou, log.state(vertices[v]));
            if (dq <= threshold) {
                map.out[u].push_back(RoadmapEdge{int(v), std::nullopt, dq, dq});
                map.out[v].push_back(RoadmapEdge{int(u), std::nullopt, dq, dq});
            }
        }
    }
    return map;
}

// Threshold whose baseline edge count matches a target directed-edge
// count: the k-th smallest pairwise d_Q.
inline double matched_threshold(const std::vector<std::size_t>& vertices, const TrajectoryLog& log,
                                const QFunction& q, std::size_t target_directed_edges) {
    std::vector<double> dqs;
    for (std::size_t u = 0; u < vertices.size(); ++u)
        for (std::size_t v = u + 1; v < vertices.size(); ++v)
            dqs.push_back(q.d_q(log.state(vertices[u]), log.state(vertices[v])));
    if (dqs.empty()) return 0.0;
    std::sort(dqs.begin(), dqs.end());
    std::size_t want_pairs = std::min(dqs.size(), std::max<std::size_t>(1, target_directed_edges / 2));
    return dqs[want_pairs - 1];
}

// Distance calibration (Fig 3) ------------------------------------------------

struct CalibrationRow {
    long long bfs = 0;
    long long count = 0;
    double mean_dphi = 0, std_dphi = 0;
    double mean_dq = 0, std_dq = 0;
    double mean_len = 0; // mean len(tau) over retrievable pairs
    double inf_frac = 0; // fraction with no retrieval
    double mean_pt_mode = 0;
};

struct CalibrationReport {
    std::vector<CalibrationRow> rows;
    double spearman_dphi_bfs = 0.0; // over pairs with BFS <= 10
};

inline CalibrationReport distance_calibration_report(const Env& env, const TrajectoryLog& log,
                                                     const QFunction& q, const Retriever& ret,
                                                     const EmbedModel* em, long long max_bfs,
                                                     long long per_bin, Rng& rng) {
    struct Acc {
        std::vector<double> dphi, dq, len, pt;
        long long inf = 0;
    };
    std::vector<Acc> bins(std::size_t(max_bfs) + 1);
    std::vector<double> sp_dphi, sp_bfs;
    const Encoder& enc = ret.encoder();

    long long want_total = (max_bfs + 1) * per_bin;
    for (long long attempt = 0; attempt < want_total * 400; ++attempt) {
        bool full = true;
        for (const auto& b : bins)
            if ((long long)b.dphi.size() < per_bin) {
                full = false;
                break;
            }
        if (full) break;
        std::size_t i = rng.uniform_index(log.state_count());
        std::size_t j = rng.uniform_index(log.state_count());
        auto bfs = env.geodesic(env.decode(log.state(i)), env.decode(log.state(j)));
        if (!bfs || *bfs > max_bfs) continue;
        auto& bin = bins[std::size_t(*bfs)];
        if ((long long)bin.dphi.size() >= per_bin) continue;
        const Obs& a = log.state(i);
        const Obs& b = log.state(j);
        double dphi = enc.d_phi(a, b);
        bin.dphi.push_back(dphi);
        bin.dq.push_back(q.d_q(a, b));
        auto seg = ret.retrieve(a, b);
        if (seg) bin.len.push_back(double(seg->len()));
        else ++bin.inf;
        if (em) {
            Vec z(2 * Eigen::Index(enc.latent_dim()));
            z << enc.embed(a), enc.embed(b);
            Vec probs = softmax(em->heads().time.forward(z));
            Eigen::Index mode;
            probs.maxCoeff(&mode);
            bin.pt.push_back(double(mode));
        }
        if (*bfs <= 10) {
            sp_dphi.push_back(dphi);
            sp_bfs.push_back(double(*bfs));
        }
    }

    CalibrationReport rep;
    auto mean_std = [](const std::vector<double>& v) {
        if (v.empty()) return std::pair<double, double>{0.0, 0.0};
        double m = 0;
        for (double x : v) m += x;
        m /= double(v.size());
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::pair<double, double>{m, std::sqrt(s / double(v.size()))};
    };
    for (long long bfs = 0; bfs <= max_bfs; ++bfs) {
        const auto& b = bins[std::size_t(bfs)];
        CalibrationRow row;
        row.bfs = bfs;
        row.count = (long long)b.dphi.size();
        std::tie(row.mean_dphi, row.std_dphi) = mean_std(b.dphi);
        std::tie(row.mean_dq, row.std_dq) = mean_std(b.dq);
        row.mean_len = mean_std(b.len).first;
        row.inf_frac = row.count ? double(b.inf) / double(row.count) : 0.0;
        row.mean_pt_mode = mean_std(b.pt).first;
        rep.rows.push_back(row);
    }
    if (sp_dphi.size() >= 2) rep.spearman_dphi_bfs = spearman(sp_dphi, sp_bfs);
    return rep;
}

// Figures ----------------------------------------------------------------------

inline constexpr double kSvgScale = 24.0;

inline std::pair<double, double> svg_xy(const GridEnv& grid, double x, double y) {
    return {(x + 1.0) * kSvgScale, (double(grid.height()) - y) * kSvgScale};
}

inline SvgWriter render_grid(const GridEnv& grid) {
    SvgWriter svg((grid.width() + 2) * kSvgScale, (grid.height() + 2) * kSvgScale);
    for (int y = 0; y < grid.height(); ++y)
        for (int x = 0; x < grid.width(); ++x)
            if (grid.blocked(x, y)) {
                auto [sx, sy] = svg_xy(grid, x - 0.5, y + 0.5);
                svg.rect(sx, sy, kSvgScale, kSvgScale, "#444444");
            }
    return svg;
}

inline void render_roadmap(SvgWriter& svg, const GridEnv& grid, const TrajectoryLog& log,
                           const Roadmap& map, const std::string& edge_color = "#1f77b4") {
    for (std::size_t u = 0; u < map.vertices.size(); ++u) {
        AgentState su = grid.decode(log.state(map.vertices[u]));
        for (const auto& e : map.out[u]) {
            AgentState sv = grid.decode(log.state(map.vertices[std::size_t(e.to)]));
            auto [x0, y0] = svg_xy(grid, su.x, su.y);
            auto [x1, y1] = svg_xy(grid, sv.x, sv.y);
            svg.line(x0, y0, x1, y1, edge_color, 1.0, 0.45);
        }
    }
    for (auto v : map.vertices) {
        AgentState s = grid.decode(log.state(v));
        auto [x, y] = svg_xy(grid, s.x, s.y);
        svg.circle(x, y, 3.0, "#d62728");
    }
}

inline void render_tree(SvgWriter& svg, const GridEnv& grid, const TrajectoryLog& log,
                        const RrtTree& tree) {
    for (std::size_t n = 1; n < tree.nodes.size(); ++n) {
        AgentState a = grid.decode(log.state(tree.nodes[n].state));
        AgentState b = grid.decode(log.state(tree.nodes[std::size_t(tree.nodes[n].parent)].state));
        auto [x0, y0] = svg_xy(grid, a.x, a.y);
        auto [x1, y1] = svg_xy(grid, b.x, b.y);
        svg.line(x0, y0, x1, y1, "#2ca02c", 1.2, 0.8);
    }
    AgentState root = grid.decode(log.state(tree.nodes[0].state));
    auto [rx, ry] = svg_xy(grid, root.x, root.y);
    svg.circle(rx, ry, 5.0, "#000000");
}

inline void render_plan(SvgWriter& svg, const GridEnv& grid, const TrajectoryLog& log,
                        const StitchedTrajectory& plan) {
    std::vector<std::pair<double, double>> pts;
    for (auto s : plan.flatten_states(log)) {
        AgentState st = grid.decode(log.state(s));
        pts.push_back(svg_xy(grid, st.x, st.y));
    }
    if (!pts.empty()) {
        svg.polyline(pts, "#ff7f0e", 2.5);
        svg.circle(pts.front().first, pts.front().second, 4.0, "#000000");
        svg.circle(pts.back().first, pts.back().second, 4.0, "#9467bd");
    }
}

// Serialization ----------------------------------------------------------------

inline void save_roadmap(const Roadmap& map, std::uint64_t config_hash, const std::string& path) {
    Json j;
    j["format"] = "palmer-roadmap";
    j["version"] = 1;
    j["config_hash"] = to_hex(config_hash);
    j["r"] = map.params.r;
    j["num_vertices"] = map.vertices.size();
    j["prefilter_radius"] = map.prefilter_radius;
    j["vertices"] = map.vertices;
    Json edges = Json::array();
    for (std::size_t u = 0; u < map.vertices.size(); ++u)
        for (const auto& e : map.out[u]) {
            Json row = Json::array();
            row.push_back(u);
            row.push_back(e.to);
            row.push_back(e.cost);
            row.push_back(e.len);
            if (e.seg) {
                row.push_back(e.seg->episode);
                row.push_back(e.seg->i);
                row.push_back(e.seg->j);
            }
            edges.push_back(row);
        }
    j["edges"] = edges;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write roadmap: " + path);
    out << j.dump(1) << "\n";
}

inline Roadmap load_roadmap(const std::string& path, std::uint64_t expect_hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read roadmap: " + path);
    Json j = Json::parse(in);
    if (j.value("format", "") != "palmer-roadmap" || j.value("version", 0) != 1)
        throw std::runtime_error("roadmap: unknown format/version");
    if (j["config_hash"] != to_hex(expect_hash))
        throw std::runtime_error("roadmap: config hash mismatch (rebuild with this config)");
    Roadmap map;
    map.params.r = j["r"];
    map.prefilter_radius = j["prefilter_radius"];
    map.vertices = j["vertices"].get<std::vector<std::size_t>>();
    map.out.resize(map.vertices.size());
    for (const auto& row : j["edges"]) {
        std::size_t u = row[0];
        RoadmapEdge e;
        e.to = row[1];
        e.cost = row[2];
        e.len = row[3];
        if (row.size() > 4) e.seg = Segment{int(row[4]), std::size_t(row[5]), std::size_t(row[6])};
        map.out[u].push_back(e);
    }
    return map;
}

inline void write_rollout_trace(const std::string& path, const Env& env, const RolloutResult& res) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace: " + path);
    for (std::size_t k = 0; k < res.traj.actions.size(); ++k) {
        AgentState s = env.decode(res.traj.states[k]);
        Json line;
        line["step"] = k;
        line["action"] = res.traj.actions[k];
        line["x"] = s.x;
        line["y"] = s.y;
        line["fallback"] = res.decisions[k].fallback;
        line["zero_length"] = res.decisions[k].zero_length;
        line["replanned"] = res.decisions[k].replanned;
        out << line.dump() << "\n";
    }
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write csv: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
}

// Pipeline commands ------------------------------------------------------------
// Shared by the CLI and the test suites; every command returns the JSON
// summary it prints.

struct LoadedModels {
    Env env;
    TrajectoryLog log;
    std::unique_ptr<QFunction> q;
    std::optional<EmbedModel> embed;
    std::optional<EmbeddingIndex> index;
};


// Keys that pin roadmap/model compatibility: environment, lifting,
// seed, collection, retrieval, and encoder parameters. Query-time keys
// (plan.start, eval.*) deliberately excluded.
inline std::uint64_t compat_hash(const Config& cfg) {
    return cfg.subset_hash({"env.", "grid.", "pm.", "obs.", "seed", "collect.", "per.", "embed."});
}

inline PerConfig per_config_from(const Config& cfg, double model_d_p) {
    PerConfig pc;
    pc.d_p = cfg.real("per.d_p", model_d_p);
    pc.l_max = cfg.integer("per.l_max", 20);
    return pc;
}

inline Json cmd_collect(const Config& cfg, const std::string& out_path) {
    Env env = Env::from_config(cfg);
    long long steps = cfg.integer("collect.steps", 50000);
    std::uint64_t seed = std::uint64_t(cfg.integer("seed", 0));
    auto log = random_walk(env, steps, seed);
    log.save(out_path);
    Json j;
    j["command"] = "collect";
    j["out"] = out_path;
    j["steps"] = log.total_steps();
    j["episodes"] = log.episode_count();
    j["obs_dim"] = log.obs_dim();
    j["action_arity"] = log.action_arity();
    j["seed"] = seed;
    j["config_hash"] = to_hex(cfg.hash());
    return j;
}

inline Json cmd_buffer_info(const std::string& path) {
    auto log = TrajectoryLog::load(path);
    Json j;
    j["command"] = "buffer info";
    j["path"] = path;
    j["episodes"] = log.episode_count();
    j["steps"] = log.total_steps();
    j["states"] = log.state_count();
    j["obs_dim"] = log.obs_dim();
    j["action_arity"] = log.action_arity();
    return j;
}

inline Json cmd_train_q(const Config& cfg, const std::string& plog, const std::string& out_model,
                        const std::string& out_csv = "") {
    Env env = Env::from_config(cfg);
    auto log = TrajectoryLog::load(plog);
    auto qcfg = QTrainConfig::from_config(cfg);
    Rng rng(std::uint64_t(cfg.integer("seed", 0)) ^ 0x71ull);
    std::vector<LossCurvePoint> curve;
    auto q = train_q(log, qcfg, make_goal_test(env), rng, &curve);
    save_q(*q, out_model);
    if (!out_csv.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (const auto& p : curve) rows.push_back({std::to_string(p.step), fmt_double(p.loss)});
        write_csv(out_csv, {"step", "td_loss"}, rows);
    }
    Json j;
    j["command"] = "train-q";
    j["backend"] = qcfg.backend;
    j["mode"] = qcfg.mode;
    j["steps"] = qcfg.steps;
    j["gamma"] = qcfg.gamma;
    j["d_max"] = q->d_max();
    j["final_loss"] = curve.empty() ? 0.0 : curve.back().loss;
    j["out"] = out_model;
    j["config_hash"] = to_hex(cfg.hash());
    return j;
}

inline Json cmd_train_embed(const Config& cfg, const std::string& plog, const std::string& q_model,
                            const std::string& out_model, const std::string& out_csv = "") {
    auto log = TrajectoryLog::load(plog);
    auto q = load_q(q_model);
    auto ecfg = EmbedTrainConfig::from_config(cfg);
    Rng rng(std::uint64_t(cfg.integer("seed", 0)) ^ 0x9ull);
    auto result = train_encoder(log, *q, ecfg, rng);
    result.model.save(out_model);
    if (!out_csv.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < result.curve.size(); ++i) {
            const auto& t = result.term_curve[i];
            rows.push_back({std::to_string(result.curve[i].step), fmt_double(result.curve[i].loss),
                            fmt_double(t.lq), fmt_double(t.lt), fmt_double(t.linv), fmt_double(t.lfwd)});
        }
        write_csv(out_csv, {"step", "total", "l_q", "l_t", "l_inv", "l_fwd"}, rows);
    }
    Json j;
    j["command"] = "train-embed";
    j["arch"] = ecfg.arch;
    j["latent_dim"] = result.model.encoder().latent_dim();
    j["d_p"] = result.model.d_p();
    j["c_q"] = result.model.c_q();
    j["steps"] = ecfg.steps;
    j["out"] = out_model;
    j["config_hash"] = to_hex(cfg.hash());
    return j;
}

inline LoadedModels load_models(const Config& cfg, const std::string& plog,
                                const std::string& q_model, const std::string& embed_model) {
    LoadedModels m{Env::from_config(cfg), TrajectoryLog::load(plog), nullptr, std::nullopt,
                   std::nullopt};
    if (!q_model.empty()) m.q = load_q(q_model);
    if (!embed_model.empty()) {
        m.embed = EmbedModel::load(embed_model);
        m.index = embed_all(m.embed->encoder(), m.log);
    }
    return m;
}

inline Json cmd_build_roadmap(const Config& cfg, const std::string& plog,
                              const std::string& embed_model, const std::string& out_json,
                              const std::string& out_svg = "", const std::string& q_model = "") {
    auto m = load_models(cfg, plog, q_model, embed_model);
    Retriever ret(m.embed->encoder(), *m.index, m.log, per_config_from(cfg, m.embed->d_p()));
    auto pcfg = PlannerConfig::from_config(cfg);
    Rng rng(std::uint64_t(cfg.integer("seed", 0)) ^ 0x40ull);
    std::string algo = cfg.str("plan.algorithm", "rprm");

    Json j;
    j["command"] = "build-roadmap";
    j["algorithm"] = algo;
    j["config_hash"] = to_hex(cfg.hash());
    if (algo == "rprm" || algo == "baseline") {
        Roadmap map;
        if (algo == "rprm") {
            map = rprm_build(ret, pcfg, rng);
        } else {
            if (!m.q) throw std::runtime_error("baseline roadmap requires --q");
            map = baseline_q_roadmap(ret, *m.q, cfg.real("plan.q_threshold", 3.0), pcfg, rng);
        }
        save_roadmap(map, compat_hash(cfg), out_json);
        if (!out_svg.empty() && m.env.is_grid()) {
            auto svg = render_grid(m.env.grid());
            render_roadmap(svg, m.env.grid(), m.log, map);
            svg.write(out_svg);
        }
        j["vertices"] = map.vertices.size();
        j["edges"] = map.edge_count();
        j["mean_out_degree"] = map.mean_out_degree();
    } else if (algo == "rrt" || algo == "rrt_star") {
        std::size_t init = std::size_t(cfg.integer("plan.rrt_start_state", 0));
        long long iters = cfg.integer("plan.rrt_iterations", 500);
        RrtTree tree = (algo == "rrt") ? rrt_build(ret, pcfg, init, iters, rng)
                                       : rrt_star_build(ret, pcfg, init, iters, rng);
        if (!out_svg.empty() && m.env.is_grid()) {
            auto svg = render_grid(m.env.grid());
            render_tree(svg, m.env.grid(), m.log, tree);
            svg.write(out_svg);
        }
        Json nodes = Json::array();
        for (const auto& n : tree.nodes) {
            Json row = Json::array();
            row.push_back(n.state);
            row.push_back(n.parent);
            row.push_back(n.cost);
            nodes.push_back(row);
        }
        Json tj;
        tj["format"] = "palmer-rrt";
        tj["version"] = 1;
        tj["config_hash"] = to_hex(cfg.hash());
        tj["nodes"] = nodes;
        std::ofstream out(out_json);
        if (!out) throw std::runtime_error("cannot write tree: " + out_json);
        out << tj.dump(1) << "\n";
        j["nodes"] = tree.nodes.size();
    } else {
        throw std::runtime_error("unknown plan.algorithm: " + algo);
    }
    j["out"] = out_json;
    return j;
}

inline AgentState parse_state(const Env& env, const std::string& xy) {
    auto comma = xy.find(',');
    if (comma == std::string::npos) throw std::runtime_error("state must be x,y: " + xy);
    AgentState s;
    s.x = std::stod(xy.substr(0, comma));
    s.y = std::stod(xy.substr(comma + 1));
    env.observe(s); // validates
    return s;
}

inline Json cmd_plan(const Config& cfg, const std::string& plog, const std::string& embed_model,
                     const std::string& roadmap_json, const std::string& out_json,
                     const std::string& out_svg = "") {
    auto m = load_models(cfg, plog, "", embed_model);
    Retriever ret(m.embed->encoder(), *m.index, m.log, per_config_from(cfg, m.embed->d_p()));
    Roadmap map = load_roadmap(roadmap_json, compat_hash(cfg));
    map.params.r = map.params.r; // params carried by file

    AgentState start, goal;
    if (cfg.has("plan.start") && cfg.has("plan.goal")) {
        start = parse_state(m.env, cfg.require("plan.start"));
        goal = parse_state(m.env, cfg.require("plan.goal"));
    } else {
        Rng rng(std::uint64_t(cfg.integer("seed", 0)) ^ 0x8aull);
        auto candidates = observed_states(m.env, m.log);
        start = candidates[rng.uniform_index(candidates.size())];
        goal = candidates[rng.uniform_index(candidates.size())];
    }

    auto plan = rprm_query(map, ret, m.env.observe(start), m.env.observe(goal));
    Json j;
    j["command"] = "plan";
    j["start"] = {start.x, start.y};
    j["goal"] = {goal.x, goal.y};
    j["found"] = plan.has_value();
    j["config_hash"] = to_hex(cfg.hash());
    if (plan) {
        j["total_len"] = plan->total_len;
        j["total_cost"] = plan->total_cost;
        j["segments"] = plan->segments.size();
        Json segs = Json::array();
        for (const auto& s : plan->segments) {
            Json row = Json::array();
            row.push_back(s.episode);
            row.push_back(s.i);
            row.push_back(s.j);
            segs.push_back(row);
        }
        j["segment_list"] = segs;
        if (m.env.is_grid()) {
            Json poses = Json::array();
            for (auto idx : plan->flatten_states(m.log)) {
                AgentState s = m.env.decode(m.log.state(idx));
                Json row = Json::array();
                row.push_back(s.x);
                row.push_back(s.y);
                poses.push_back(row);
            }
            j["poses"] = poses;
        }
    }
    std::ofstream out(out_json);
    if (!out) throw std::runtime_error("cannot write plan: " + out_json);
    out << j.dump(1) << "\n";
    if (!out_svg.empty() && m.env.is_grid()) {
        auto svg = render_grid(m.env.grid());
        render_roadmap(svg, m.env.grid(), m.log, map, "#bbbbbb");
        if (plan) render_plan(svg, m.env.grid(), m.log, *plan);
        svg.write(out_svg);
    }
    return j;
}

inline PolicyFactory make_policy_factory(const std::string& kind, const QFunction& q,
                                         const Retriever* ret, const Roadmap* map,
                                         long long replan_every = 1) {
    if (kind == "greedy") {
        return [&q]() {
            return PolicyFn([&q, p = GreedyQPolicy(q)](const Obs& s, const Obs& g) mutable {
                return p.step(s, g);
            });
        };
    }
    if (kind == "pi_m") {
        if (!ret) throw std::runtime_error("pi_m policy requires an embedding/retriever");
        return [&q, ret]() {
            return PolicyFn([p = PiMPolicy(*ret, q)](const Obs& s, const Obs& g) mutable {
                return p.step(s, g);
            });
        };
    }
    if (kind == "pi_mstar") {
        if (!ret || !map) throw std::runtime_error("pi_mstar policy requires a roadmap");
        return [&q, ret, map, replan_every]() {
            return PolicyFn(
                [p = PiMStarPolicy(*map, *ret, q, replan_every)](const Obs& s, const Obs& g) mutable {
                    return p.step(s, g);
                });
        };
    }
    throw std::runtime_error("unknown policy kind: " + kind);
}

inline Json report_to_json(const SuccessReport& rep) {
    Json j;
    j["policy"] = rep.policy;
    j["seed"] = rep.seed;
    j["config_hash"] = to_hex(rep.config_hash);
    Json bands = Json::array();
    for (const auto& b : rep.bands) {
        Json row;
        row["band"] = b.band;
        row["pairs"] = b.pairs;
        row["successes"] = b.successes;
        row["rate"] = b.rate;
        row["ci_lo"] = b.ci_lo;
        row["ci_hi"] = b.ci_hi;
        row["mean_steps_success"] = b.mean_steps_success;
        bands.push_back(row);
    }
    j["bands"] = bands;
    return j;
}

inline Json cmd_eval(const Config& cfg, const std::string& plog, const std::string& q_model,
                     const std::string& embed_model, const std::string& roadmap_json,
                     const std::string& out_csv) {
    auto m = load_models(cfg, plog, q_model, embed_model);
    EvalConfig ecfg = EvalConfig::from_config(cfg);
    auto candidates = observed_states(m.env, m.log);

    std::optional<Retriever> ret;
    if (m.embed) ret.emplace(m.embed->encoder(), *m.index, m.log, per_config_from(cfg, m.embed->d_p()));
    std::optional<Roadmap> map;
    if (!roadmap_json.empty()) map = load_roadmap(roadmap_json, compat_hash(cfg));

    std::string policies = cfg.str("eval.policies", "greedy");
    std::vector<SuccessReport> reports;
    std::istringstream ss(policies);
    std::string kind;
    while (std::getline(ss, kind, ',')) {
        if (kind.empty()) continue;
        auto factory = make_policy_factory(kind, *m.q, ret ? &*ret : nullptr, map ? &*map : nullptr,
                                           cfg.integer("plan.replan_every", 1));
        reports.push_back(eval_success_curve(m.env, candidates, factory, ecfg, kind, cfg.hash()));
    }

    std::vector<std::vector<std::string>> rows;
    for (const auto& rep : reports)
        for (const auto& b : rep.bands)
            rows.push_back({rep.policy, std::to_string(b.band), std::to_string(b.pairs),
                            std::to_string(b.successes), fmt_double(b.rate), fmt_double(b.ci_lo),
                            fmt_double(b.ci_hi), fmt_double(b.mean_steps_success)});
    if (!out_csv.empty())
        write_csv(out_csv, {"policy", "band", "pairs", "successes", "rate", "ci_lo", "ci_hi",
                            "mean_steps_success"},
                  rows);

    Json j;
    j["command"] = "eval";
    j["config_hash"] = to_hex(cfg.hash());
    j["seed"] = ecfg.seed;
    Json reps = Json::array();
    for (const auto& rep : reports) reps.push_back(report_to_json(rep));
    j["reports"] = reps;
    if (!out_csv.empty()) j["out"] = out_csv;
    return j;
}

inline Json cmd_refine(const Config& cfg, const std::string& plog, const std::string& q_model,
                       const std::string& embed_model, const std::string& out_plog,
                       const std::string& out_q, const std::string& out_embed,
                       const std::string& out_csv) {
    auto m = load_models(cfg, plog, q_model, embed_model);
    Retriever ret(m.embed->encoder(), *m.index, m.log, per_config_from(cfg, m.embed->d_p()));
    auto pcfg = PlannerConfig::from_config(cfg);
    std::uint64_t seed = std::uint64_t(cfg.integer("seed", 0));
    Rng build_rng(seed ^ 0x40ull);
    Roadmap map = rprm_build(ret, pcfg, build_rng);

    RefineConfig rcfg = RefineConfig::from_config(cfg);
    if (rcfg.target_steps == 0) rcfg.target_steps = (long long)m.log.total_steps();
    EvalConfig ecfg = EvalConfig::from_config(cfg);
    auto candidates = observed_states(m.env, m.log);

    // goal sampling over all distance bands, uniformly
    auto run_one = [&](Rng& rng) {
        long long band = ecfg.bands[rng.uniform_index(ecfg.bands.size())];
        auto pair = sample_eval_pairs(m.env, candidates, band, 1, ecfg.band_mode, rng,
                                      ecfg.max_rejections)[0];
        long long budget = std::max(1ll, (long long)std::llround(rcfg.budget_multiplier * double(band)));
        PiMStarPolicy policy(map, ret, *m.q);
        return run_rollout(m.env, pair.first, pair.second,
                           [&](const Obs& s, const Obs& g) { return policy.step(s, g); }, budget,
                           ecfg.success_radius * m.env.delta());
    };

    Rng rng(seed ^ 0x5eull);
    auto collected = collect_refined_log(m.log.obs_dim(), m.log.action_arity(), run_one, rcfg, rng);
    collected.refined.save(out_plog);

    // retrain all model components from scratch on the refined data only
    auto qcfg = QTrainConfig::from_config(cfg);
    auto ecfg2 = EmbedTrainConfig::from_config(cfg);
    auto models = retrain_all(collected.refined, std::size_t(std::min<long long>(
                                  rcfg.target_steps, (long long)collected.refined.total_steps())),
                              [&](const TrajectoryLog& data) {
                                  Rng qr(seed ^ 0x71ull);
                                  auto q2 = train_q(data, qcfg, make_goal_test(m.env), qr);
                                  Rng er(seed ^ 0x9ull);
                                  auto e2 = train_encoder(data, *q2, ecfg2, er);
                                  return std::pair<std::unique_ptr<QFunction>, EmbedTrainResult>{
                                      std::move(q2), std::move(e2)};
                              });
    save_q(*models.first, out_q);
    models.second.model.save(out_embed);

    std::vector<std::vector<std::string>> rows;
    for (const auto& r : collected.rounds)
        rows.push_back({std::to_string(r.round), std::to_string(r.attempts),
                        std::to_string(r.successes), fmt_double(r.success_rate),
                        fmt_double(r.mean_success_len), std::to_string(r.collected_steps)});
    if (!out_csv.empty())
        write_csv(out_csv,
                  {"round", "attempts", "successes", "success_rate", "mean_success_len",
                   "collected_steps"},
                  rows);

    Json j;
    j["command"] = "refine";
    j["rounds"] = collected.rounds.size();
    j["refined_steps"] = collected.refined.total_steps();
    j["refined_episodes"] = collected.refined.episode_count();
    j["out_log"] = out_plog;
    j["out_q"] = out_q;
    j["out_embed"] = out_embed;
    j["config_hash"] = to_hex(cfg.hash());
    return j;
}

inline Json cmd_report(const Config& cfg, const std::string& plog, const std::string& q_model,
                       const std::string& embed_model, const std::string& out_prefix) {
    auto m = load_models(cfg, plog, q_model, embed_model);
    Retriever ret(m.embed->encoder(), *m.index, m.log, per_config_from(cfg, m.embed->d_p()));
    std::uint64_t seed = std::uint64_t(cfg.integer("seed", 0));

    Json j;
    j["command"] = "report";
    j["config_hash"] = to_hex(cfg.hash());

    // distance calibration table + scatter
    Rng rng(seed ^ 0xca1ull);
    long long max_bfs = cfg.integer("report.max_bfs", 12);
    auto cal = distance_calibration_report(m.env, m.log, *m.q, ret, &*m.embed, max_bfs,
                                           cfg.integer("report.pairs_per_bin", 60), rng);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : cal.rows)
        rows.push_back({std::to_string(r.bfs), std::to_string(r.count), fmt_double(r.mean_dphi),
                        fmt_double(r.std_dphi), fmt_double(r.mean_dq), fmt_double(r.std_dq),
                        fmt_double(r.mean_len), fmt_double(r.inf_frac), fmt_double(r.mean_pt_mode)});
    write_csv(out_prefix + "_calibration.csv",
              {"bfs", "count", "mean_dphi", "std_dphi", "mean_dq", "std_dq", "mean_len", "inf_frac",
               "mean_pt_mode"},
              rows);
    j["spearman_dphi_bfs"] = cal.spearman_dphi_bfs;

    if (m.env.is_grid()) {
        SvgWriter scatter(640, 480);
        double xs = 600.0 / double(std::max(1ll, max_bfs)), pad = 20;
        double ymax = 0;
        for (const auto& r : cal.rows) ymax = std::max(ymax, r.mean_dphi + r.std_dphi);
        if (ymax <= 0) ymax = 1;
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : cal.rows) {
            if (!r.count) continue;
            double x = pad + double(r.bfs) * xs;
            double y = 460 - 420 * (r.mean_dphi / ymax);
            pts.push_back({x, y});
            scatter.line(x, 460 - 420 * ((r.mean_dphi - r.std_dphi) / ymax), x,
                         460 - 420 * ((r.mean_dphi + r.std_dphi) / ymax), "#999999", 1.0);
        }
        scatter.polyline(pts, "#1f77b4", 2.0);
        scatter.text(30, 20, "mean d_phi vs BFS distance");
        scatter.write(out_prefix + "_calibration.svg");
    }

    // false-edge comparison at matched mean degree
    if (m.env.is_grid() && m.q) {
        auto pcfg = PlannerConfig::from_config(cfg);
        Rng map_rng(seed ^ 0x40ull);
        auto prm = rprm_build(ret, pcfg, map_rng);
        double threshold = matched_threshold(prm.vertices, m.log, *m.q, prm.edge_count());
        auto base = baseline_q_roadmap_on(prm.vertices, m.log, *m.q, threshold, pcfg);
        double k_slack = cfg.real("report.false_edge_slack", 2.0);
        auto prm_counts = false_edge_count(prm, m.env, m.log, pcfg.r, k_slack);
        auto base_counts = false_edge_count(base, m.env, m.log, pcfg.r, k_slack);
        Json fe;
        fe["q_threshold"] = threshold;
        fe["k_slack"] = k_slack;
        fe["rprm"] = {{"edges", prm_counts.total},
                      {"bfs_false", prm_counts.bfs_false},
                      {"wall_crossing", prm_counts.wall_crossing},
                      {"mean_out_degree", prm.mean_out_degree()}};
        fe["baseline"] = {{"edges", base_counts.total},
                          {"bfs_false", base_counts.bfs_false},
                          {"wall_crossing", base_counts.wall_crossing},
                          {"mean_out_degree", base.mean_out_degree()}};
        j["false_edges"] = fe;

        auto svg1 = render_grid(m.env.grid());
        render_roadmap(svg1, m.env.grid(), m.log, prm, "#1f77b4");
        svg1.write(out_prefix + "_rprm.svg");
        auto svg2 = render_grid(m.env.grid());
        render_roadmap(svg2, m.env.grid(), m.log, base, "#d62728");
        svg2.write(out_prefix + "_baseline.svg");
    }
    return j;
}

inline Json cmd_per_probe(const Config& cfg, const std::string& plog,
                          const std::string& embed_model, const std::string& start,
                          const std::string& goal) {
    auto m = load_models(cfg, plog, "", embed_model);
    Retriever ret(m.embed->encoder(), *m.index, m.log, per_config_from(cfg, m.embed->d_p()));
    AgentState s = parse_state(m.env, start);
    AgentState g = parse_state(m.env, goal);
    Obs so = m.env.observe(s), go = m.env.observe(g);
    auto nc = ret.neighbors(so);
    auto ng = ret.neighbors(go);
    auto seg = ret.retrieve_between(nc, ng);
    Json j;
    j["command"] = "per probe";
    j["d_p"] = ret.config().d_p;
    j["l_max"] = ret.config().l_max;
    j["start_neighbors"] = nc.size();
    j["goal_neighbors"] = ng.size();
    j["found"] = seg.has_value();
    if (seg) {
        j["episode"] = seg->episode;
        j["i"] = seg->i;
        j["j"] = seg->j;
        j["len"] = seg->len();
        j["reward"] = ret.reward_of(*seg);
    }
    return j;
}

} // namespace palmer
