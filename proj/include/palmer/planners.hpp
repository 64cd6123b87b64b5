#pragma once

#include <optional>
#include <queue>
#include <tuple>
#include <vector>

#include "palmer/per.hpp"
#include "palmer/qlearn.hpp"

namespace palmer {

enum class VertexSampling { uniform, visitation_weighted };

inline VertexSampling parse_sampling(const std::string& s) {
    if (s == "uniform") return VertexSampling::uniform;
    if (s == "visitation" || s == "visitation_weighted") return VertexSampling::visitation_weighted;
    throw std::runtime_error("unknown plan.sampling: " + s);
}

struct PlannerConfig {
    long long num_vertices = 200;
    double r = 5.0; // reachability radius, in steps of the len metric
    VertexSampling sampling = VertexSampling::uniform;
    bool prefilter = true;        // embedding-radius candidate prefilter
    double prefilter_slack = 1.5; // multiplier on the mean per-step gap
    long long replan_every = 1;

    static PlannerConfig from_config(const Config& c) {
        PlannerConfig p;
        p.num_vertices = c.integer("plan.num_vertices", p.num_vertices);
        p.r = c.real("plan.r", p.r);
        p.sampling = parse_sampling(c.str("plan.sampling", "uniform"));
        p.prefilter = c.flag("plan.prefilter", p.prefilter);
        p.prefilter_slack = c.real("plan.prefilter_slack", p.prefilter_slack);
        p.replan_every = c.integer("plan.replan_every", p.replan_every);
        if (p.num_vertices < 1 || p.r < 0 || p.replan_every < 1)
            throw std::runtime_error("plan config: invalid values");
        return p;
    }
};

struct RoadmapEdge {
    int to = -1;
    std::optional<Segment> seg; // absent on the Q-threshold baseline
    double cost = 0.0;          // d_edge = -R(tau_edge)
    double len = 0.0;           // len(tau_edge); d_Q for the baseline
};

struct Roadmap {
    std::vector<std::size_t> vertices;          // buffer global state indices
    std::vector<std::vector<RoadmapEdge>> out;  // directed adjacency
    PlannerConfig params;
    double prefilter_radius = -1.0; // resolved at build; < 0 means off

    std::size_t edge_count() const {
        std::size_t n = 0;
        for (const auto& es : out) n += es.size();
        return n;
    }
    double mean_out_degree() const {
        return vertices.empty() ? 0.0 : double(edge_count()) / double(vertices.size());
    }
};

// Mean embedding gap between subsequent buffer states (zero-gap pairs
// masked); the per-step scale used by the candidate prefilter.
inline double mean_step_embedding_gap(const Retriever& r) {
    const auto& log = r.log();
    const auto& z = r.index().z;
    std::size_t stride = std::max<std::size_t>(1, log.total_steps() / 20000);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < log.episode_count(); ++e) {
        const auto& ep = log.episode(int(e));
        std::size_t base = log.global_state_index(int(e), 0);
        for (std::size_t k = 0; k < ep.length(); k += stride) {
            double d = (z.row(Eigen::Index(base + k)) - z.row(Eigen::Index(base + k + 1))).norm();
            if (d > 0.0) {
                sum += d;
                ++count;
            }
        }
    }
    return count ? sum / double(count) : 0.0;
}

inline double resolve_prefilter_radius(const Retriever& r, const PlannerConfig& cfg, double reach) {
    if (!cfg.prefilter) return -1.0;
    return cfg.prefilter_slack * reach * mean_step_embedding_gap(r) + 2.0 * r.config().d_p;
}

// Vertex sampling (subroutine 1): uniform over buffer states, or
// weighted by 1 / (1 + visitation count) to favor sparse regions.
class VertexSampler {
public:
    VertexSampler(const Retriever& r, VertexSampling mode) {
        count_ = r.log().state_count();
        if (count_ == 0) throw std::invalid_argument("sample_vertex: empty log");
        if (mode == VertexSampling::visitation_weighted) {
            cumulative_.reserve(count_);
            double acc = 0.0;
            for (std::size_t i = 0; i < count_; ++i) {
                acc += 1.0 / (1.0 + double(r.neighbors_of_state(i).size()));
                cumulative_.push_back(acc);
            }
        }
    }

    std::size_t draw(Rng& rng) const {
        if (cumulative_.empty()) return rng.uniform_index(count_);
        double u = rng.uniform(0.0, cumulative_.back());
        auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        return std::size_t(it - cumulative_.begin());
    }

private:
    std::size_t count_ = 0;
    std::vector<double> cumulative_;
};

inline std::size_t sample_vertex(const Retriever& r, VertexSampling mode, Rng& rng) {
    return VertexSampler(r, mode).draw(rng);
}

// Dijkstra with non-negative costs and (cost, vertex-index) tie-breaking.
// Rejects negative edges explicitly; absence of a path is a value.
struct PathResult {
    std::vector<int> path;
    double cost = 0.0;
};

inline std::optional<PathResult> shortest_path(
    const std::vector<std::vector<std::pair<int, double>>>& adj, int src, int dst) {
    int n = int(adj.size());
    if (src < 0 || src >= n || dst < 0 || dst >= n)
        throw std::invalid_argument("shortest_path: vertex out of range");
    for (const auto& es : adj)
        for (const auto& [v, c] : es)
            if (c < 0.0) throw std::invalid_argument("shortest_path: negative edge cost");

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(std::size_t(n), inf);
    std::vector<int> prev(std::size_t(n), -1);
    std::vector<char> done(std::size_t(n), 0);
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;
    dist[std::size_t(src)] = 0.0;
    pq.push({0.0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (done[std::size_t(u)]) continue;
        done[std::size_t(u)] = 1;
        if (u == dst) break;
        for (const auto& [v, c] : adj[std::size_t(u)]) {
            if (dist[std::size_t(u)] + c < dist[std::size_t(v)]) {
                dist[std::size_t(v)] = dist[std::size_t(u)] + c;
                prev[std::size_t(v)] = u;
                pq.push({dist[std::size_t(v)], v});
            }
        }
    }
    if (dist[std::size_t(dst)] == inf) return std::nullopt;
    PathResult out;
    out.cost = dist[std::size_t(dst)];
    for (int v = dst; v != -1; v = prev[std::size_t(v)]) out.path.push_back(v);
    std::reverse(out.path.begin(), out.path.end());
    return out;
}

// R-PRM roadmap construction: sample vertices, then for every ordered
// vertex pair retrieve a segment and set a directed edge when its length
// fits the radius. Retrieval asymmetry makes both directions independent.
inline Roadmap rprm_build(const Retriever& r, const PlannerConfig& cfg, Rng& rng) {
    Roadmap map;
    map.params = cfg;
    VertexSampler sampler(r, cfg.sampling);
    for (long long i = 0; i < cfg.num_vertices; ++i) map.vertices.push_back(sampler.draw(rng));
    map.out.resize(map.vertices.size());
    map.prefilter_radius = resolve_prefilter_radius(r, cfg, cfg.r);

    const auto& z = r.index().z;
    for (std::size_t u = 0; u < map.vertices.size(); ++u) {
        for (std::size_t v = 0; v < map.vertices.size(); ++v) {
            if (u == v) continue;
            if (map.prefilter_radius >= 0) {
                double dz = (z.row(Eigen::Index(map.vertices[u])) - z.row(Eigen::Index(map.vertices[v]))).norm();
                if (dz > map.prefilter_radius) continue;
            }
            auto seg = r.retrieve_states(map.vertices[u], map.vertices[v]);
            if (!seg || double(seg->len()) > cfg.r) continue;
            double cost = r.cost_of(*seg);
            if (cost < 0.0)
                throw std::runtime_error("rprm_build: reward function yields negative edge cost");
            map.out[u].push_back(RoadmapEdge{int(v), *seg, cost, double(seg->len())});
        }
    }
    return map;
}

// Plan = concatenation of edge segments along a roadmap shortest path.
struct StitchedTrajectory {
    std::vector<std::size_t> waypoints; // roadmap vertices visited (buffer state indices)
    std::vector<Segment> segments;
    double total_len = 0.0;
    double total_cost = 0.0;

    // all buffer states along the plan, segment by segment
    std::vector<std::size_t> flatten_states(const TrajectoryLog& log) const {
        std::vector<std::size_t> out;
        for (const auto& s : segments) {
            auto ids = log.segment_state_indices(s);
            out.insert(out.end(), ids.begin(), ids.end());
        }
        return out;
    }

    std::vector<int> flatten_actions(const TrajectoryLog& log) const {
        std::vector<int> out;
        for (const auto& s : segments) {
            auto acts = log.segment_actions(s);
            out.insert(out.end(), acts.begin(), acts.end());
        }
        return out;
    }
};

// R-PRM query: insert s_c and s_g with PER edges to every vertex within
// radius r, run the shortest-path search, and concatenate edge segments.
inline std::optional<StitchedTrajectory> rprm_query(const Roadmap& map, const Retriever& r,
                                                    const Obs& s_c, const Obs& s_g) {
    std::size_t V = map.vertices.size();
    if (V == 0) return std::nullopt;
    const auto& z = r.index().z;
    Vec z_c = r.encoder().embed(s_c);
    Vec z_g = r.encoder().embed(s_g);
    auto n_c = r.neighbors_z(z_c);
    auto n_g = r.neighbors_z(z_g);

    // adjacency over [vertices..., src, dst]
    int src = int(V), dst = int(V) + 1;
    std::vector<std::vector<std::pair<int, double>>> adj(V + 2);
    std::vector<std::vector<std::pair<int, Segment>>> seg_of(V + 2);
    for (std::size_t u = 0; u < V; ++u)
        for (const auto& e : map.out[u]) {
            adj[u].push_back({e.to, e.cost});
            seg_of[u].push_back({e.to, *e.seg});
        }
    for (std::size_t v = 0; v < V; ++v) {
        Eigen::Index zv = Eigen::Index(map.vertices[v]);
        if (map.prefilter_radius < 0 || (z.row(zv).transpose() - z_c).norm() <= map.prefilter_radius) {
            auto seg = r.retrieve_between(n_c, r.neighbors_of_state(map.vertices[v]));
            if (seg && double(seg->len()) <= map.params.r) {
                adj[std::size_t(src)].push_back({int(v), r.cost_of(*seg)});
                seg_of[std::size_t(src)].push_back({int(v), *seg});
            }
        }
        if (map.prefilter_radius < 0 || (z.row(zv).transpose() - z_g).norm() <= map.prefilter_radius) {
            auto seg = r.retrieve_between(r.neighbors_of_state(map.vertices[v]), n_g);
            if (seg && double(seg->len()) <= map.params.r) {
                adj[v].push_back({dst, r.cost_of(*seg)});
                seg_of[v].push_back({dst, *seg});
            }
        }
    }

    auto path = shortest_path(adj, src, dst);
    if (!path) return std::nullopt;

    StitchedTrajectory out;
    out.total_cost = path->cost;
    for (std::size_t k = 0; k + 1 < path->path.size(); ++k) {
        int u = path->path[k], v = path->path[k + 1];
        const Segment* seg = nullptr;
        for (const auto& [to, s] : seg_of[std::size_t(u)])
            if (to == v) {
                seg = &s;
                break;
            }
        out.segments.push_back(*seg);
        out.total_len += double(seg->len());
        if (k + 1 < path->path.size() - 1) out.waypoints.push_back(map.vertices[std::size_t(v)]);
    }
    return out;
}

// R-RRT ----------------------------------------------------------------------

struct RrtNode {
    std::size_t state = 0; // buffer global state index
    int parent = -1;
    double cost = 0.0; // cost-to-come from the root
    std::optional<Segment> seg;
    double edge_cost = 0.0;
};

struct RrtTree {
    std::vector<RrtNode> nodes;
    PlannerConfig params;
};

namespace detail {

// argmin over tree nodes of len(tau(node -> target)), candidate-filtered
// by the embedding radius when enabled. Ties keep the earliest node.
inline std::optional<std::pair<int, Segment>> nearest_node(const RrtTree& tree, const Retriever& r,
                                                           std::size_t target, double pre_radius) {
    const auto& z = r.index().z;
    std::optional<std::pair<int, Segment>> best;
    std::size_t best_len = 0;
    for (int n = 0; n < int(tree.nodes.size()); ++n) {
        std::size_t s = tree.nodes[std::size_t(n)].state;
        if (pre_radius >= 0 &&
            (z.row(Eigen::Index(s)) - z.row(Eigen::Index(target))).norm() > pre_radius)
            continue;
        auto seg = r.retrieve_states(s, target);
        if (!seg) continue;
        if (!best || seg->len() < best_len) {
            best = {n, *seg};
            best_len = seg->len();
        }
    }
    return best;
}

} // namespace detail

// Supplement R-RRT: steer by taking the r'th state of the retrieved
// segment (clipped to its end), then accept when the new retrieval fits r.
inline RrtTree rrt_build(const Retriever& r, const PlannerConfig& cfg, std::size_t init_state,
                         long long iterations, Rng& rng) {
    RrtTree tree;
    tree.params = cfg;
    tree.nodes.push_back(RrtNode{init_state, -1, 0.0, std::nullopt, 0.0});
    VertexSampler sampler(r, cfg.sampling);
    double pre = resolve_prefilter_radius(r, cfg, double(r.config().l_max));
    std::size_t r_steps = std::size_t(std::max(0.0, std::floor(cfg.r + 1e-9)));

    for (long long it = 0; it < iterations; ++it) {
        std::size_t s_rand = sampler.draw(rng);
        auto near = detail::nearest_node(tree, r, s_rand, pre);
        if (!near) continue;
        auto [n_idx, seg_toward] = *near;
        std::size_t new_pos = seg_toward.i + std::min(seg_toward.len(), r_steps);
        std::size_t s_new = r.log().global_state_index(seg_toward.episode, new_pos);

        auto edge = r.retrieve_states(tree.nodes[std::size_t(n_idx)].state, s_new);
        if (!edge || double(edge->len()) > cfg.r) continue;
        double c = r.cost_of(*edge);
        if (c < 0.0) throw std::runtime_error("rrt_build: negative edge cost");
        tree.nodes.push_back(RrtNode{s_new, n_idx, tree.nodes[std::size_t(n_idx)].cost + c, *edge, c});
    }
    return tree;
}

// Supplement R-RRT*: choose-parent over the Near set, then rewire
// neighbors through the new node when strictly cheaper. Costs propagate
// to rewired subtrees so cost(child) = cost(parent) + d_edge always holds.
inline RrtTree rrt_star_build(const Retriever& r, const PlannerConfig& cfg, std::size_t init_state,
                              long long iterations, Rng& rng) {
    RrtTree tree;
    tree.params = cfg;
    tree.nodes.push_back(RrtNode{init_state, -1, 0.0, std::nullopt, 0.0});
    std::vector<std::vector<int>> children(1);
    VertexSampler sampler(r, cfg.sampling);
    double pre_nearest = resolve_prefilter_radius(r, cfg, double(r.config().l_max));
    double pre_near = resolve_prefilter_radius(r, cfg, cfg.r);
    std::size_t r_steps = std::size_t(std::max(0.0, std::floor(cfg.r + 1e-9)));
    const auto& z = r.index().z;

    auto propagate = [&](int node) {
        std::vector<int> stack{node};
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            for (int ch : children[std::size_t(u)]) {
                tree.nodes[std::size_t(ch)].cost =
                    tree.nodes[std::size_t(u)].cost + tree.nodes[std::size_t(ch)].edge_cost;
                stack.push_back(ch);
            }
        }
    };

    for (long long it = 0; it < iterations; ++it) {
        std::size_t s_rand = sampler.draw(rng);
        auto near = detail::nearest_node(tree, r, s_rand, pre_nearest);
        if (!near) continue;
        auto [nearest_idx, seg_toward] = *near;
        std::size_t new_pos = seg_toward.i + std::min(seg_toward.len(), r_steps);
        std::size_t s_new = r.log().global_state_index(seg_toward.episode, new_pos);

        auto accept = r.retrieve_states(tree.nodes[std::size_t(nearest_idx)].state, s_new);
        if (!accept || double(accept->len()) > cfg.r) continue;

        // Near set and both directed retrievals per candidate
        struct Cand {
            int node;
            std::optional<Segment> in;  // candidate -> s_new
            std::optional<Segment> out; // s_new -> candidate
        };
        std::vector<Cand> cands;
        for (int n = 0; n < int(tree.nodes.size()); ++n) {
            std::size_t s = tree.nodes[std::size_t(n)].state;
            if (pre_near >= 0 &&
                (z.row(Eigen::Index(s)) - z.row(Eigen::Index(s_new))).norm() > pre_near)
                continue;
            Cand c{n, r.retrieve_states(s, s_new), r.retrieve_states(s_new, s)};
            if (c.in && double(c.in->len()) > cfg.r) c.in.reset();
            if (c.out && double(c.out->len()) > cfg.r) c.out.reset();
            if (c.in || c.out) cands.push_back(std::move(c));
        }

        // connect along a minimum-cost parent
        int best_parent = nearest_idx;
        Segment best_seg = *accept;
        double best_edge = r.cost_of(*accept);
        double best_cost = tree.nodes[std::size_t(nearest_idx)].cost + best_edge;
        for (const auto& c : cands) {
            if (!c.in || c.node == nearest_idx) continue;
            double edge = r.cost_of(*c.in);
            double cost = tree.nodes[std::size_t(c.node)].cost + edge;
            if (cost < best_cost) {
                best_parent = c.node;
                best_seg = *c.in;
                best_edge = edge;
                best_cost = cost;
            }
        }
        if (best_edge < 0.0) throw std::runtime_error("rrt_star_build: negative edge cost");
        int new_idx = int(tree.nodes.size());
        tree.nodes.push_back(RrtNode{s_new, best_parent, best_cost, best_seg, best_edge});
        children.emplace_back();
        children[std::size_t(best_parent)].push_back(new_idx);

        // rewire strictly-cheaper neighbors through s_new
        for (const auto& c : cands) {
            if (!c.out || c.node == best_parent) continue;
            double edge = r.cost_of(*c.out);
            double via_new = best_cost + edge;
            auto& node = tree.nodes[std::size_t(c.node)];
            if (via_new < node.cost) {
                auto& sib = children[std::size_t(node.parent)];
                sib.erase(std::find(sib.begin(), sib.end(), c.node));
                node.parent = new_idx;
                node.seg = *c.out;
                node.edge_cost = edge;
                node.cost = via_new;
                children[std::size_t(new_idx)].push_back(c.node);
                propagate(c.node);
            }
        }
    }
    return tree;
}

// SoRB-style baseline: edges by thresholding d_Q directly, no retrieval,
// no stored segments.
inline Roadmap baseline_q_roadmap(const Retriever& r, const QFunction& q, double threshold,
                                  const PlannerConfig& cfg, Rng& rng) {
    Roadmap map;
    map.params = cfg;
    VertexSampler sampler(r, cfg.sampling);
    for (long long i = 0; i < cfg.num_vertices; ++i) map.vertices.push_back(sampler.draw(rng));
    map.out.resize(map.vertices.size());
    for (std::size_t u = 0; u < map.vertices.size(); ++u) {
        const Obs& ou = r.log().state(map.vertices[u]);
        for (std::size_t v = u + 1; v < map.vertices.size(); ++v) {
            double dq = q.d_q(ou, r.log().state(map.vertices[v]));
            if (dq <= threshold) {
                map.out[u].push_back(RoadmapEdge{int(v), std::nullopt, dq, dq});
                map.out[v].push_back(RoadmapEdge{int(u), std::nullopt, dq, dq});
            }
        }
    }
    return map;
}

// Soundness checkers ---------------------------------------------------------

// Violations of the edge contract: a stored segment must be contiguous in
// one episode (true by construction of Segment, re-validated here), its
// endpoints within d_p of the edge's vertex embeddings, and len <= r.
inline std::size_t roadmap_soundness_violations(const Roadmap& map, const Retriever& r) {
    const auto& z = r.index().z;
    const auto& log = r.log();
    double d_p = r.config().d_p + 1e-12;
    std::size_t bad = 0;
    for (std::size_t u = 0; u < map.vertices.size(); ++u) {
        for (const auto& e : map.out[u]) {
            if (!e.seg) {
                ++bad; // baseline edges carry no evidence
                continue;
            }
            const Segment& s = *e.seg;
            if (s.episode < 0 || std::size_t(s.episode) >= log.episode_count() ||
                s.i > s.j || s.j > log.episode(s.episode).length()) {
                ++bad;
                continue;
            }
            if (double(s.len()) > map.params.r || double(s.len()) != e.len) {
                ++bad;
                continue;
            }
            std::size_t a = log.global_state_index(s.episode, s.i);
            std::size_t b = log.global_state_index(s.episode, s.j);
            double da = (z.row(Eigen::Index(a)) - z.row(Eigen::Index(map.vertices[u]))).norm();
            double db = (z.row(Eigen::Index(b)) - z.row(Eigen::Index(map.vertices[std::size_t(e.to)]))).norm();
            if (da > d_p || db > d_p) ++bad;
        }
    }
    return bad;
}

inline std::size_t tree_soundness_violations(const RrtTree& tree, const Retriever& r) {
    const auto& z = r.index().z;
    const auto& log = r.log();
    double d_p = r.config().d_p + 1e-12;
    std::size_t bad = 0;
    for (std::size_t n = 1; n < tree.nodes.size(); ++n) {
        const auto& node = tree.nodes[n];
        if (!node.seg || node.parent < 0) {
            ++bad;
            continue;
        }
        const Segment& s = *node.seg;
        if (double(s.len()) > tree.params.r) {
            ++bad;
            continue;
        }
        std::size_t a = log.global_state_index(s.episode, s.i);
        std::size_t b = log.global_state_index(s.episode, s.j);
        std::size_t pa = tree.nodes[std::size_t(node.parent)].state;
        double da = (z.row(Eigen::Index(a)) - z.row(Eigen::Index(pa))).norm();
        double db = (z.row(Eigen::Index(b)) - z.row(Eigen::Index(node.state))).norm();
        if (da > d_p || db > d_p) ++bad;
        double want = tree.nodes[std::size_t(node.parent)].cost + node.edge_cost;
        if (std::abs(node.cost - want) > 1e-9) ++bad;
    }
    return bad;
}

} // namespace palmer
