#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "palmer/buffer.hpp"
#include "palmer/config.hpp"
#include "palmer/rng.hpp"

namespace palmer {

// Ground-truth agent state. Grid environments use integral x, y and ignore
// velocity; the point mass uses all four fields. Hidden from the learner:
// only observations derived from it ever enter the replay buffer.
struct AgentState {
    double x = 0.0;
    double y = 0.0;
    double vx = 0.0;
    double vy = 0.0;

    bool operator==(const AgentState&) const = default;
};

enum class ObsMode { identity, onehot, random_feature };

inline ObsMode parse_obs_mode(const std::string& s) {
    if (s == "identity") return ObsMode::identity;
    if (s == "onehot") return ObsMode::onehot;
    if (s == "random_feature") return ObsMode::random_feature;
    throw std::runtime_error("unknown obs.mode: " + s);
}

struct StepOutcome {
    AgentState next;
    bool collided = false;
};

struct GridMazeSpec {
    int width = 10;
    int height = 10;
    std::vector<std::uint8_t> blocked; // row-major, width*height; empty = all free
    double delta = 1.0;                // step length, one cell
    std::uint64_t seed = 0;
    ObsMode obs_mode = ObsMode::identity;
    std::size_t obs_dim = 64;          // random_feature only; must be even
};

// Grid actions: N=0 (+y), E=1 (+x), S=2 (-y), W=3 (-x).
inline constexpr int kGridActionArity = 4;
inline constexpr int kGridDx[4] = {0, 1, 0, -1};
inline constexpr int kGridDy[4] = {1, 0, -1, 0};

class GridEnv {
public:
    explicit GridEnv(GridMazeSpec spec) : spec_(std::move(spec)) {
        if (spec_.width <= 0 || spec_.height <= 0)
            throw std::invalid_argument("grid dimensions must be positive");
        if (spec_.blocked.empty())
            spec_.blocked.assign(std::size_t(spec_.width) * spec_.height, 0);
        if (spec_.blocked.size() != std::size_t(spec_.width) * spec_.height)
            throw std::invalid_argument("blocked bitmap size mismatch");
        for (int y = 0; y < spec_.height; ++y)
            for (int x = 0; x < spec_.width; ++x)
                if (!blocked(x, y)) free_cells_.push_back({x, y});
        if (free_cells_.empty()) throw std::invalid_argument("maze has no free cells");
        if (!connected()) throw std::invalid_argument("free cells are not one connected component");
        if (spec_.obs_mode == ObsMode::random_feature) init_random_features();
        build_obs_table();
    }

    const GridMazeSpec& spec() const { return spec_; }
    int width() const { return spec_.width; }
    int height() const { return spec_.height; }
    double delta() const { return spec_.delta; }
    int action_arity() const { return kGridActionArity; }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < spec_.width && y >= 0 && y < spec_.height;
    }
    bool blocked(int x, int y) const {
        return !in_bounds(x, y) || spec_.blocked[cell_index(x, y)] != 0;
    }
    bool free_cell(int x, int y) const { return !blocked(x, y); }

    std::size_t cell_index(int x, int y) const {
        return std::size_t(y) * spec_.width + std::size_t(x);
    }

    const std::vector<std::pair<int, int>>& free_cells() const { return free_cells_; }

    void check_state(const AgentState& s) const {
        int x = int(std::lround(s.x)), y = int(std::lround(s.y));
        if (blocked(x, y)) throw std::invalid_argument("grid state not in free space");
    }

    StepOutcome step(const AgentState& s, int action) const {
        if (action < 0 || action >= kGridActionArity)
            throw std::invalid_argument("grid action index out of range");
        check_state(s);
        int x = int(std::lround(s.x)), y = int(std::lround(s.y));
        int nx = x + kGridDx[action], ny = y + kGridDy[action];
        if (blocked(nx, ny)) return {AgentState{double(x), double(y)}, true};
        return {AgentState{double(nx), double(ny)}, false};
    }

    std::size_t obs_dim() const {
        switch (spec_.obs_mode) {
            case ObsMode::identity: return 2;
            case ObsMode::onehot: return std::size_t(spec_.width) * spec_.height;
            case ObsMode::random_feature: return spec_.obs_dim;
        }
        return 0;
    }

    Obs observe(const AgentState& s) const {
        check_state(s);
        int x = int(std::lround(s.x)), y = int(std::lround(s.y));
        switch (spec_.obs_mode) {
            case ObsMode::identity:
                return Obs{float(x), float(y)};
            case ObsMode::onehot: {
                Obs o(obs_dim(), 0.0f);
                o[cell_index(x, y)] = 1.0f;
                return o;
            }
            case ObsMode::random_feature: {
                Obs o(spec_.obs_dim);
                for (std::size_t k = 0; k * 2 < spec_.obs_dim; ++k) {
                    double t = freq_[k][0] * x + freq_[k][1] * y;
                    o[2 * k] = float(std::sin(t));
                    o[2 * k + 1] = float(std::cos(t));
                }
                return o;
            }
        }
        throw std::logic_error("unreachable");
    }

    // Inverse of the lifting map, for evaluation and ground-truth checks.
    // Exact for identity/onehot; nearest-table match for random features.
    AgentState decode(const Obs& o) const {
        if (o.size() != obs_dim()) throw std::invalid_argument("decode: obs dimension mismatch");
        switch (spec_.obs_mode) {
            case ObsMode::identity: {
                int x = int(std::lround(double(o[0]))), y = int(std::lround(double(o[1])));
                if (blocked(x, y)) throw std::invalid_argument("decode: not a free cell");
                return AgentState{double(x), double(y)};
            }
            case ObsMode::onehot: {
                std::size_t best = 0;
                for (std::size_t i = 1; i < o.size(); ++i)
                    if (o[i] > o[best]) best = i;
                int x = int(best % std::size_t(spec_.width));
                int y = int(best / std::size_t(spec_.width));
                if (blocked(x, y)) throw std::invalid_argument("decode: not a free cell");
                return AgentState{double(x), double(y)};
            }
            case ObsMode::random_feature: {
                std::size_t best = 0;
                double best_d = obs_distance(o, obs_table_[0]);
                for (std::size_t i = 1; i < obs_table_.size(); ++i) {
                    double d = obs_distance(o, obs_table_[i]);
                    if (d < best_d) { best_d = d; best = i; }
                }
                auto [x, y] = free_cells_[best];
                return AgentState{double(x), double(y)};
            }
        }
        throw std::logic_error("unreachable");
    }

    // Half the minimum inter-cell observation gap; the goal-equality
    // tolerance for non-exact observation modes.
    double obs_eq_tol() const {
        if (spec_.obs_mode != ObsMode::random_feature) return 0.0;
        return min_obs_gap_ * 0.5;
    }

    // BFS distances in steps from one free cell; -1 marks unreachable.
    std::vector<int> bfs_from(int x, int y) const {
        if (blocked(x, y)) throw std::invalid_argument("bfs_from: blocked start");
        std::vector<int> dist(std::size_t(spec_.width) * spec_.height, -1);
        std::deque<std::pair<int, int>> q;
        dist[cell_index(x, y)] = 0;
        q.push_back({x, y});
        while (!q.empty()) {
            auto [cx, cy] = q.front();
            q.pop_front();
            int d = dist[cell_index(cx, cy)];
            for (int a = 0; a < 4; ++a) {
                int nx = cx + kGridDx[a], ny = cy + kGridDy[a];
                if (blocked(nx, ny)) continue;
                auto& dn = dist[cell_index(nx, ny)];
                if (dn < 0) {
                    dn = d + 1;
                    q.push_back({nx, ny});
                }
            }
        }
        return dist;
    }

    // Exact shortest path step count; nullopt when unreachable.
    std::optional<long long> geodesic(const AgentState& a, const AgentState& b) const {
        check_state(a);
        check_state(b);
        auto dist = bfs_from(int(std::lround(a.x)), int(std::lround(a.y)));
        int d = dist[cell_index(int(std::lround(b.x)), int(std::lround(b.y)))];
        if (d < 0) return std::nullopt;
        return (long long)d;
    }

private:
    bool connected() const {
        auto [x0, y0] = free_cells_.front();
        auto dist = bfs_from(x0, y0);
        for (auto [x, y] : free_cells_)
            if (dist[cell_index(x, y)] < 0) return false;
        return true;
    }

    void init_random_features() {
        if (spec_.obs_dim < 2 || spec_.obs_dim % 2 != 0)
            throw std::invalid_argument("random_feature obs.dim must be even and >= 2");
        Rng rng(spec_.seed ^ 0x5eedf00d12345ull);
        freq_.resize(spec_.obs_dim / 2);
        for (auto& f : freq_) {
            f[0] = rng.uniform(-0.9, 0.9);
            f[1] = rng.uniform(-0.9, 0.9);
        }
    }

    void build_obs_table() {
        obs_table_.reserve(free_cells_.size());
        for (auto [x, y] : free_cells_)
            obs_table_.push_back(observe(AgentState{double(x), double(y)}));
        if (spec_.obs_mode == ObsMode::random_feature) {
            min_obs_gap_ = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < obs_table_.size(); ++i)
                for (std::size_t k = i + 1; k < obs_table_.size(); ++k)
                    min_obs_gap_ = std::min(min_obs_gap_, obs_distance(obs_table_[i], obs_table_[k]));
            if (!(min_obs_gap_ > 0.0))
                throw std::runtime_error("random feature lifting is not injective on this maze; change seed or obs.dim");
        }
    }

    GridMazeSpec spec_;
    std::vector<std::pair<int, int>> free_cells_;
    std::vector<std::array<double, 2>> freq_;
    std::vector<Obs> obs_table_;
    double min_obs_gap_ = 0.0;
};

// Maze generators -----------------------------------------------------------

inline GridMazeSpec make_open_grid(int width, int height, std::uint64_t seed,
                                   ObsMode mode = ObsMode::identity, std::size_t obs_dim = 64) {
    GridMazeSpec s;
    s.width = width;
    s.height = height;
    s.seed = seed;
    s.obs_mode = mode;
    s.obs_dim = obs_dim;
    return s;
}

// Clover maze: four circular lobes joined through a small central disk,
// sprinkled with single-cell column obstacles. Columns are only placed
// where they keep the free space connected.
inline GridMazeSpec make_clover_maze(int width, int height, double obstacle_density,
                                     std::uint64_t seed, ObsMode mode = ObsMode::identity,
                                     std::size_t obs_dim = 64) {
    GridMazeSpec s;
    s.width = width;
    s.height = height;
    s.seed = seed;
    s.obs_mode = mode;
    s.obs_dim = obs_dim;
    s.blocked.assign(std::size_t(width) * height, 1);

    double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    double m = std::min(width, height);
    double lobe_r = 0.30 * m, off = 0.22 * m, center_r = 0.16 * m;
    auto inside = [&](int x, int y) {
        auto in_disk = [&](double ox, double oy, double r) {
            double dx = x - ox, dy = y - oy;
            return dx * dx + dy * dy <= r * r;
        };
        return in_disk(cx - off, cy - off, lobe_r) || in_disk(cx - off, cy + off, lobe_r) ||
               in_disk(cx + off, cy - off, lobe_r) || in_disk(cx + off, cy + off, lobe_r) ||
               in_disk(cx, cy, center_r);
    };
    std::vector<std::pair<int, int>> free_list;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (inside(x, y)) {
                s.blocked[std::size_t(y) * width + x] = 0;
                free_list.push_back({x, y});
            }

    // column obstacles, keeping connectivity
    auto still_connected = [&](const std::vector<std::uint8_t>& blocked) {
        std::pair<int, int> start{-1, -1};
        std::size_t free_count = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (!blocked[std::size_t(y) * width + x]) {
                    if (start.first < 0) start = {x, y};
                    ++free_count;
                }
        if (start.first < 0) return false;
        std::vector<std::uint8_t> seen(blocked.size(), 0);
        std::deque<std::pair<int, int>> q{start};
        seen[std::size_t(start.second) * width + start.first] = 1;
        std::size_t reached = 1;
        while (!q.empty()) {
            auto [x, y] = q.front();
            q.pop_front();
            for (int a = 0; a < 4; ++a) {
                int nx = x + kGridDx[a], ny = y + kGridDy[a];
                if (nx < 0 || nx >= width || ny < 0 || ny >= height) continue;
                std::size_t idx = std::size_t(ny) * width + nx;
                if (blocked[idx] || seen[idx]) continue;
                seen[idx] = 1;
                ++reached;
                q.push_back({nx, ny});
            }
        }
        return reached == free_count;
    };

    Rng rng(seed ^ 0xc0117a5b1e55ull);
    std::size_t want = std::size_t(obstacle_density * double(free_list.size()));
    std::size_t placed = 0;
    for (std::size_t attempt = 0; attempt < want * 20 && placed < want; ++attempt) {
        auto [x, y] = free_list[rng.uniform_index(free_list.size())];
        std::size_t idx = std::size_t(y) * width + x;
        if (s.blocked[idx]) continue;
        s.blocked[idx] = 1;
        if (!still_connected(s.blocked)) {
            s.blocked[idx] = 0;
            continue;
        }
        ++placed;
    }
    return s;
}

// Point mass ----------------------------------------------------------------

// Axis-aligned wall segment: vertical (x fixed, y0..y1) or horizontal.
struct WallSegment {
    bool vertical = true;
    double at = 0.0; // x for vertical, y for horizontal
    double lo = 0.0;
    double hi = 0.0;
};

struct PointMassSpec {
    double xmin = 0.0, ymin = 0.0, xmax = 10.0, ymax = 10.0;
    std::vector<WallSegment> walls;
    double dt = 0.1;
    double accel_max = 1.0;
    double vel_max = 2.0;
    std::uint64_t seed = 0;
    ObsMode obs_mode = ObsMode::identity;
    std::size_t obs_dim = 64;
};

// Discrete 8-way acceleration set at full magnitude, 45 degree spacing.
inline constexpr int kPointMassActionArity = 8;

class PointMassEnv {
public:
    explicit PointMassEnv(PointMassSpec spec) : spec_(std::move(spec)) {
        if (spec_.dt <= 0 || spec_.accel_max <= 0 || spec_.vel_max <= 0)
            throw std::invalid_argument("point mass spec requires positive dt, accel_max, vel_max");
        if (spec_.xmax <= spec_.xmin || spec_.ymax <= spec_.ymin)
            throw std::invalid_argument("point mass bounds are empty");
        if (spec_.obs_mode == ObsMode::random_feature) {
            if (spec_.obs_dim < 2 || spec_.obs_dim % 2 != 0)
                throw std::invalid_argument("random_feature obs.dim must be even and >= 2");
            Rng rng(spec_.seed ^ 0x5eedf00d12345ull);
            freq_.resize(spec_.obs_dim / 2);
            for (auto& f : freq_)
                for (int k = 0; k < 4; ++k) f[std::size_t(k)] = rng.uniform(-0.9, 0.9);
        }
    }

    const PointMassSpec& spec() const { return spec_; }
    int action_arity() const { return kPointMassActionArity; }
    double delta() const { return spec_.vel_max * spec_.dt; }

    std::pair<double, double> action_accel(int action) const {
        if (action < 0 || action >= kPointMassActionArity)
            throw std::invalid_argument("point mass action index out of range");
        double ang = action * (std::numbers::pi / 4.0);
        return {spec_.accel_max * std::cos(ang), spec_.accel_max * std::sin(ang)};
    }

    void check_state(const AgentState& s) const {
        if (s.x < spec_.xmin || s.x > spec_.xmax || s.y < spec_.ymin || s.y > spec_.ymax)
            throw std::invalid_argument("point mass state outside bounds");
    }

    // Semi-implicit Euler with axis-decomposed wall stops: the velocity
    // component normal to a hit wall is zeroed, no bounce.
    StepOutcome step(const AgentState& s, int action) const {
        check_state(s);
        auto [ax, ay] = action_accel(action);
        AgentState n = s;
        n.vx += ax * spec_.dt;
        n.vy += ay * spec_.dt;
        double speed = std::hypot(n.vx, n.vy);
        if (speed > spec_.vel_max) {
            n.vx *= spec_.vel_max / speed;
            n.vy *= spec_.vel_max / speed;
        }
        bool collided = false;
        // x sweep
        double tx = n.x + n.vx * spec_.dt;
        for (const auto& w : spec_.walls) {
            if (!w.vertical) continue;
            if (n.y < w.lo || n.y > w.hi) continue;
            if ((n.x <= w.at && tx > w.at) || (n.x >= w.at && tx < w.at)) {
                tx = w.at;
                n.vx = 0;
                collided = true;
            }
        }
        if (tx < spec_.xmin) { tx = spec_.xmin; n.vx = 0; collided = true; }
        if (tx > spec_.xmax) { tx = spec_.xmax; n.vx = 0; collided = true; }
        n.x = tx;
        // y sweep
        double ty = n.y + n.vy * spec_.dt;
        for (const auto& w : spec_.walls) {
            if (w.vertical) continue;
            if (n.x < w.lo || n.x > w.hi) continue;
            if ((n.y <= w.at && ty > w.at) || (n.y >= w.at && ty < w.at)) {
                ty = w.at;
                n.vy = 0;
                collided = true;
            }
        }
        if (ty < spec_.ymin) { ty = spec_.ymin; n.vy = 0; collided = true; }
        if (ty > spec_.ymax) { ty = spec_.ymax; n.vy = 0; collided = true; }
        n.y = ty;
        return {n, collided};
    }

    std::size_t obs_dim() const {
        return spec_.obs_mode == ObsMode::random_feature ? spec_.obs_dim : 4;
    }

    Obs observe(const AgentState& s) const {
        check_state(s);
        if (spec_.obs_mode != ObsMode::random_feature)
            return Obs{float(s.x), float(s.y), float(s.vx), float(s.vy)};
        Obs o(spec_.obs_dim);
        for (std::size_t k = 0; k * 2 < spec_.obs_dim; ++k) {
            double t = freq_[k][0] * s.x + freq_[k][1] * s.y + freq_[k][2] * s.vx + freq_[k][3] * s.vy;
            o[2 * k] = float(std::sin(t));
            o[2 * k + 1] = float(std::cos(t));
        }
        return o;
    }

    AgentState decode(const Obs& o) const {
        if (spec_.obs_mode != ObsMode::random_feature) {
            if (o.size() != 4) throw std::invalid_argument("decode: obs dimension mismatch");
            return AgentState{double(o[0]), double(o[1]), double(o[2]), double(o[3])};
        }
        throw std::runtime_error("decode: point mass random_feature observations are not invertible");
    }

    // Discretized-grid approximation of geodesic step count: BFS over an
    // overlay of square cells with side = vel_max * dt, with moves blocked
    // when the straight hop crosses a wall.
    std::optional<long long> geodesic(const AgentState& a, const AgentState& b) const {
        check_state(a);
        check_state(b);
        double h = delta();
        int nx = std::max(1, int(std::ceil((spec_.xmax - spec_.xmin) / h)));
        int ny = std::max(1, int(std::ceil((spec_.ymax - spec_.ymin) / h)));
        auto cell_of = [&](double x, double y) {
            int cx = std::min(nx - 1, std::max(0, int((x - spec_.xmin) / h)));
            int cy = std::min(ny - 1, std::max(0, int((y - spec_.ymin) / h)));
            return std::pair<int, int>{cx, cy};
        };
        auto center = [&](int cx, int cy) {
            return std::pair<double, double>{spec_.xmin + (cx + 0.5) * h, spec_.ymin + (cy + 0.5) * h};
        };
        auto hop_blocked = [&](double x0, double y0, double x1, double y1) {
            for (const auto& w : spec_.walls) {
                if (w.vertical) {
                    if ((x0 <= w.at && x1 > w.at) || (x0 >= w.at && x1 < w.at)) {
                        double t = (w.at - x0) / (x1 - x0);
                        double yc = y0 + t * (y1 - y0);
                        if (yc >= w.lo && yc <= w.hi) return true;
                    }
                } else {
                    if ((y0 <= w.at && y1 > w.at) || (y0 >= w.at && y1 < w.at)) {
                        double t = (w.at - y0) / (y1 - y0);
                        double xc = x0 + t * (x1 - x0);
                        if (xc >= w.lo && xc <= w.hi) return true;
                    }
                }
            }
            return false;
        };
        auto [ax_, ay_] = cell_of(a.x, a.y);
        auto [bx_, by_] = cell_of(b.x, b.y);
        std::vector<int> dist(std::size_t(nx) * ny, -1);
        std::deque<std::pair<int, int>> q;
        dist[std::size_t(ay_) * nx + ax_] = 0;
        q.push_back({ax_, ay_});
        while (!q.empty()) {
            auto [cx, cy] = q.front();
            q.pop_front();
            int d = dist[std::size_t(cy) * nx + cx];
            if (cx == bx_ && cy == by_) return (long long)d;
            for (int k = 0; k < 4; ++k) {
                int ux = cx + kGridDx[k], uy = cy + kGridDy[k];
                if (ux < 0 || ux >= nx || uy < 0 || uy >= ny) continue;
                auto& dn = dist[std::size_t(uy) * nx + ux];
                if (dn >= 0) continue;
                auto [x0, y0] = center(cx, cy);
                auto [x1, y1] = center(ux, uy);
                if (hop_blocked(x0, y0, x1, y1)) continue;
                dn = d + 1;
                q.push_back({ux, uy});
            }
        }
        return std::nullopt;
    }

private:
    PointMassSpec spec_;
    std::vector<std::array<double, 4>> freq_;
};

// Unified wrapper -----------------------------------------------------------

class Env {
public:
    explicit Env(GridEnv g) : impl_(std::move(g)) {}
    explicit Env(PointMassEnv p) : impl_(std::move(p)) {}

    static Env from_config(const Config& cfg) {
        std::string kind = cfg.str("env.kind", "grid_open");
        std::uint64_t seed = std::uint64_t(cfg.integer("seed", 0));
        ObsMode mode = parse_obs_mode(cfg.str("obs.mode", "identity"));
        std::size_t obs_dim = std::size_t(cfg.integer("obs.dim", 64));
        if (kind == "grid_open") {
            return Env(GridEnv(make_open_grid(int(cfg.integer("grid.width", 10)),
                                              int(cfg.integer("grid.height", 10)), seed, mode, obs_dim)));
        }
        if (kind == "grid_clover") {
            return Env(GridEnv(make_clover_maze(int(cfg.integer("grid.width", 20)),
                                                int(cfg.integer("grid.height", 20)),
                                                cfg.real("grid.obstacle_density", 0.05), seed, mode, obs_dim)));
        }
        if (kind == "point_mass") {
            PointMassSpec s;
            s.xmin = cfg.real("pm.xmin", 0.0);
            s.ymin = cfg.real("pm.ymin", 0.0);
            s.xmax = cfg.real("pm.xmax", 10.0);
            s.ymax = cfg.real("pm.ymax", 10.0);
            s.dt = cfg.real("pm.dt", 0.1);
            s.accel_max = cfg.real("pm.accel_max", 1.0);
            s.vel_max = cfg.real("pm.vel_max", 2.0);
            s.seed = seed;
            s.obs_mode = mode;
            s.obs_dim = obs_dim;
            return Env(PointMassEnv(std::move(s)));
        }
        throw std::runtime_error("unknown env.kind: " + kind);
    }

    bool is_grid() const { return std::holds_alternative<GridEnv>(impl_); }
    const GridEnv& grid() const { return std::get<GridEnv>(impl_); }
    const PointMassEnv& point_mass() const { return std::get<PointMassEnv>(impl_); }

    int action_arity() const {
        return std::visit([](const auto& e) { return e.action_arity(); }, impl_);
    }
    std::size_t obs_dim() const {
        return std::visit([](const auto& e) { return e.obs_dim(); }, impl_);
    }
    double delta() const {
        return std::visit([](const auto& e) { return e.delta(); }, impl_);
    }
    StepOutcome step(const AgentState& s, int action) const {
        return std::visit([&](const auto& e) { return e.step(s, action); }, impl_);
    }
    Obs observe(const AgentState& s) const {
        return std::visit([&](const auto& e) { return e.observe(s); }, impl_);
    }
    AgentState decode(const Obs& o) const {
        return std::visit([&](const auto& e) { return e.decode(o); }, impl_);
    }
    std::optional<long long> geodesic(const AgentState& a, const AgentState& b) const {
        return std::visit([&](const auto& e) { return e.geodesic(a, b); }, impl_);
    }
    double obs_eq_tol() const {
        if (is_grid()) return grid().obs_eq_tol();
        return 0.25 * delta();
    }

    double ground_distance(const AgentState& a, const AgentState& b) const {
        return std::hypot(a.x - b.x, a.y - b.y);
    }

    AgentState sample_free_state(Rng& rng) const {
        if (is_grid()) {
            const auto& cells = grid().free_cells();
            auto [x, y] = cells[rng.uniform_index(cells.size())];
            return AgentState{double(x), double(y)};
        }
        const auto& s = point_mass().spec();
        // rejection-free: bounds interior; walls have zero thickness
        return AgentState{rng.uniform(s.xmin, s.xmax), rng.uniform(s.ymin, s.ymax), 0.0, 0.0};
    }

private:
    std::variant<GridEnv, PointMassEnv> impl_;
};

// One continuous uniform random walk of `steps` transitions, no resets.
// The start state is drawn uniformly from free space.
inline TrajectoryLog random_walk(const Env& env, long long steps, std::uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("random_walk: steps must be >= 1");
    Rng rng(seed);
    AgentState s = env.sample_free_state(rng);
    Episode ep;
    ep.states.reserve(std::size_t(steps) + 1);
    ep.actions.reserve(std::size_t(steps));
    ep.states.push_back(env.observe(s));
    for (long long k = 0; k < steps; ++k) {
        int a = int(rng.uniform_index(std::uint64_t(env.action_arity())));
        auto out = env.step(s, a);
        s = out.next;
        ep.actions.push_back(a);
        ep.states.push_back(env.observe(s));
    }
    TrajectoryLog log(env.obs_dim(), env.action_arity());
    log.append_episode(std::move(ep));
    return log;
}

} // namespace palmer
