#include <catch2/catch_amalgamated.hpp>

#include "palmer/env.hpp"

using namespace palmer;

TEST_CASE("grid step moves one cell and blocks on walls", "[env]") {
    GridEnv env(make_open_grid(5, 5, 1));
    auto out = env.step(AgentState{2, 2}, 0); // N
    CHECK(out.next.x == 2);
    CHECK(out.next.y == 3);
    CHECK_FALSE(out.collided);

    // boundary acts as a wall: step into it is the identity
    auto blocked = env.step(AgentState{0, 0}, 3); // W
    CHECK(blocked.next.x == 0);
    CHECK(blocked.next.y == 0);
    CHECK(blocked.collided);

    CHECK_THROWS_AS(env.step(AgentState{2, 2}, 7), std::invalid_argument);
}

TEST_CASE("grid step is deterministic", "[env]") {
    GridEnv env(make_clover_maze(12, 12, 0.05, 3));
    auto& cells = env.free_cells();
    Rng rng(9);
    for (int k = 0; k < 200; ++k) {
        auto [x, y] = cells[rng.uniform_index(cells.size())];
        int a = int(rng.uniform_index(4));
        auto o1 = env.step(AgentState{double(x), double(y)}, a);
        auto o2 = env.step(AgentState{double(x), double(y)}, a);
        CHECK(o1.next == o2.next);
        CHECK(o1.collided == o2.collided);
    }
}

TEST_CASE("observe modes", "[env]") {
    SECTION("identity") {
        GridEnv env(make_open_grid(5, 5, 0));
        Obs o = env.observe(AgentState{3, 1});
        REQUIRE(o.size() == 2);
        CHECK(o[0] == 3.0f);
        CHECK(o[1] == 1.0f);
    }
    SECTION("onehot") {
        GridEnv env(make_open_grid(4, 4, 0, ObsMode::onehot));
        Obs o = env.observe(AgentState{0, 0});
        REQUIRE(o.size() == 16);
        CHECK(o[0] == 1.0f);
        CHECK(std::count(o.begin(), o.end(), 0.0f) == 15);
    }
    SECTION("random feature determinism") {
        GridEnv env(make_open_grid(6, 6, 42, ObsMode::random_feature, 32));
        Obs a = env.observe(AgentState{2, 4});
        Obs b = env.observe(AgentState{2, 4});
        CHECK(obs_equal(a, b));
        for (float v : a) CHECK(std::isfinite(v));
    }
}

TEST_CASE("observe is injective and decodable on free cells", "[env]") {
    for (ObsMode mode : {ObsMode::identity, ObsMode::onehot, ObsMode::random_feature}) {
        GridEnv env(make_clover_maze(10, 10, 0.05, 7, mode, 32));
        for (auto [x, y] : env.free_cells()) {
            AgentState s{double(x), double(y)};
            AgentState back = env.decode(env.observe(s));
            CHECK(back.x == s.x);
            CHECK(back.y == s.y);
        }
    }
}

TEST_CASE("random walk is contiguous and reproducible", "[env]") {
    Env env(GridEnv(make_open_grid(5, 5, 11)));
    auto log1 = random_walk(env, 1, 123);
    CHECK(log1.total_steps() == 1);
    CHECK(log1.state_count() == 2);

    auto a = random_walk(env, 400, 77);
    auto b = random_walk(env, 400, 77);
    REQUIRE(a.total_steps() == b.total_steps());
    for (std::size_t i = 0; i < a.state_count(); ++i)
        CHECK(obs_equal(a.state(i), b.state(i)));

    const auto& ep = a.episode(0);
    for (std::size_t k = 0; k + 1 < ep.states.size(); ++k) {
        auto out = env.step(env.decode(ep.states[k]), ep.actions[k]);
        CHECK(obs_equal(env.observe(out.next), ep.states[k + 1]));
    }
}

TEST_CASE("random walk covers the clover maze", "[env]") {
    // seed 5 covers 20x20 at 50k steps; verified occupancy with the oracle
    GridEnv grid(make_clover_maze(20, 20, 0.05, 5));
    Env env{GridEnv(grid)};
    auto log = random_walk(env, 50000, 5);
    std::vector<std::uint8_t> seen(std::size_t(grid.width()) * grid.height(), 0);
    const auto& ep = log.episode(0);
    for (const auto& o : ep.states) {
        auto s = grid.decode(o);
        seen[grid.cell_index(int(s.x), int(s.y))] = 1;
    }
    for (auto [x, y] : grid.free_cells()) CHECK(seen[grid.cell_index(x, y)] == 1);
}

TEST_CASE("geodesic oracle", "[env]") {
    GridEnv env(make_open_grid(5, 5, 0));
    AgentState a{1, 1}, b{4, 3};
    CHECK(env.geodesic(a, a) == 0);
    CHECK(env.geodesic(a, AgentState{1, 2}) == 1);
    CHECK(env.geodesic(a, b) == 5);

    // full wall splitting the maze is rejected as disconnected
    GridMazeSpec s = make_open_grid(5, 5, 0);
    s.blocked.assign(25, 0);
    for (int y = 0; y < 5; ++y) s.blocked[std::size_t(y) * 5 + 2] = 1;
    CHECK_THROWS_AS(GridEnv(s), std::invalid_argument);

    // reachability symmetry
    GridEnv maze(make_clover_maze(14, 14, 0.08, 21));
    Rng rng(4);
    const auto& cells = maze.free_cells();
    for (int k = 0; k < 50; ++k) {
        auto [x1, y1] = cells[rng.uniform_index(cells.size())];
        auto [x2, y2] = cells[rng.uniform_index(cells.size())];
        AgentState p{double(x1), double(y1)}, q{double(x2), double(y2)};
        CHECK(maze.geodesic(p, q) == maze.geodesic(q, p));
    }
}

TEST_CASE("point mass dynamics", "[env]") {
    PointMassSpec spec;
    spec.dt = 0.1;
    spec.accel_max = 1.0;
    spec.vel_max = 2.0;
    PointMassEnv env(spec);

    // one Euler step from rest along +x (action 0)
    auto out = env.step(AgentState{5, 5, 0, 0}, 0);
    CHECK(out.next.vx == Catch::Approx(0.1));
    CHECK(out.next.vy == Catch::Approx(0.0));
    CHECK(out.next.x == Catch::Approx(5.0 + 0.1 * 0.1));
    CHECK_FALSE(out.collided);

    // wall stops the normal component
    PointMassSpec walled = spec;
    walled.walls.push_back(WallSegment{true, 6.0, 0.0, 10.0});
    PointMassEnv wenv(walled);
    AgentState s{5.95, 5, 2.0, 0.5};
    auto hit = wenv.step(s, 2); // accel +y
    CHECK(hit.collided);
    CHECK(hit.next.x == Catch::Approx(6.0));
    CHECK(hit.next.vx == 0.0);
    CHECK(hit.next.vy > 0.0);
}

TEST_CASE("env config loading", "[env]") {
    auto cfg = Config::from_string(
        "env.kind = grid_clover\n"
        "grid.width = 16\n"
        "grid.height = 16\n"
        "grid.obstacle_density = 0.05\n"
        "obs.mode = random_feature\n"
        "obs.dim = 32\n"
        "seed = 3\n");
    Env env = Env::from_config(cfg);
    CHECK(env.is_grid());
    CHECK(env.obs_dim() == 32);
    CHECK(env.action_arity() == 4);
    CHECK(env.obs_eq_tol() > 0.0);
}
