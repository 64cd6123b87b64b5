#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "oracles.hpp"
#include "palmer/harness.hpp"

using namespace palmer;

namespace {

GoalTest exact_goal() { return GoalTest{true, 0.0}; }

Config smoke_config() {
    return Config::from_string(
        "env.kind = grid_open\n"
        "grid.width = 7\n"
        "grid.height = 7\n"
        "obs.mode = identity\n"
        "seed = 3\n"
        "collect.steps = 3000\n"
        "q.backend = tabular\n"
        "q.mode = sweep\n"
        "embed.arch = identity\n"
        "embed.steps = 5\n"
        "embed.batch = 4\n"
        "plan.num_vertices = 90\n"
        "plan.r = 5\n"
        "eval.bands = 2,3\n"
        "eval.pairs_per_band = 15\n"
        "eval.policies = greedy,pi_mstar\n");
}

struct TempDir {
    std::filesystem::path dir;
    TempDir() {
        dir = std::filesystem::temp_directory_path() / "palmer_harness_test";
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
    }
    ~TempDir() { std::filesystem::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

} // namespace

TEST_CASE("eval pair sampling respects the bands", "[harness]") {
    GridEnv grid(make_clover_maze(16, 16, 0.05, 2));
    Env env{GridEnv(grid)};
    auto log = random_walk(env, 20000, 9);
    auto candidates = observed_states(env, log);
    Rng rng(4);

    SECTION("band zero means coincident cells") {
        auto pairs = sample_eval_pairs(env, candidates, 0, 20, "euclid", rng);
        for (const auto& [a, b] : pairs) CHECK(env.ground_distance(a, b) < 1.0);
    }

    SECTION("euclid band postcondition replays") {
        auto pairs = sample_eval_pairs(env, candidates, 4, 50, "euclid", rng);
        for (const auto& [a, b] : pairs) {
            double d = env.ground_distance(a, b);
            CHECK(d >= 4.0);
            CHECK(d < 5.0);
        }
    }

    SECTION("geodesic band postcondition replays") {
        auto pairs = sample_eval_pairs(env, candidates, 8, 30, "geodesic", rng);
        for (const auto& [a, b] : pairs) {
            long long g = *env.geodesic(a, b);
            CHECK(g >= 8);
            CHECK(g < 16);
        }
    }

    SECTION("infeasible band errors out") {
        CHECK_THROWS_WITH(sample_eval_pairs(env, candidates, 200, 5, "euclid", rng, 20000),
                          Catch::Matchers::ContainsSubstring("infeasible"));
    }
}

TEST_CASE("statistics helpers", "[harness]") {
    auto [lo, hi] = wilson_interval(90, 100);
    CHECK(lo > 0.8);
    CHECK(hi < 0.96);
    CHECK(wilson_interval(0, 10).first == 0.0);

    std::vector<double> xs{1, 2, 3, 4, 5}, ys{2, 4, 6, 8, 10}, zs{10, 8, 6, 4, 2};
    CHECK(spearman(xs, ys) == Catch::Approx(1.0));
    CHECK(spearman(xs, zs) == Catch::Approx(-1.0));
}

TEST_CASE("success curves bracket oracle and random policies", "[harness]") {
    GridEnv grid(make_open_grid(9, 9, 5));
    Env env{GridEnv(grid)};
    auto log = random_walk(env, 9000, 12);
    auto candidates = observed_states(env, log);

    EvalConfig cfg;
    cfg.bands = {3, 6};
    cfg.pairs_per_band = 40;
    cfg.seed = 8;

    SECTION("a BFS-following oracle policy is perfect") {
        // test double: pick the action that minimizes true BFS distance
        auto factory = [&]() {
            return PolicyFn([&](const Obs& s, const Obs& g) {
                AgentState cur = grid.decode(s), goal = grid.decode(g);
                int best = 0;
                long long best_d = std::numeric_limits<long long>::max();
                for (int a = 0; a < 4; ++a) {
                    auto nxt = grid.step(cur, a);
                    long long d = *grid.geodesic(nxt.next, goal);
                    if (d < best_d) {
                        best_d = d;
                        best = a;
                    }
                }
                return PolicyStep{best, false, false, false};
            });
        };
        auto rep = eval_success_curve(env, candidates, factory, cfg, "oracle", 0);
        for (const auto& b : rep.bands) CHECK(b.rate == 1.0);
    }

    SECTION("a uniform random policy collapses on far bands") {
        cfg.bands = {6};
        auto factory = [&]() {
            auto rng = std::make_shared<Rng>(99);
            return PolicyFn([rng](const Obs&, const Obs&) {
                return PolicyStep{int(rng->uniform_index(4)), false, false, false};
            });
        };
        auto rep = eval_success_curve(env, candidates, factory, cfg, "random", 0);
        CHECK(rep.bands[0].rate <= 0.15);
    }
}

TEST_CASE("false edge counting", "[harness]") {
    GridEnv grid(make_clover_maze(16, 16, 0.04, 6));
    Env env{GridEnv(grid)};
    auto log = random_walk(env, 25000, 3);
    Encoder enc = Encoder::identity(env.obs_dim());
    auto idx = embed_all(enc, log);
    Retriever ret(enc, idx, log, PerConfig{0.5, 20, nullptr});

    SECTION("empty roadmap counts nothing") {
        Roadmap empty;
        auto c = false_edge_count(empty, env, log, 5.0);
        CHECK(c.total == 0);
        CHECK(c.bfs_false == 0);
    }

    SECTION("R-PRM edges with tight d_p are never false") {
        PlannerConfig cfg;
        cfg.num_vertices = 80;
        cfg.r = 5.0;
        Rng rng(7);
        auto map = rprm_build(ret, cfg, rng);
        REQUIRE(map.edge_count() > 0);
        auto c = false_edge_count(map, env, log, cfg.r);
        CHECK(c.total == map.edge_count());
        CHECK(c.bfs_false == 0); // segments are literal paths
    }

    SECTION("line crossing detector") {
        // find a blocked cell and a straight line through it
        bool tested = false;
        for (int y = 1; y + 1 < grid.height() && !tested; ++y)
            for (int x = 1; x + 1 < grid.width() && !tested; ++x)
                if (grid.blocked(x, y) && grid.free_cell(x - 1, y) && grid.free_cell(x + 1, y)) {
                    CHECK(line_crosses_blocked(grid, x - 1, y, x + 1, y));
                    tested = true;
                }
        REQUIRE(tested);
        CHECK_FALSE(line_crosses_blocked(grid, 8, 8, 8, 8));
    }
}

TEST_CASE("distance calibration table", "[harness]") {
    GridEnv grid(make_open_grid(9, 9, 8));
    Env env{GridEnv(grid)};
    auto log = random_walk(env, 9000, 2);
    Encoder enc = Encoder::identity(env.obs_dim());
    auto idx = embed_all(enc, log);
    Retriever ret(enc, idx, log, PerConfig{0.5, 20, nullptr});
    QTable q(StateCodec::from_log(log), 4, 0.95, exact_goal());
    q.converge_sweeps(log);

    Rng rng(14);
    auto rep = distance_calibration_report(env, log, q, ret, nullptr, 6, 40, rng);
    REQUIRE(rep.rows.size() == 7);
    CHECK(rep.rows[0].mean_dphi == 0.0); // identical states at BFS 0
    for (int b = 1; b + 1 <= 5; ++b)
        CHECK(rep.rows[std::size_t(b)].mean_dphi < rep.rows[std::size_t(b) + 1].mean_dphi);
    CHECK(rep.spearman_dphi_bfs > 0.9); // identity embedding on an open grid
}

TEST_CASE("roadmap serialization round trip", "[harness]") {
    GridEnv grid(make_open_grid(7, 7, 4));
    Env env{GridEnv(grid)};
    auto log = random_walk(env, 5000, 21);
    Encoder enc = Encoder::identity(env.obs_dim());
    auto idx = embed_all(enc, log);
    Retriever ret(enc, idx, log, PerConfig{0.5, 20, nullptr});
    PlannerConfig cfg;
    cfg.num_vertices = 30;
    cfg.r = 4.0;
    Rng rng(5);
    auto map = rprm_build(ret, cfg, rng);

    TempDir tmp;
    save_roadmap(map, 42, tmp / "map.json");
    auto back = load_roadmap(tmp / "map.json", 42);
    CHECK(back.vertices == map.vertices);
    CHECK(back.edge_count() == map.edge_count());
    CHECK(back.prefilter_radius == map.prefilter_radius);
    for (std::size_t u = 0; u < map.vertices.size(); ++u)
        for (std::size_t k = 0; k < map.out[u].size(); ++k) {
            CHECK(back.out[u][k].to == map.out[u][k].to);
            CHECK(back.out[u][k].cost == map.out[u][k].cost);
            CHECK(*back.out[u][k].seg == *map.out[u][k].seg);
        }
    CHECK_THROWS_WITH(load_roadmap(tmp / "map.json", 43),
                      Catch::Matchers::ContainsSubstring("hash mismatch"));
}

TEST_CASE("pipeline commands run end to end in process", "[harness]") {
    TempDir tmp;
    Config cfg = smoke_config();

    auto collected = cmd_collect(cfg, tmp / "walk.plog");
    auto info = cmd_buffer_info(tmp / "walk.plog");
    CHECK(info["steps"] == collected["steps"]);
    CHECK(info["steps"] == 3000);

    auto q = cmd_train_q(cfg, tmp / "walk.plog", tmp / "q.bin", tmp / "q.csv");
    CHECK(q["backend"] == "tabular");
    auto e = cmd_train_embed(cfg, tmp / "walk.plog", tmp / "q.bin", tmp / "e.bin", tmp / "e.csv");
    CHECK(double(e["d_p"]) > 0.0);

    auto rm = cmd_build_roadmap(cfg, tmp / "walk.plog", tmp / "e.bin", tmp / "map.json",
                                tmp / "map.svg");
    CHECK(std::size_t(rm["edges"]) > 0);
    CHECK(std::filesystem::exists(tmp / "map.svg"));

    Config plan_cfg = cfg;
    plan_cfg.set("plan.start", "0,0");
    plan_cfg.set("plan.goal", "6,6");
    auto plan = cmd_plan(plan_cfg, tmp / "walk.plog", tmp / "e.bin", tmp / "map.json",
                         tmp / "plan.json", tmp / "plan.svg");
    CHECK(plan["found"] == true);
    CHECK(double(plan["total_len"]) >= 12.0);

    auto ev = cmd_eval(cfg, tmp / "walk.plog", tmp / "q.bin", tmp / "e.bin", tmp / "map.json",
                       tmp / "eval.csv");
    CHECK(ev["reports"].size() == 2);
    for (const auto& rep : ev["reports"])
        for (const auto& band : rep["bands"]) CHECK(double(band["rate"]) >= 0.9);

    auto probe = cmd_per_probe(cfg, tmp / "walk.plog", tmp / "e.bin", "1,1", "5,5");
    CHECK(probe["found"] == true);

    auto report = cmd_report(cfg, tmp / "walk.plog", tmp / "q.bin", tmp / "e.bin", tmp / "rep");
    CHECK(std::filesystem::exists(tmp / "rep_calibration.csv"));
    CHECK(double(report["spearman_dphi_bfs"]) > 0.8);
}

TEST_CASE("cli rejects unknown flags with nonzero exit", "[harness]") {
    std::string cmd = std::string(PALMER_CLI_PATH) + " collect --definitely-not-a-flag 2>/dev/null";
    int rc = std::system(cmd.c_str());
    CHECK(rc != 0);
    int rc2 = std::system((std::string(PALMER_CLI_PATH) + " --help > /dev/null").c_str());
    CHECK(rc2 == 0);
}
