#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "palmer/buffer.hpp"

using namespace palmer;

namespace {

Obs obs1(float v) { return Obs{v}; }

std::vector<TransitionRecord> chain(std::initializer_list<float> states, int arity = 4) {
    std::vector<TransitionRecord> out;
    auto it = states.begin();
    float prev = *it++;
    int a = 0;
    for (; it != states.end(); ++it) {
        out.push_back({obs1(prev), a % arity, obs1(*it)});
        prev = *it;
        ++a;
    }
    return out;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/palmer_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("append_trajectory builds episodes with disjoint indices", "[buffer]") {
    TrajectoryLog log(1, 4);
    auto run = chain({0, 1, 2, 3});
    log.append_trajectory(run);
    CHECK(log.total_steps() == 3);
    CHECK(log.episode_count() == 1);
    CHECK(log.state_count() == 4);

    log.append_trajectory(chain({7, 8}));
    CHECK(log.episode_count() == 2);
    CHECK(log.global_state_index(0, 3) == 3);
    CHECK(log.global_state_index(1, 0) == 4);
    CHECK(log.global_transition_index(1, 0) == 3);

    auto broken = chain({0, 1, 2});
    broken[1].obs = obs1(9); // break the chain
    CHECK_THROWS_AS(log.append_trajectory(broken), std::invalid_argument);
    CHECK_THROWS_AS(log.append_trajectory(std::vector<TransitionRecord>{}), std::invalid_argument);
}

TEST_CASE("segment extraction", "[buffer]") {
    TrajectoryLog log(1, 4);
    log.append_trajectory(chain({0, 1, 2, 3, 4, 5, 6, 7, 8}));

    auto zero = log.segment(0, 4, 4);
    CHECK(zero.len() == 0);
    CHECK(log.segment_states(zero).size() == 1);

    auto seg = log.segment(0, 2, 7);
    CHECK(seg.len() == 5);
    CHECK(log.segment_states(seg).front() == obs1(2));
    CHECK(log.segment_actions(seg).size() == 5);

    CHECK_THROWS_AS(log.segment(0, 2, 9), std::out_of_range);
    CHECK_THROWS_AS(log.segment(0, 5, 2), std::invalid_argument);

    // composition: segment(i,k) = segment(i,j) + segment(j,k), lengths add
    auto s_ik = log.segment(0, 1, 6);
    auto s_ij = log.segment(0, 1, 3);
    auto s_jk = log.segment(0, 3, 6);
    CHECK(s_ik.len() == s_ij.len() + s_jk.len());
    auto a = log.segment_states(s_ij);
    auto b = log.segment_states(s_jk);
    auto c = log.segment_states(s_ik);
    a.pop_back(); // shared junction state
    a.insert(a.end(), b.begin(), b.end());
    CHECK(a == c);
}

TEST_CASE("hindsight sampling stays inside episodes", "[buffer]") {
    TrajectoryLog log(1, 4);
    log.append_trajectory(chain({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
    Rng rng(5);

    SECTION("geometric p=1 always lands on the next state") {
        HindsightParams p;
        p.geom_p = 1.0;
        for (int k = 0; k < 200; ++k) {
            auto h = log.sample_hindsight(HindsightMode::geometric, rng, p);
            CHECK(h.t_offset == 1);
            CHECK(obs_equal(log.hs_goal(h), log.hs_next_obs(h)));
        }
    }

    SECTION("mixed uniform splits mass around t_max") {
        TrajectoryLog big(1, 4);
        std::vector<TransitionRecord> run;
        for (int k = 0; k < 2000; ++k) run.push_back({obs1(float(k)), 0, obs1(float(k + 1))});
        big.append_trajectory(run);
        HindsightParams p;
        p.t_max = 5;
        int low = 0, n = 20000;
        for (int k = 0; k < n; ++k) {
            auto h = big.sample_hindsight(HindsightMode::mixed_uniform, rng, p);
            REQUIRE(h.pos + std::size_t(h.t_offset) < big.episode(0).states.size());
            if (h.t_offset <= 5) ++low;
        }
        double frac = double(low) / n;
        CHECK(frac > 0.45);
        CHECK(frac < 0.55);
    }

    SECTION("goal never leaves the episode") {
        TrajectoryLog two(1, 4);
        two.append_trajectory(chain({0, 1, 2}));
        two.append_trajectory(chain({5, 6, 7, 8}));
        HindsightParams p;
        p.geom_p = 0.2;
        for (int k = 0; k < 2000; ++k) {
            auto h = two.sample_hindsight(HindsightMode::geometric, rng, p);
            const auto& ep = two.episode(h.episode);
            CHECK(h.pos + std::size_t(h.t_offset) <= ep.length());
        }
    }

    SECTION("too-short episodes are rejected") {
        TrajectoryLog tiny(1, 4);
        tiny.append_trajectory(chain({0, 1}));
        CHECK_THROWS_AS(tiny.sample_hindsight(HindsightMode::geometric, rng), std::runtime_error);
    }
}

TEST_CASE("plog round trip is bit exact", "[buffer]") {
    TrajectoryLog log(3, 5);
    Rng rng(99);
    for (int e = 0; e < 4; ++e) {
        Episode ep;
        int len = 50 + int(rng.uniform_index(200));
        Obs cur{float(rng.uniform()), float(rng.uniform()), float(rng.uniform())};
        ep.states.push_back(cur);
        for (int k = 0; k < len; ++k) {
            ep.actions.push_back(int(rng.uniform_index(5)));
            cur = Obs{float(rng.uniform()), float(rng.uniform()), float(rng.uniform())};
            ep.states.push_back(cur);
        }
        log.append_episode(std::move(ep));
    }

    TempFile f("roundtrip.plog");
    log.save(f.path);
    auto back = TrajectoryLog::load(f.path);
    REQUIRE(back.episode_count() == log.episode_count());
    REQUIRE(back.total_steps() == log.total_steps());
    for (std::size_t i = 0; i < log.state_count(); ++i)
        REQUIRE(obs_equal(back.state(i), log.state(i)));
    for (std::size_t e = 0; e < log.episode_count(); ++e)
        REQUIRE(back.episode(int(e)).actions == log.episode(int(e)).actions);
}

TEST_CASE("plog load rejects corrupt input", "[buffer]") {
    SECTION("empty file") {
        TempFile f("empty.plog");
        std::ofstream(f.path).close();
        CHECK_THROWS_WITH(TrajectoryLog::load(f.path), Catch::Matchers::ContainsSubstring("corrupt header"));
    }
    SECTION("version mismatch") {
        TempFile f("version.plog");
        {
            BinWriter w(f.path);
            w.magic("PLOG");
            w.u32(999);
            w.u32(1);
            w.u32(4);
            w.u64(0);
            w.close();
        }
        CHECK_THROWS_WITH(TrajectoryLog::load(f.path), Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("truncated payload") {
        TrajectoryLog log(2, 4);
        log.append_trajectory(std::vector<TransitionRecord>{
            {Obs{0, 0}, 1, Obs{1, 0}}, {Obs{1, 0}, 2, Obs{1, 1}}});
        TempFile f("trunc.plog");
        log.save(f.path);
        std::ifstream in(f.path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size() - 6));
        out.close();
        CHECK_THROWS_WITH(TrajectoryLog::load(f.path), Catch::Matchers::ContainsSubstring("truncated"));
    }
}
