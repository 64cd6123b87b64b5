#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

// Dependency direction: ground-truth oracle access lives in env/harness;
// learner-facing modules must not include them.

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("learner-facing headers do not reach the ground-truth modules", "[arch]") {
    const std::string base = std::string(PALMER_SOURCE_DIR) + "/include/palmer/";
    for (const char* mod : {"buffer", "net", "qlearn", "embed", "per", "planners", "policy", "refine"}) {
        std::string src = read_file(base + mod + std::string(".hpp"));
        INFO("module " << mod);
        CHECK(src.find("palmer/env.hpp") == std::string::npos);
        CHECK(src.find("palmer/harness.hpp") == std::string::npos);
    }
}

TEST_CASE("harness is the only module that composes env with the learners", "[arch]") {
    const std::string base = std::string(PALMER_SOURCE_DIR) + "/include/palmer/";
    std::string harness = read_file(base + "harness.hpp");
    CHECK(harness.find("palmer/env.hpp") != std::string::npos);
    std::string env = read_file(base + "env.hpp");
    CHECK(env.find("palmer/qlearn.hpp") == std::string::npos);
    CHECK(env.find("palmer/planners.hpp") == std::string::npos);
}
