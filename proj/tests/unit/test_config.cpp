#include <doctest.h>

#include <cstdlib>

#include "cogsem/config.hpp"
#include "cogsem/errors.hpp"
#include "helpers.hpp"

using namespace cogsem;
using cogsem::config::Json;

TEST_SUITE("config") {

TEST_CASE("defaults hold the reference settings and validate") {
    const auto& d = config::defaults();
    CHECK(d["data"]["group_size"] == 5);
    CHECK(d["data"]["image_size"] == 224);
    CHECK(d["gsem"]["k"] == 1);
    CHECK(d["gsem"]["mu"].get<double>() == 0.5);
    CHECK(d["model"]["vqvae"]["codebook_size"] == 128);
    CHECK(d["model"]["vqvae"]["code_dim"] == 384);
    CHECK(d["model"]["vqvae"]["commitment"].get<double>() == 0.25);
    CHECK(d["metrics"]["beta_sq"].get<double>() == 0.3);
    CHECK(d["stages"]["full"]["steps"] == 60000);
    CHECK(d["stages"]["full"]["optimizer"]["lr"].get<double>() == 1e-4);
    CHECK(config::validate(d).ok());
}

TEST_CASE("lambdas must be one-hot") {
    Json c = config::defaults();
    config::apply_override(c, "stages.vqvae.lambdas=[1,1,0]");
    const auto r = config::validate(c);
    REQUIRE_FALSE(r.ok());
    CHECK(r.issues[0].path == "stages.vqvae.lambdas");

    Json wrong = config::defaults();
    config::apply_override(wrong, "stages.prior.lambdas=[1,0,0]");
    CHECK_FALSE(config::validate(wrong).ok());
}

TEST_CASE("noise must stay a minority") {
    Json c = config::defaults();
    config::apply_override(c, "gsem.k=3");
    const auto r = config::validate(c);
    REQUIRE_FALSE(r.ok());
    CHECK(r.issues[0].path == "gsem.k");
    config::apply_override(c, "gsem.k=2");
    CHECK(config::validate(c).ok());
}

TEST_CASE("unknown keys and wrong types are reported by path") {
    try {
        config::merge(config::defaults(), Json::parse(R"({"model": {"vqvae": {"codebok_size": 3}}})"));
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.vqvae.codebok_size") != std::string::npos);
    }
    CHECK_THROWS_AS(config::merge(config::defaults(), Json::parse(R"({"gsem": {"k": "one"}})")), ConfigError);
    CHECK_THROWS_AS(config::merge(config::defaults(), Json::parse(R"({"stages": {"full": {"lambdas": [0, 1]}}})")),
                    ConfigError);
    Json c = config::defaults();
    CHECK_THROWS_AS(config::apply_override(c, "gsem.kk=1"), ConfigError);
    CHECK_THROWS_AS(config::apply_override(c, "no-equals"), ConfigError);
}

TEST_CASE("overrides parse JSON and fall back to strings") {
    Json c = config::defaults();
    config::apply_override(c, "gsem.mu=0.25");
    config::apply_override(c, "data.manifest=some/path.json");
    config::apply_override(c, "model.vqvae.commitment=1");
    CHECK(c["gsem"]["mu"].get<double>() == 0.25);
    CHECK(c["data"]["manifest"] == "some/path.json");
    CHECK(c["model"]["vqvae"]["commitment"].is_number_float());
}

TEST_CASE("hash ignores the seed and run directories nest by seed") {
    Json a = config::defaults(), b = config::defaults();
    config::apply_override(b, "seed=9");
    CHECK(config::config_hash(a) == config::config_hash(b));
    CHECK(config::config_hash(a).size() == 16);
    Json c = config::defaults();
    config::apply_override(c, "gsem.mu=0.3");
    CHECK(config::config_hash(a) != config::config_hash(c));
    CHECK(config::run_directory("out", b) == fs::path("out") / config::config_hash(b) / "9");
}

TEST_CASE("output root precedence") {
    CHECK(config::default_output_root("explicit") == fs::path("explicit"));
    ::setenv("COGSEM_OUT", "from-env", 1);
    CHECK(config::default_output_root(std::nullopt) == fs::path("from-env"));
    ::unsetenv("COGSEM_OUT");
    CHECK(config::default_output_root(std::nullopt) == fs::path("runs"));
}

TEST_CASE("stage prerequisites are checked against the run directory") {
    testutil::TempDir dir;
    const auto& d = config::defaults();
    CHECK_FALSE(config::validate(d, std::string("full"), dir.path()).ok());
    CHECK(config::validate(d, std::string("vqvae"), dir.path()).ok());
    fs::create_directories(dir / "stage-vqvae");
    CHECK(config::validate(d, std::string("prior"), dir.path()).ok());
    CHECK_FALSE(config::validate(d, std::string("bogus")).ok());
}

TEST_CASE("loading a file applies overrides and validates") {
    testutil::TempDir dir;
    std::ofstream(dir / "c.json") << R"({"seed": 4, "gsem": {"k": 3}})";
    const auto c = config::load(dir / "c.json", {"data.group_size=7"});
    CHECK(c["seed"] == 4);
    CHECK(c["data"]["group_size"] == 7);
    CHECK_THROWS_AS(config::load(dir / "c.json"), ConfigError);
    std::ofstream(dir / "bad.json") << "{";
    CHECK_THROWS_AS(config::load(dir / "bad.json"), ConfigError);
}

}
