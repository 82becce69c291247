#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>

#include <json.hpp>

#include "cogsem/datamodel.hpp"
#include "helpers.hpp"

#ifndef COGSEM_CLI
#define COGSEM_CLI "cogsem"
#endif

using namespace cogsem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(COGSEM_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

} // namespace

TEST_SUITE("cli") {

TEST_CASE("eval on perfect predictions reports zero MAE") {
    testutil::TempDir dir;
    const auto manifest_path = testutil::tiny_dataset(dir / "data", 3);
    const auto m = read_manifest(manifest_path);
    for (const auto& g : m.groups)
        for (const auto& item : g.items) {
            auto mask = read_mask_native(resolve_path(m, item.mask_path)).to(torch::kFloat32);
            write_saliency_map({mask, item_id(g, item)}, dir / "pred");
        }
    const int code = run_cli("eval --out " + q(dir / "runs") + " --set data.manifest=" + q(manifest_path) +
                             " metrics.pred_dir=" + q(dir / "pred"));
    REQUIRE(code == 0);
    fs::path summary;
    for (const auto& e : fs::recursive_directory_iterator(dir / "runs"))
        if (e.path().filename() == "summary.json") summary = e.path();
    REQUIRE_FALSE(summary.empty());
    const auto s = nlohmann::json::parse(testutil::slurp(summary));
    CHECK(s["mae"].get<double>() == 0.0);
    CHECK(fs::exists(summary.parent_path() / "per_image.csv"));
    CHECK(fs::exists(summary.parent_path() / "curves.csv"));
}

TEST_CASE("training the full stage without earlier stages is a dependency error") {
    testutil::TempDir dir;
    const auto manifest_path = testutil::tiny_dataset(dir / "data", 5);
    CHECK(run_cli("train --stage full --out " + q(dir / "runs") + " --set data.manifest=" + q(manifest_path)) == 8);
}

TEST_CASE("invalid configs exit with the config code") {
    testutil::TempDir dir;
    CHECK(run_cli("validate-config --set gsem.k=3") == 9);
    CHECK(run_cli("validate-config --set stages.vqvae.lambdas=[1,1,0]") == 9);
    CHECK(run_cli("validate-config") == 0);
    CHECK(run_cli("validate-config --set gsem.nope=1") == 9);
}

TEST_CASE("building an open-world dataset twice is byte-identical") {
    testutil::TempDir dir;
    namespace syn = cogsem::synthetic;
    const auto base = syn::write_dataset(dir / "data", {syn::many_categories(5), 12, 0, 16, 0, 2, "i"});
    std::vector<std::string> texts;
    for (const char* out : {"a", "b"}) {
        REQUIRE(run_cli("build-owdataset --seed 3 --out " + q(dir / out) + " --set owdata.base_manifest=" + q(base)) == 0);
        for (const auto& e : fs::recursive_directory_iterator(dir / out))
            if (e.path().filename() == "manifest.json") texts.push_back(testutil::slurp(e.path()));
    }
    REQUIRE(texts.size() == 2);
    CHECK(texts[0] == texts[1]);
    int64_t noise = 0;
    for (const auto& g : parse_manifest(texts[0]).groups)
        for (const auto& item : g.items) noise += item.is_noise;
    CHECK(noise > 0);
}

}
