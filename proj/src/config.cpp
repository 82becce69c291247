#include "cogsem/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cogsem/errors.hpp"

namespace cogsem::config {

namespace fs = std::filesystem;

const Json& defaults() {
    static const Json d = Json::parse(R"({
      "seed": 0,
      "data": {
        "manifest": "",
        "eval_manifest": "",
        "image_size": 224,
        "group_size": 5,
        "eval_group_size": 0
      },
      "model": {
        "vqvae": {
          "hidden": 64,
          "res_blocks": 2,
          "downsample_stages": 2,
          "codebook_size": 128,
          "code_dim": 384,
          "commitment": 0.25,
          "dead_code_reinit": false
        },
        "prior": {
          "width": 64,
          "layers": 6,
          "kernel": 7,
          "attention_layers": 0,
          "heads": 4,
          "temperature": 1.0
        },
        "branch": {
          "width": 384,
          "heads": 6,
          "mlp_ratio": 4,
          "backbone_layers": 4,
          "token_layers": 2,
          "decoder_layers": 2,
          "v_channels": 64
        }
      },
      "stages": {
        "vqvae": {"steps": 1000, "lambdas": [1, 0, 0], "optimizer": {"name": "adam", "lr": 1e-4}},
        "prior": {"steps": 1000, "lambdas": [0, 1, 0], "optimizer": {"name": "adam", "lr": 1e-4}},
        "full": {"steps": 60000, "lambdas": [0, 0, 1], "optimizer": {"name": "adam", "lr": 1e-4}},
        "checkpoint_every": 0,
        "bce_eps": 1e-7
      },
      "gsem": {
        "k": 1,
        "mu": 0.5,
        "hardness_order": "low",
        "normalize": true
      },
      "metrics": {
        "beta_sq": 0.3,
        "alpha": 0.5,
        "pred_dir": ""
      },
      "owdata": {
        "base_manifest": "",
        "mode": "single_foreign",
        "min_foreign": 1,
        "max_foreign": 3,
        "target_total": 0,
        "sampler": {
          "kind": "concentrated",
          "center": 0.18,
          "second_center": 0.40,
          "sigma": 0.06,
          "min_ratio": 0.024,
          "max_ratio": 0.375
        }
      },
      "sample": {
        "count": 4,
        "temperature": 1.0
      }
    })");
    return d;
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string type_name(const Json& j) {
    if (j.is_number_integer()) return "integer";
    if (j.is_number_float()) return "number";
    return j.type_name();
}

bool compatible(const Json& def, const Json& value) {
    if (def.is_boolean()) return value.is_boolean();
    if (def.is_number_integer()) return value.is_number_integer();
    if (def.is_number_float()) return value.is_number();
    if (def.is_string()) return value.is_string();
    if (def.is_array()) return value.is_array();
    if (def.is_object()) return value.is_object();
    return def.type() == value.type();
}

} // namespace

Json merge(const Json& base, const Json& overlay, const std::string& path) {
    if (!overlay.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
    Json out = base;
    for (const auto& [key, value] : overlay.items()) {
        const auto where = join(path, key);
        if (!base.contains(key)) throw ConfigError(where + ": unknown key");
        const Json& def = base.at(key);
        if (!compatible(def, value))
            throw ConfigError(where + ": expected " + type_name(def) + ", got " + type_name(value));
        if (def.is_object()) {
            out[key] = merge(def, value, where);
        } else if (def.is_array()) {
            if (value.size() != def.size())
                throw ConfigError(where + ": expected " + std::to_string(def.size()) + " elements");
            for (std::size_t i = 0; i < value.size(); ++i)
                if (!value[i].is_number())
                    throw ConfigError(where + "[" + std::to_string(i) + "]: expected a number");
            out[key] = value;
        } else if (def.is_number_float()) {
            out[key] = value.get<double>();
        } else {
            out[key] = value;
        }
    }
    return out;
}

void apply_override(Json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    // Build a nested overlay and let merge() do the checking.
    Json overlay = value;
    std::string rest = key;
    std::vector<std::string> parts;
    std::stringstream ss(rest);
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
        parts.push_back(part);
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = Json{{*it, overlay}};
    config = merge(config, overlay);
}

std::string ValidationReport::describe() const {
    std::string out;
    for (const auto& issue : issues) out += issue.path + ": " + issue.message + "\n";
    return out;
}

namespace {

const char* const kStages[] = {"vqvae", "prior", "full"};

} // namespace

ValidationReport validate(const Json& config, const std::optional<std::string>& stage,
                          const std::optional<fs::path>& run_dir) {
    ValidationReport report;
    auto fail = [&](std::string path, std::string msg) { report.issues.push_back({std::move(path), std::move(msg)}); };

    // Schema: a merge over defaults reports the first structural problem.
    try {
        merge(defaults(), config);
    } catch (const ConfigError& e) {
        fail("config", e.what());
        return report;
    }
    const Json c = merge(defaults(), config);

    if (c["seed"].get<int64_t>() < 0) fail("seed", "must be non-negative");
    const auto& data = c["data"];
    const int64_t size = data["image_size"];
    const int64_t n = data["group_size"];
    if (size < 16 || size % 16 != 0) fail("data.image_size", "must be a positive multiple of 16");
    if (n < 2) fail("data.group_size", "must be at least 2");
    if (data["eval_group_size"].get<int64_t>() < 0) fail("data.eval_group_size", "must be non-negative");

    const auto& vq = c["model"]["vqvae"];
    if (vq["codebook_size"].get<int64_t>() < 2) fail("model.vqvae.codebook_size", "must be at least 2");
    if (vq["code_dim"].get<int64_t>() < 1) fail("model.vqvae.code_dim", "must be positive");
    if (vq["hidden"].get<int64_t>() < 2) fail("model.vqvae.hidden", "must be at least 2");
    if (vq["commitment"].get<double>() < 0.0) fail("model.vqvae.commitment", "must be non-negative");
    const int64_t stages = vq["downsample_stages"];
    if (stages < 1 || stages > 4) fail("model.vqvae.downsample_stages", "must be in [1, 4]");

    const auto& prior = c["model"]["prior"];
    const int64_t kernel = prior["kernel"];
    if (kernel < 3 || kernel % 2 == 0) fail("model.prior.kernel", "must be odd and at least 3");
    if (prior["layers"].get<int64_t>() < 1) fail("model.prior.layers", "must be positive");
    if (prior["width"].get<int64_t>() < 1) fail("model.prior.width", "must be positive");
    if (prior["attention_layers"].get<int64_t>() > 0 &&
        prior["width"].get<int64_t>() % std::max<int64_t>(1, prior["heads"].get<int64_t>()) != 0)
        fail("model.prior.heads", "must divide model.prior.width");
    if (!(prior["temperature"].get<double>() > 0.0)) fail("model.prior.temperature", "must be positive");

    const auto& branch = c["model"]["branch"];
    const int64_t width = branch["width"];
    const int64_t heads = branch["heads"];
    if (width < 8 || width % 8 != 0) fail("model.branch.width", "must be a positive multiple of 8");
    if (heads < 1 || width % heads != 0) fail("model.branch.heads", "must divide model.branch.width");
    if (branch["token_layers"].get<int64_t>() < 1) fail("model.branch.token_layers", "must be positive");
    if (branch["v_channels"].get<int64_t>() < 1) fail("model.branch.v_channels", "must be positive");

    for (int s = 0; s < 3; ++s) {
        const std::string name = kStages[s];
        const auto& sc = c["stages"][name];
        const std::string base = "stages." + name;
        if (sc["steps"].get<int64_t>() < 0) fail(base + ".steps", "must be non-negative");
        const auto& l = sc["lambdas"];
        int ones = 0, zeros = 0;
        for (const auto& v : l) {
            const double x = v.get<double>();
            ones += x == 1.0;
            zeros += x == 0.0;
        }
        if (ones != 1 || zeros != 2) fail(base + ".lambdas", "must be one-hot");
        else if (l[s].get<double>() != 1.0) fail(base + ".lambdas", "active term must match the stage");
        if (sc["optimizer"]["name"] != "adam") fail(base + ".optimizer.name", "only adam is supported");
        if (!(sc["optimizer"]["lr"].get<double>() > 0.0)) fail(base + ".optimizer.lr", "must be positive");
    }
    if (c["stages"]["checkpoint_every"].get<int64_t>() < 0) fail("stages.checkpoint_every", "must be non-negative");
    const double eps = c["stages"]["bce_eps"];
    if (!(eps > 0.0 && eps < 0.5)) fail("stages.bce_eps", "must lie in (0, 0.5)");

    const auto& g = c["gsem"];
    const int64_t k = g["k"];
    if (k < 0) fail("gsem.k", "must be non-negative");
    if (2 * k >= n) fail("gsem.k", "must satisfy k < group_size / 2");
    if (g["mu"].get<double>() < 0.0) fail("gsem.mu", "must be non-negative");
    const auto order = g["hardness_order"].get<std::string>();
    if (order != "low" && order != "high") fail("gsem.hardness_order", "must be 'low' or 'high'");

    if (!(c["metrics"]["beta_sq"].get<double>() > 0.0)) fail("metrics.beta_sq", "must be positive");
    const double alpha = c["metrics"]["alpha"];
    if (alpha < 0.0 || alpha > 1.0) fail("metrics.alpha", "must lie in [0, 1]");

    const auto& ow = c["owdata"];
    const auto mode = ow["mode"].get<std::string>();
    if (mode != "single_foreign" && mode != "multi_foreign") fail("owdata.mode", "unknown noise mode");
    if (ow["min_foreign"].get<int64_t>() < 1 || ow["max_foreign"] < ow["min_foreign"])
        fail("owdata.min_foreign", "need 1 <= min_foreign <= max_foreign");
    if (ow["target_total"].get<int64_t>() < 0) fail("owdata.target_total", "must be non-negative (0 disables)");
    const auto& sm = ow["sampler"];
    const auto kind = sm["kind"].get<std::string>();
    if (kind != "fixed" && kind != "concentrated" && kind != "bimodal" && kind != "uniform")
        fail("owdata.sampler.kind", "unknown sampler");
    const double lo = sm["min_ratio"], hi = sm["max_ratio"];
    if (!(lo >= 0.0 && lo <= hi && hi < 0.5)) fail("owdata.sampler", "need 0 <= min_ratio <= max_ratio < 0.5");

    if (c["sample"]["count"].get<int64_t>() < 1) fail("sample.count", "must be positive");
    if (!(c["sample"]["temperature"].get<double>() > 0.0)) fail("sample.temperature", "must be positive");

    if (stage) {
        const std::string& st = *stage;
        if (st != "vqvae" && st != "prior" && st != "full") {
            fail("stage", "unknown stage '" + st + "'");
        } else if (run_dir) {
            auto need = [&](const std::string& dep) {
                if (!fs::exists(*run_dir / ("stage-" + dep))) fail("stage", st + " requires a " + dep + " checkpoint");
            };
            if (st == "prior") need("vqvae");
            if (st == "full") {
                need("vqvae");
                need("prior");
            }
        }
    }
    return report;
}

Json load(const fs::path& path, const std::vector<std::string>& overrides) {
    Json config = defaults();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read config '" + path.string() + "'");
        Json file = Json::parse(in, nullptr, false);
        if (file.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
        config = merge(config, file);
    }
    for (const auto& o : overrides) apply_override(config, o);
    auto report = validate(config);
    if (!report.ok()) throw ConfigError("invalid config:\n" + report.describe());
    return config;
}

std::string config_hash(const Json& config) {
    Json copy = config;
    copy.erase("seed");
    const std::string text = copy.dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

fs::path run_directory(const fs::path& out, const Json& config) {
    return out / config_hash(config) / std::to_string(config.at("seed").get<int64_t>());
}

fs::path default_output_root(const std::optional<std::string>& out) {
    if (out && !out->empty()) return *out;
    if (const char* env = std::getenv("COGSEM_OUT"); env && *env) return env;
    return "runs";
}

} // namespace cogsem::config
