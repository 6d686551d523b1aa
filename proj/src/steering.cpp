#include "sbsteer/steering.hpp"

#include <filesystem>

#include <json.hpp>

#include "sbsteer/bridge_io.hpp"

namespace sbsteer {

std::string_view to_string(SteeringMode mode) {
    switch (mode) {
    case SteeringMode::static_mean:
        return "static_mean";
    case SteeringMode::static_sample:
        return "static_sample";
    case SteeringMode::dynamic_sde:
        return "dynamic_sde";
    }
    return "static_mean";
}

SteeringMode parse_mode(std::string_view s) {
    if (s == "static_mean")
        return SteeringMode::static_mean;
    if (s == "static_sample")
        return SteeringMode::static_sample;
    if (s == "dynamic_sde")
        return SteeringMode::dynamic_sde;
    throw ContractError("unknown steering mode '" + std::string(s) + "'");
}

void SteeringPlan::validate() const {
    require(strength_t >= 0.0 && strength_t <= 1.0, "strength_t must lie in [0, 1]");
    require(sde_steps >= 1, "sde_steps must be >= 1");
}

bool SteeringPlan::covers(int layer, int head) const {
    return bridges.contains({layer, head, Level::image}) || bridges.contains({layer, head, Level::object});
}

namespace {

ActivationVector correct_one(const SteeringPlan& plan, const GaussianMixturePotential& bridge,
                             const ActivationVector& a0, std::uint64_t seed) {
    const double t = plan.strength_t;
    switch (plan.mode) {
    case SteeringMode::static_mean:
        return (1.0 - t) * a0 + t * conditional_mean(condition(bridge, a0));
    case SteeringMode::static_sample: {
        std::mt19937_64 rng(seed);
        return (1.0 - t) * a0 + t * sample_conditional(condition(bridge, a0), rng);
    }
    case SteeringMode::dynamic_sde:
        return integrate(bridge, a0, t, plan.sde_steps, seed, false).endpoint();
    }
    return a0;
}

} // namespace

ActivationVector steer_activation(const SteeringPlan& plan, int layer, int head, const ActivationVector& a0,
                                  std::uint64_t seed) {
    plan.validate();
    const auto img = plan.bridges.find({layer, head, Level::image});
    const auto obj = plan.bridges.find({layer, head, Level::object});
    if (img == plan.bridges.end() && obj == plan.bridges.end()) {
        warn("no bridge for layer " + std::to_string(layer) + " head " + std::to_string(head) + "; passing through");
        return a0;
    }
    if (plan.strength_t == 0.0)
        return a0;
    if (img != plan.bridges.end() && obj != plan.bridges.end()) {
        const auto a = correct_one(plan, img->second, a0, derive_seed(seed, 0));
        const auto b = correct_one(plan, obj->second, a0, derive_seed(seed, 1));
        return 0.5 * (a + b);
    }
    const auto& bridge = img != plan.bridges.end() ? img->second : obj->second;
    return correct_one(plan, bridge, a0, derive_seed(seed, 0));
}

ActivationVector steer_activation(const SteeringPlan& plan, int layer, int head, const ActivationVector& a0) {
    const auto site = (static_cast<std::uint64_t>(layer) << 32) | static_cast<std::uint64_t>(head);
    return steer_activation(plan, layer, head, a0, derive_seed(plan.seed, site));
}

std::vector<ActivationVector> steer_batch(const SteeringPlan& plan, const std::vector<SteerItem>& items) {
    std::vector<ActivationVector> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i)
        out.push_back(steer_activation(plan, items[i].layer, items[i].head, items[i].vec, derive_seed(plan.seed, i)));
    return out;
}

std::string plan_manifest_json(const SteeringPlan& plan, const std::vector<PlanManifestEntry>& entries) {
    nlohmann::ordered_json j;
    j["mode"] = std::string(to_string(plan.mode));
    j["strength_t"] = plan.strength_t;
    j["sde_steps"] = plan.sde_steps;
    j["seed"] = plan.seed;
    auto& arr = j["bridges"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json b;
        b["layer"] = e.key.layer;
        b["head"] = e.key.head;
        b["level"] = std::string(to_string(e.key.level));
        b["path"] = e.path;
        arr.push_back(std::move(b));
    }
    return j.dump(2) + "\n";
}

SteeringPlan load_plan(const std::string& manifest_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed plan manifest: ") + e.what());
    }
    const auto base = std::filesystem::path(manifest_path).parent_path();
    SteeringPlan plan;
    try {
        plan.mode = parse_mode(j.at("mode").get<std::string>());
        plan.strength_t = j.at("strength_t").get<double>();
        plan.sde_steps = j.at("sde_steps").get<int>();
        plan.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& b : j.at("bridges")) {
            const HeadKey key{b.at("layer").get<int>(), b.at("head").get<int>(),
                              parse_level(b.at("level").get<std::string>())};
            const auto path = (base / b.at("path").get<std::string>()).string();
            plan.bridges.emplace(key, load_bridge(path));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("plan manifest is missing a field: ") + e.what());
    }
    plan.validate();
    return plan;
}

} // namespace sbsteer
