#include "sbsteer/bridge_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sbsteer {

namespace {

void append_array(std::string& out, const Vector& v) {
    out += '[';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i)
            out += ", ";
        out += format_double(v[i]);
    }
    out += ']';
}

Vector to_vector(const nlohmann::json& arr) {
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    return v;
}

} // namespace

std::string bridge_to_json(const GaussianMixturePotential& pot) {
    std::string out = "{\"epsilon\": " + format_double(pot.epsilon());
    out += ", \"dim\": " + std::to_string(pot.dim());
    out += ", \"components\": [";
    for (int i = 0; i < pot.size(); ++i) {
        const auto& c = pot.component(i);
        out += i ? ",\n  " : "\n  ";
        out += "{\"log_weight\": " + format_double(c.log_weight);
        out += ", \"center\": ";
        append_array(out, c.center);
        out += ", \"log_scale_diag\": ";
        append_array(out, c.log_scale_diag);
        out += '}';
    }
    out += "\n]}\n";
    return out;
}

GaussianMixturePotential bridge_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed bridge JSON: ") + e.what());
    }
    try {
        const double eps = j.at("epsilon").get<double>();
        const int dim = j.at("dim").get<int>();
        std::vector<MixtureComponent> comps;
        for (const auto& c : j.at("components")) {
            MixtureComponent m;
            m.log_weight = c.at("log_weight").get<double>();
            m.center = to_vector(c.at("center"));
            m.log_scale_diag = to_vector(c.at("log_scale_diag"));
            require(m.center.size() == dim, "bridge component dimension differs from 'dim'");
            comps.push_back(std::move(m));
        }
        return GaussianMixturePotential(eps, std::move(comps));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bridge JSON is missing a field: ") + e.what());
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << content;
    if (!out)
        throw IoError("write failed for " + path);
}

void save_bridge(const std::string& path, const GaussianMixturePotential& pot) {
    write_text_file(path, bridge_to_json(pot));
}

GaussianMixturePotential load_bridge(const std::string& path) {
    return bridge_from_json(read_text_file(path));
}

} // namespace sbsteer
