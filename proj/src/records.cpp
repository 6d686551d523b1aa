#include "sbsteer/records.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sbsteer {

std::string_view to_string(Level level) {
    return level == Level::image ? "image" : "object";
}

std::string_view to_string(Label label) {
    return label == Label::hallucinated ? "hallu" : "fact";
}

Level parse_level(std::string_view s) {
    if (s == "image")
        return Level::image;
    if (s == "object")
        return Level::object;
    throw ContractError("unknown level '" + std::string(s) + "'");
}

Label parse_label(std::string_view s) {
    if (s == "hallu")
        return Label::hallucinated;
    if (s == "fact")
        return Label::factual;
    throw ContractError("unknown label '" + std::string(s) + "'");
}

std::string to_jsonl_line(const ActivationRecord& r) {
    std::string out;
    out.reserve(32 + static_cast<std::size_t>(r.vec.size()) * 24);
    out += "{\"layer\":" + std::to_string(r.layer);
    out += ",\"head\":" + std::to_string(r.head);
    out += ",\"level\":\"" + std::string(to_string(r.level)) + "\"";
    out += ",\"label\":\"" + std::string(to_string(r.label)) + "\"";
    out += ",\"vec\":[";
    for (Eigen::Index i = 0; i < r.vec.size(); ++i) {
        if (i)
            out += ',';
        out += format_double(r.vec[i]);
    }
    out += "]}";
    return out;
}

ActivationRecord parse_jsonl_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed activation record: ") + e.what());
    }
    ActivationRecord r;
    try {
        r.layer = j.at("layer").get<int>();
        r.head = j.at("head").get<int>();
        r.level = parse_level(j.at("level").get<std::string>());
        r.label = parse_label(j.at("label").get<std::string>());
        const auto& v = j.at("vec");
        r.vec.resize(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i)
            r.vec[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("activation record is missing a field: ") + e.what());
    }
    require(r.layer >= 0 && r.head >= 0, "layer and head must be nonnegative");
    require(r.vec.size() > 0 && r.vec.allFinite(), "activation vector must be nonempty and finite");
    return r;
}

void write_jsonl(const std::string& path, const std::vector<ActivationRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    for (const auto& r : records)
        out << to_jsonl_line(r) << '\n';
    if (!out)
        throw IoError("write failed for " + path);
}

std::vector<ActivationRecord> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::vector<ActivationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        out.push_back(parse_jsonl_line(line));
    }
    return out;
}

} // namespace sbsteer
