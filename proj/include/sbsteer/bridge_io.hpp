#pragma once

#include <string>

#include "sbsteer/potential.hpp"

namespace sbsteer {

// {"epsilon": f64, "dim": u32, "components": [{"log_weight": f64, "center": [...], "log_scale_diag": [...]}]}
// Keys appear in exactly this order; every float is written with 17 significant digits.
std::string bridge_to_json(const GaussianMixturePotential& pot);
GaussianMixturePotential bridge_from_json(const std::string& text);

void save_bridge(const std::string& path, const GaussianMixturePotential& pot);
GaussianMixturePotential load_bridge(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

} // namespace sbsteer
