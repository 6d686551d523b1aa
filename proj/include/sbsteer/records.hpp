#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "sbsteer/common.hpp"

namespace sbsteer {

enum class Level { image, object };
enum class Label { hallucinated, factual };

std::string_view to_string(Level level);
std::string_view to_string(Label label); // "hallu" / "fact", the dump spelling
Level parse_level(std::string_view s);
Label parse_label(std::string_view s);

/// Identifies one probed group: a head at a layer, at one intervention granularity.
struct HeadKey {
    int layer = 0;
    int head = 0;
    Level level = Level::image;

    auto operator<=>(const HeadKey&) const = default;
};

/// One attention-head activation taken from a forward pass.
struct ActivationRecord {
    int layer = 0;
    int head = 0;
    Level level = Level::image;
    Label label = Label::factual;
    Vector vec;

    HeadKey key() const { return {layer, head, level}; }
};

/// One JSON object per line, keys in the order layer, head, level, label, vec.
std::string to_jsonl_line(const ActivationRecord& r);
ActivationRecord parse_jsonl_line(std::string_view line);

void write_jsonl(const std::string& path, const std::vector<ActivationRecord>& records);
std::vector<ActivationRecord> read_jsonl(const std::string& path);

} // namespace sbsteer
