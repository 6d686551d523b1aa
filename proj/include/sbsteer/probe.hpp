#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sbsteer/records.hpp"

namespace sbsteer {

struct ProbeOptions {
    double l2 = 1e-3;
    double grad_tol = 1e-6;
    int max_iter = 5000;
    double train_fraction = 0.8;
};

struct ProbeResult {
    HeadKey key;
    Vector weights; // positive score means hallucinated
    double bias = 0.0;
    double validation_accuracy = 0.0;
    int iterations = 0;
};

inline constexpr int kMinProbeRecords = 20;
inline constexpr int kDefaultTopH = 64;

/// Logistic-regression probe on one (layer, head, level) group, scored on a stratified held-out split.
ProbeResult fit_probe(const std::vector<ActivationRecord>& group, std::uint64_t split_seed,
                      const ProbeOptions& opts = {});

std::map<HeadKey, std::vector<ActivationRecord>> group_records(const std::vector<ActivationRecord>& records);

/// Split seed used for one group; independent of the order groups are processed in.
std::uint64_t group_seed(std::uint64_t split_seed, const HeadKey& key);

/// Probes every group serially; results ordered by key.
std::vector<ProbeResult> probe_all(const std::vector<ActivationRecord>& records, std::uint64_t split_seed,
                                   const ProbeOptions& opts = {});

struct RankEntry {
    HeadKey key;
    double accuracy = 0.0;
};

struct HeadRanking {
    std::vector<RankEntry> entries; // accuracy descending, ties by (layer, head, level)
    std::vector<HeadKey> selected;

    bool is_selected(const HeadKey& key) const;
};

/// Top-H over all given results.
HeadRanking rank_heads(const std::vector<ProbeResult>& results, int top_h);

/// Top-H within each level, merged into one ranking.
HeadRanking rank_heads_per_level(const std::vector<ProbeResult>& results, int top_h);

/// CSV with header layer,head,level,accuracy,selected.
std::string ranking_to_csv(const HeadRanking& ranking);
HeadRanking ranking_from_csv(const std::string& text);

} // namespace sbsteer
