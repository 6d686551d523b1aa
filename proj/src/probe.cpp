#include "sbsteer/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace sbsteer {

namespace {

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double top_eigenvalue(const Matrix& gram) {
    Vector v = Vector::Ones(gram.rows()).normalized();
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
        Vector w = gram * v;
        const double n = w.norm();
        if (n == 0.0)
            return 0.0;
        const double next = v.dot(w);
        v = w / n;
        if (std::abs(next - lambda) <= 1e-10 * std::abs(next)) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Power iteration approaches from below; pad so the GD step stays stable.
    return 1.05 * lambda;
}

bool is_positive(const ActivationRecord& r) {
    return r.label == Label::hallucinated;
}

} // namespace

std::uint64_t group_seed(std::uint64_t split_seed, const HeadKey& key) {
    const auto id = (static_cast<std::uint64_t>(key.layer) << 32) ^ (static_cast<std::uint64_t>(key.head) << 1) ^
                    static_cast<std::uint64_t>(key.level == Level::object);
    return derive_seed(split_seed, id);
}

ProbeResult fit_probe(const std::vector<ActivationRecord>& group, std::uint64_t split_seed,
                      const ProbeOptions& opts) {
    require(static_cast<int>(group.size()) >= kMinProbeRecords, "a probe needs at least 20 records");
    const auto dim = group.front().vec.size();
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < group.size(); ++i) {
        require(group[i].vec.size() == dim, "records of one head must share a dimension");
        require(group[i].key() == group.front().key(), "probe input mixes several heads");
        (is_positive(group[i]) ? pos : neg).push_back(i);
    }
    require(!pos.empty() && !neg.empty(), "probe input must contain both labels");

    // Stratified split from one shared shuffle: the first train_fraction of each class, in
    // shuffled order, trains. Swapping the two labels leaves the split unchanged.
    std::vector<std::size_t> order(group.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(split_seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto train_count = [&](std::size_t size) {
        const auto k = static_cast<std::size_t>(std::lround(opts.train_fraction * static_cast<double>(size)));
        return std::clamp<std::size_t>(k, 1, size > 1 ? size - 1 : 1);
    };
    const std::size_t pos_quota = train_count(pos.size());
    const std::size_t neg_quota = train_count(neg.size());
    std::size_t pos_taken = 0, neg_taken = 0;
    std::vector<std::size_t> train, valid;
    for (std::size_t i : order) {
        const bool positive = is_positive(group[i]);
        std::size_t& taken = positive ? pos_taken : neg_taken;
        if (taken < (positive ? pos_quota : neg_quota)) {
            ++taken;
            train.push_back(i);
        } else {
            valid.push_back(i);
        }
    }

    const auto n = static_cast<Eigen::Index>(train.size());
    Matrix x(n, dim + 1);
    Vector sign(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = group[train[static_cast<std::size_t>(i)]];
        x.row(i).head(dim) = r.vec.transpose();
        x(i, dim) = 1.0;
        sign[i] = is_positive(r) ? 1.0 : -1.0;
    }

    // Bias is not penalized.
    Vector penalty = Vector::Constant(dim + 1, opts.l2);
    penalty[dim] = 0.0;
    const double lipschitz = 0.25 * top_eigenvalue(x.transpose() * x / static_cast<double>(n)) + opts.l2;
    const double step = 1.0 / lipschitz;

    Vector w = Vector::Zero(dim + 1);
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        const Vector margin = sign.cwiseProduct(x * w);
        // d/dm log(1 + exp(-m)) = -sigmoid(-m)
        const Vector coeff = sign.cwiseProduct((1.0 / (1.0 + margin.array().exp())).matrix());
        const Vector grad = -(x.transpose() * coeff) / static_cast<double>(n) + penalty.cwiseProduct(w);
        if (grad.norm() < opts.grad_tol)
            break;
        w -= step * grad;
    }

    ProbeResult out;
    out.key = group.front().key();
    out.weights = w.head(dim);
    out.bias = w[dim];
    out.iterations = it;
    std::size_t correct = 0;
    for (auto i : valid) {
        const double score = out.weights.dot(group[i].vec) + out.bias;
        correct += (score > 0.0) == is_positive(group[i]);
    }
    out.validation_accuracy = static_cast<double>(correct) / static_cast<double>(valid.size());
    return out;
}

std::map<HeadKey, std::vector<ActivationRecord>> group_records(const std::vector<ActivationRecord>& records) {
    std::map<HeadKey, std::vector<ActivationRecord>> groups;
    for (const auto& r : records)
        groups[r.key()].push_back(r);
    return groups;
}

std::vector<ProbeResult> probe_all(const std::vector<ActivationRecord>& records, std::uint64_t split_seed,
                                   const ProbeOptions& opts) {
    std::vector<ProbeResult> out;
    for (const auto& [key, group] : group_records(records))
        out.push_back(fit_probe(group, group_seed(split_seed, key), opts));
    return out;
}

bool HeadRanking::is_selected(const HeadKey& key) const {
    return std::find(selected.begin(), selected.end(), key) != selected.end();
}

namespace {

bool rank_before(const RankEntry& a, const RankEntry& b) {
    if (a.accuracy != b.accuracy)
        return a.accuracy > b.accuracy;
    return a.key < b.key;
}

} // namespace

HeadRanking rank_heads(const std::vector<ProbeResult>& results, int top_h) {
    require(top_h >= 0, "H must be nonnegative");
    require(top_h <= static_cast<int>(results.size()),
            "H = " + std::to_string(top_h) + " exceeds the " + std::to_string(results.size()) + " probed heads");
    HeadRanking out;
    for (const auto& r : results)
        out.entries.push_back({r.key, r.validation_accuracy});
    std::sort(out.entries.begin(), out.entries.end(), rank_before);
    for (int i = 0; i < top_h; ++i)
        out.selected.push_back(out.entries[static_cast<std::size_t>(i)].key);
    return out;
}

HeadRanking rank_heads_per_level(const std::vector<ProbeResult>& results, int top_h) {
    HeadRanking out;
    for (Level level : {Level::image, Level::object}) {
        std::vector<ProbeResult> subset;
        std::copy_if(results.begin(), results.end(), std::back_inserter(subset),
                     [level](const ProbeResult& r) { return r.key.level == level; });
        if (subset.empty())
            continue;
        auto part = rank_heads(subset, top_h);
        out.entries.insert(out.entries.end(), part.entries.begin(), part.entries.end());
        out.selected.insert(out.selected.end(), part.selected.begin(), part.selected.end());
    }
    require(!out.entries.empty() || top_h == 0, "no probed heads to rank");
    std::sort(out.entries.begin(), out.entries.end(), rank_before);
    return out;
}

std::string ranking_to_csv(const HeadRanking& ranking) {
    std::string out = "layer,head,level,accuracy,selected\n";
    for (const auto& e : ranking.entries) {
        out += std::to_string(e.key.layer) + "," + std::to_string(e.key.head) + "," + std::string(to_string(e.key.level)) +
               "," + format_double(e.accuracy) + "," + (ranking.is_selected(e.key) ? "1" : "0") + "\n";
    }
    return out;
}

HeadRanking ranking_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "layer,head,level,accuracy,selected")
        throw IoError("ranking CSV has an unexpected header");
    HeadRanking out;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream row(line);
        std::string layer, head, level, acc, sel;
        if (!std::getline(row, layer, ',') || !std::getline(row, head, ',') || !std::getline(row, level, ',') ||
            !std::getline(row, acc, ',') || !std::getline(row, sel))
            throw IoError("malformed ranking row: " + line);
        RankEntry e;
        try {
            e.key = {std::stoi(layer), std::stoi(head), parse_level(level)};
            e.accuracy = std::stod(acc);
        } catch (const std::logic_error&) {
            throw IoError("malformed ranking row: " + line);
        }
        out.entries.push_back(e);
        if (sel == "1")
            out.selected.push_back(e.key);
    }
    return out;
}

} // namespace sbsteer
