#include "sbsteer/toy_transformer.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

namespace sbsteer {

void ToyModelConfig::validate() const {
    require(layers >= 1 && heads_per_layer >= 1 && dim >= 1 && vocab >= 2 && seq_len >= 1,
            "toy model sizes must be positive");
    require(dim % heads_per_layer == 0, "heads_per_layer must divide dim");
    for (const auto* plants : {&image_plants, &object_plants}) {
        for (const auto& p : *plants) {
            require(p.layer >= 0 && p.layer < layers && p.head >= 0 && p.head < heads_per_layer,
                    "planted head out of range");
            require(p.shift.size() == head_dim(), "plant shift must have head_dim entries");
        }
    }
}

namespace {

Vector random_direction(int n, double norm, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(n);
    for (int i = 0; i < n; ++i)
        v[i] = normal(rng);
    return v.normalized() * norm;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = normal(rng);
    return m;
}

} // namespace

ToyModelConfig default_toy_config(std::uint64_t seed) {
    ToyModelConfig cfg;
    cfg.seed = seed;
    std::mt19937_64 rng(derive_seed(seed, 7));
    const int hd = cfg.head_dim();
    const std::pair<int, int> image_sites[] = {{0, 1}, {1, 3}, {1, 6}, {2, 2}, {3, 5}};
    const std::pair<int, int> object_sites[] = {{0, 4}, {1, 0}, {2, 5}, {2, 7}, {3, 1}};
    for (auto [l, h] : image_sites)
        cfg.image_plants.push_back({l, h, random_direction(hd, 3.0, rng)});
    for (auto [l, h] : object_sites)
        cfg.object_plants.push_back({l, h, random_direction(hd, 2.0, rng)});
    return cfg;
}

std::string toy_config_to_json(const ToyModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["layers"] = cfg.layers;
    j["heads_per_layer"] = cfg.heads_per_layer;
    j["dim"] = cfg.dim;
    j["vocab"] = cfg.vocab;
    j["seq_len"] = cfg.seq_len;
    j["seed"] = cfg.seed;
    for (Level level : {Level::image, Level::object}) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& p : cfg.plants(level)) {
            nlohmann::ordered_json e;
            e["layer"] = p.layer;
            e["head"] = p.head;
            e["shift"] = std::vector<double>(p.shift.data(), p.shift.data() + p.shift.size());
            arr.push_back(std::move(e));
        }
        j[level == Level::image ? "image_plants" : "object_plants"] = std::move(arr);
    }
    return j.dump(2) + "\n";
}

ToyModelConfig toy_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed model config: ") + e.what());
    }
    ToyModelConfig cfg;
    try {
        cfg.layers = j.value("layers", cfg.layers);
        cfg.heads_per_layer = j.value("heads_per_layer", cfg.heads_per_layer);
        cfg.dim = j.value("dim", cfg.dim);
        cfg.vocab = j.value("vocab", cfg.vocab);
        cfg.seq_len = j.value("seq_len", cfg.seq_len);
        cfg.seed = j.value("seed", cfg.seed);
        for (Level level : {Level::image, Level::object}) {
            const char* name = level == Level::image ? "image_plants" : "object_plants";
            if (!j.contains(name))
                continue;
            auto& dst = level == Level::image ? cfg.image_plants : cfg.object_plants;
            for (const auto& e : j.at(name)) {
                const auto shift = e.at("shift").get<std::vector<double>>();
                dst.push_back({e.at("layer").get<int>(), e.at("head").get<int>(),
                               Eigen::Map<const Vector>(shift.data(), static_cast<Eigen::Index>(shift.size()))});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model config has a bad field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ToyWeights ToyWeights::random(const ToyModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(cfg.seed, 11));
    const int d = cfg.dim;
    const int hd = cfg.head_dim();
    ToyWeights w;
    w.embedding = gaussian_matrix(cfg.vocab, d, 1.0, rng);
    const double in_sd = 1.0 / std::sqrt(static_cast<double>(d));
    // Residual branches are scaled down with depth so the stream stays O(1).
    const double out_sd = 1.0 / std::sqrt(static_cast<double>(d) * cfg.heads_per_layer);
    w.heads.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : w.heads) {
        layer.resize(static_cast<std::size_t>(cfg.heads_per_layer));
        for (auto& h : layer) {
            h.query = gaussian_matrix(d, hd, in_sd, rng);
            h.key = gaussian_matrix(d, hd, in_sd, rng);
            h.value = gaussian_matrix(d, hd, in_sd, rng);
            h.output = gaussian_matrix(hd, d, out_sd, rng);
        }
    }
    w.unembedding = gaussian_matrix(d, cfg.vocab, in_sd, rng);
    return w;
}

ToyWeights ToyWeights::zeros(const ToyModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.dim;
    const int hd = cfg.head_dim();
    ToyWeights w;
    w.embedding = Matrix::Zero(cfg.vocab, d);
    w.heads.assign(static_cast<std::size_t>(cfg.layers),
                   std::vector<HeadWeights>(static_cast<std::size_t>(cfg.heads_per_layer),
                                            {Matrix::Zero(d, hd), Matrix::Zero(d, hd), Matrix::Zero(d, hd),
                                             Matrix::Zero(hd, d)}));
    w.unembedding = Matrix::Zero(d, cfg.vocab);
    return w;
}

int TokenDistribution::argmax() const {
    Eigen::Index i = 0;
    logits.maxCoeff(&i);
    return static_cast<int>(i);
}

ForwardResult forward(const ToyModelConfig& cfg, const ToyWeights& weights, const std::vector<int>& tokens,
                      ForwardMode mode, std::optional<Level> level, const HeadHook& hook) {
    require(!tokens.empty(), "input sequence must be nonempty");
    require(static_cast<int>(weights.heads.size()) == cfg.layers && weights.embedding.cols() == cfg.dim &&
                weights.embedding.rows() == cfg.vocab,
            "weights do not match the model config");
    const auto t_len = static_cast<Eigen::Index>(tokens.size());
    const int hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix x(t_len, cfg.dim);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        const int tok = tokens[static_cast<std::size_t>(t)];
        require(tok >= 0 && tok < cfg.vocab, "token id out of range");
        x.row(t) = weights.embedding.row(tok);
    }

    std::vector<const PlantedHead*> plants;
    if (mode == ForwardMode::hallucinated) {
        for (Level l : {Level::image, Level::object})
            if (!level || *level == l)
                for (const auto& p : cfg.plants(l))
                    plants.push_back(&p);
    }
    const Level record_level = level.value_or(Level::image);
    ForwardResult out;
    out.records.reserve(static_cast<std::size_t>(cfg.layers * cfg.heads_per_layer));
    for (int k = 0; k < cfg.layers; ++k) {
        Matrix update = Matrix::Zero(t_len, cfg.dim);
        for (int m = 0; m < cfg.heads_per_layer; ++m) {
            const auto& hw = weights.heads[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
            const Matrix q = x * hw.query;
            const Matrix kk = x * hw.key;
            const Matrix v = x * hw.value;
            Matrix o(t_len, hd);
            for (Eigen::Index t = 0; t < t_len; ++t) {
                // Causal softmax attention over positions 0..t.
                Vector s = (kk.topRows(t + 1) * q.row(t).transpose()) * scale;
                s = (s.array() - s.maxCoeff()).exp();
                s /= s.sum();
                o.row(t) = s.transpose() * v.topRows(t + 1);
            }
            Vector last = o.row(t_len - 1).transpose();
            for (const auto* p : plants)
                if (p->layer == k && p->head == m)
                    last += p->shift;
            if (hook)
                hook(k, m, last);
            o.row(t_len - 1) = last.transpose();
            out.records.push_back({k, m, record_level, mode == ForwardMode::clean ? Label::factual : Label::hallucinated, last});
            update += o * hw.output;
        }
        x += update;
    }

    out.distribution.logits = (x.row(t_len - 1) * weights.unembedding).transpose();
    const Vector shifted = (out.distribution.logits.array() - out.distribution.logits.maxCoeff()).exp();
    out.distribution.probs = shifted / shifted.sum();
    return out;
}

std::vector<int> random_sequence(const ToyModelConfig& cfg, std::uint64_t seed, std::uint64_t index) {
    std::mt19937_64 rng(derive_seed(seed, index));
    std::uniform_int_distribution<int> tok(0, cfg.vocab - 1);
    std::vector<int> seq(static_cast<std::size_t>(cfg.seq_len));
    for (auto& s : seq)
        s = tok(rng);
    return seq;
}

namespace detail {

std::vector<ActivationRecord> dataset_item(const ToyModelConfig& cfg, const ToyWeights& weights, Level level,
                                           int n_per_class, int i, std::uint64_t seed) {
    const std::uint64_t base = level == Level::image ? 0 : static_cast<std::uint64_t>(n_per_class);
    const auto seq = random_sequence(cfg, seed, base + static_cast<std::uint64_t>(i));
    std::vector<ActivationRecord> out;
    for (ForwardMode mode : {ForwardMode::clean, ForwardMode::hallucinated}) {
        auto res = forward(cfg, weights, seq, mode, level);
        for (auto& r : res.records)
            out.push_back(std::move(r));
    }
    return out;
}

bool flip_trial(const ToyModelConfig& cfg, const ToyWeights& weights, const SteeringPlan& plan, int i,
                std::uint64_t seed) {
    const auto seq = random_sequence(cfg, seed, static_cast<std::uint64_t>(i));
    const int clean = forward(cfg, weights, seq, ForwardMode::clean, std::nullopt).distribution.argmax();
    const auto sites = static_cast<std::uint64_t>(cfg.layers * cfg.heads_per_layer);
    const HeadHook hook = [&](int layer, int head, ActivationVector& a) {
        if (!plan.covers(layer, head))
            return;
        const auto site =
            static_cast<std::uint64_t>(i) * sites + static_cast<std::uint64_t>(layer * cfg.heads_per_layer + head);
        a = steer_activation(plan, layer, head, a, derive_seed(plan.seed, site));
    };
    const int steered = forward(cfg, weights, seq, ForwardMode::hallucinated, std::nullopt, hook).distribution.argmax();
    return clean == steered;
}

} // namespace detail

std::vector<ActivationRecord> generate_dataset(const ToyModelConfig& cfg, const ToyWeights& weights,
                                               int n_per_class, std::uint64_t seed) {
    require(n_per_class >= 1, "n_per_class must be >= 1");
    cfg.validate();
    std::vector<ActivationRecord> out;
    out.reserve(static_cast<std::size_t>(4 * n_per_class * cfg.layers * cfg.heads_per_layer));
    for (Level level : {Level::image, Level::object}) {
        for (int i = 0; i < n_per_class; ++i) {
            for (auto& r : detail::dataset_item(cfg, weights, level, n_per_class, i, seed))
                out.push_back(std::move(r));
        }
    }
    return out;
}

FlipRate evaluate_flip_rate(const ToyModelConfig& cfg, const ToyWeights& weights, const SteeringPlan& plan,
                            int n_trials, std::uint64_t seed) {
    require(n_trials >= 1, "n_trials must be >= 1");
    plan.validate();
    FlipRate out;
    out.trials = n_trials;
    for (int i = 0; i < n_trials; ++i)
        out.agreeing += detail::flip_trial(cfg, weights, plan, i, seed);
    out.rate = static_cast<double>(out.agreeing) / static_cast<double>(n_trials);
    return out;
}

} // namespace sbsteer
