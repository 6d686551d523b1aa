#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <system_error>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "sbsteer/bridge_io.hpp"
#include "sbsteer/kernels.hpp"
#include "sbsteer/oracle.hpp"
#include "sbsteer/probe.hpp"
#include "sbsteer/records.hpp"
#include "sbsteer/sde.hpp"
#include "sbsteer/steering.hpp"
#include "sbsteer/toy_transformer.hpp"
#include "sbsteer/trainer.hpp"

namespace sbsteer::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string git_blob_sha1(const std::string& content) {
    std::string header = "blob " + std::to_string(content.size());
    header.push_back('\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok)
        throw std::runtime_error("SHA-1 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

namespace {

// Everything a command produced, held in memory until all inputs have been validated.
struct Run {
    std::string command;
    std::vector<std::string> args;
    std::string config_path;
    std::vector<std::string> inputs;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> outputs; // path relative to out_dir, content
    std::string summary;                                      // printed on success
};

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    int jobs = 0;
    std::string out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON object of flag values; flags given on the command line win");
    sub->add_option("--seed", c.seed, "Base random seed")->capture_default_str();
    sub->add_option("--jobs", c.jobs, "Worker threads, 0 for the OpenMP default")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    sub->add_option("--out", c.out, "Output directory")->required();
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

std::string flag_value(const std::vector<std::string>& args, const std::string& flag) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == flag && i + 1 < args.size())
            return args[i + 1];
        if (args[i].rfind(flag + "=", 0) == 0)
            return args[i].substr(flag.size() + 1);
    }
    return {};
}

std::vector<std::string> with_flag(std::vector<std::string> args, const std::string& flag, const std::string& value) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == flag && i + 1 < args.size()) {
            args[i + 1] = value;
            return args;
        }
        if (args[i].rfind(flag + "=", 0) == 0) {
            args[i] = flag + "=" + value;
            return args;
        }
    }
    args.push_back(flag);
    args.push_back(value);
    return args;
}

// Splices config-file entries in as flags, skipping any flag already on the command line.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
    const std::string path = flag_value(args, "--config");
    if (path.empty())
        return args;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed config file " + path + ": " + e.what());
    }
    if (!j.is_object())
        throw ContractError("config file must hold a JSON object");
    const std::size_t lead = !args.empty() && args[0] == "oracle" ? 2 : 1;
    std::vector<std::string> extra;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        require(key != "config", "config files cannot name another config file");
        if (has_flag(args, flag))
            continue;
        std::string text;
        if (value.is_string())
            text = value.get<std::string>();
        else if (value.is_number() || value.is_boolean())
            text = value.dump();
        else
            throw ContractError("config entry '" + key + "' must be a string, number or boolean");
        extra.push_back(flag);
        extra.push_back(text);
    }
    std::vector<std::string> merged(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(std::min(lead, args.size())));
    merged.insert(merged.end(), extra.begin(), extra.end());
    merged.insert(merged.end(), args.begin() + static_cast<std::ptrdiff_t>(std::min(lead, args.size())), args.end());
    return merged;
}

double parse_number(std::string_view text, const std::string& where) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t'))
        text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
        text.remove_suffix(1);
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw IoError("not a number '" + std::string(text) + "' in " + where);
    return x;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep))
        out.push_back(cell);
    if (!line.empty() && line.back() == sep)
        out.emplace_back();
    return out;
}

Vector parse_vector(const std::string& text, const std::string& where) {
    const auto cells = split(text, ',');
    Vector v(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = parse_number(cells[i], where);
    return v;
}

bool starts_numeric(const std::string& line) {
    const auto p = line.find_first_not_of(" \t");
    return p != std::string::npos && (std::isdigit(static_cast<unsigned char>(line[p])) || line[p] == '-' ||
                                      line[p] == '+' || line[p] == '.');
}

// Rows of comma-separated numbers; an optional non-numeric header line and '#' comments are skipped.
std::vector<Vector> read_points_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<Vector> rows;
    std::string line;
    int lineno = 0;
    bool seen_first = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r" || line[0] == '#')
            continue;
        if (!seen_first) {
            seen_first = true;
            if (!starts_numeric(line))
                continue;
        }
        rows.push_back(parse_vector(line, path + ":" + std::to_string(lineno)));
        if (rows.back().size() != rows.front().size())
            throw IoError(path + ":" + std::to_string(lineno) + ": row width differs from the first row");
    }
    require(!rows.empty(), path + " holds no points");
    return rows;
}

std::string path_csv(const SdePath& path) {
    const auto dim = path.states.front().size();
    std::string out = "t";
    for (Eigen::Index d = 0; d < dim; ++d)
        out += ",x_" + std::to_string(d + 1);
    out += '\n';
    for (std::size_t k = 0; k < path.times.size(); ++k) {
        out += format_double(path.times[k]);
        for (Eigen::Index d = 0; d < dim; ++d)
            out += "," + format_double(path.states[k][d]);
        out += '\n';
    }
    return out;
}

std::uint64_t site_index(const HeadKey& key) {
    return (static_cast<std::uint64_t>(key.layer) << 32) | (static_cast<std::uint64_t>(key.head) << 1) |
           static_cast<std::uint64_t>(key.level == Level::object);
}

std::string head_file_stem(const HeadKey& key) {
    return "L" + std::to_string(key.layer) + "_H" + std::to_string(key.head) + "_" + std::string(to_string(key.level));
}

// Plan manifest plus every bridge file it references.
std::vector<std::string> plan_inputs(const std::string& manifest_path) {
    std::vector<std::string> out{manifest_path};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(manifest_path));
        const auto base = fs::path(manifest_path).parent_path();
        for (const auto& b : j.at("bridges"))
            out.push_back((base / b.at("path").get<std::string>()).string());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed plan manifest " + manifest_path + ": " + e.what());
    }
    return out;
}

ojson input_hashes(const std::vector<std::string>& inputs) {
    ojson arr = ojson::array();
    for (const auto& p : inputs)
        arr.push_back({{"path", p}, {"sha1", git_blob_sha1(read_text_file(p))}});
    return arr;
}

std::string combined_hash(const ojson& hashes) {
    std::string lines;
    for (const auto& h : hashes)
        lines += h.at("sha1").get<std::string>() + "\n";
    return git_blob_sha1(lines);
}

void commit(const Run& run) {
    const ojson inputs = input_hashes(run.inputs);
    const fs::path dir(run.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create output directory " + run.out_dir + ": " + ec.message());
    ojson outputs = ojson::array();
    for (const auto& [rel, content] : run.outputs) {
        const fs::path p = dir / rel;
        fs::create_directories(p.parent_path(), ec);
        if (ec)
            throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
        write_text_file(p.string(), content);
        outputs.push_back({{"path", rel}, {"sha1", git_blob_sha1(content)}});
    }
    ojson m;
    m["command"] = run.command;
    m["args"] = run.args;
    m["cwd"] = fs::current_path().string();
    m["config_path"] = run.config_path;
    m["input_paths"] = run.inputs;
    m["inputs"] = inputs;
    m["input_hash"] = combined_hash(inputs);
    m["output_dir"] = run.out_dir;
    m["seed"] = run.seed;
    m["outputs"] = std::move(outputs);
    write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

// ---- commands -------------------------------------------------------------

struct GenOptions {
    int n = kDefaultSamplesPerClass;
    std::string toy_config;
};

void cmd_gen(const Common& c, const GenOptions& o, Run& run) {
    require(o.n >= 1, "--n must be at least 1");
    ToyModelConfig cfg = default_toy_config(c.seed);
    if (!o.toy_config.empty()) {
        run.inputs.push_back(o.toy_config);
        cfg = toy_config_from_json(read_text_file(o.toy_config));
    }
    cfg.validate();
    const auto weights = ToyWeights::random(cfg);
    const auto records = kernels::generate_dataset(cfg, weights, o.n, c.seed, c.jobs);
    std::string dump;
    for (const auto& r : records) {
        dump += to_jsonl_line(r);
        dump += '\n';
    }
    run.outputs.emplace_back("dataset.jsonl", std::move(dump));
    run.outputs.emplace_back("toy_config.json", toy_config_to_json(cfg));
    run.summary = "wrote " + std::to_string(records.size()) + " records\n";
}

struct ProbeOptionsCli {
    std::string input;
    int top_h = kDefaultTopH;
};

void cmd_probe(const Common& c, const ProbeOptionsCli& o, Run& run) {
    require(o.top_h >= 0, "--top-h must be >= 0");
    run.inputs.push_back(o.input);
    const auto records = read_jsonl(o.input);
    require(!records.empty(), o.input + " holds no records");
    std::map<Level, int> groups_per_level;
    for (const auto& [key, group] : group_records(records))
        ++groups_per_level[key.level];
    for (const auto& [level, count] : groups_per_level)
        require(o.top_h <= count, "--top-h " + std::to_string(o.top_h) + " exceeds the " + std::to_string(count) +
                                      " probed " + std::string(to_string(level)) + "-level heads");
    // H = 0 is the no-intervention baseline: header only, nothing probed.
    const auto ranking =
        o.top_h == 0 ? HeadRanking{} : rank_heads_per_level(kernels::probe_all(records, c.seed, c.jobs), o.top_h);
    run.outputs.emplace_back("ranking.csv", ranking_to_csv(ranking));
    run.summary = "ranked " + std::to_string(ranking.entries.size()) + " heads, selected " +
                  std::to_string(ranking.selected.size()) + "\n";
}

struct TrainOptions {
    std::string input;
    std::string ranking;
    std::string source;
    std::string target;
    double eps = 1.0;
    int components = 10;
    int epochs = 200;
    int batch_size = 128;
    double lr = 1e-2;
    std::string init = "data_kmeans";
    std::string mode = "static_mean";
    double strength = 1.0;
    int sde_steps = kInferenceSdeSteps;
};

void cmd_train(const Common& c, const TrainOptions& o, Run& run) {
    if (o.eps < kMinEpsilon) {
        warn("epsilon " + format_double(o.eps) + " is below the supported minimum");
        throw ContractError("--eps must be >= " + format_double(kMinEpsilon));
    }
    TrainConfig base;
    base.epochs = o.epochs;
    base.batch_size = o.batch_size;
    base.learning_rate = o.lr;
    base.final_learning_rate = std::min(base.final_learning_rate, o.lr);
    base.g_components = o.components;
    base.epsilon = o.eps;
    base.init_strategy = parse_init_strategy(o.init);
    base.seed = c.seed;
    base.validate();
    SteeringPlan plan;
    plan.mode = parse_mode(o.mode);
    plan.strength_t = o.strength;
    plan.sde_steps = o.sde_steps;
    plan.seed = c.seed;
    plan.validate();

    const bool paired = !o.source.empty() || !o.target.empty();
    const bool dataset = !o.input.empty() || !o.ranking.empty();
    require(paired != dataset, "give either --input with --ranking, or --source with --target");

    if (paired) {
        require(!o.source.empty() && !o.target.empty(), "--source and --target go together");
        run.inputs = {o.source, o.target};
        const auto s0 = read_points_csv(o.source);
        const auto s1 = read_points_csv(o.target);
        require(s0.front().size() == s1.front().size(), "source and target dimensions differ");
        const auto res = fit(s0, s1, base);
        run.outputs.emplace_back("bridge.json", bridge_to_json(res.potential));
        run.outputs.emplace_back("report.json", report_to_json(res.report));
        run.outputs.emplace_back("loss.csv", loss_curve_csv(res.report));
        run.summary = "final loss " + format_double(res.report.final_loss) + "\n";
        return;
    }

    require(!o.input.empty() && !o.ranking.empty(), "--input and --ranking go together");
    run.inputs = {o.input, o.ranking};
    const auto ranking = ranking_from_csv(read_text_file(o.ranking));
    const auto groups = group_records(read_jsonl(o.input));
    auto keys = ranking.selected;
    std::sort(keys.begin(), keys.end());
    std::vector<kernels::FitTask> tasks;
    for (const auto& key : keys) {
        const auto it = groups.find(key);
        require(it != groups.end(), "selected head " + head_file_stem(key) + " has no records in " + o.input);
        kernels::FitTask task;
        for (const auto& r : it->second)
            (r.label == Label::hallucinated ? task.samples0 : task.samples1).push_back(r.vec);
        require(!task.samples0.empty() && !task.samples1.empty(),
                "head " + head_file_stem(key) + " lacks one of the two labels");
        task.config = base;
        task.config.seed = derive_seed(c.seed, site_index(key));
        tasks.push_back(std::move(task));
    }
    const auto results = kernels::fit_all(tasks, c.jobs);
    std::vector<PlanManifestEntry> entries;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto stem = head_file_stem(keys[i]);
        const std::string bridge_path = "bridges/" + stem + ".json";
        run.outputs.emplace_back(bridge_path, bridge_to_json(results[i].potential));
        run.outputs.emplace_back("reports/" + stem + ".json", report_to_json(results[i].report));
        run.outputs.emplace_back("reports/" + stem + "_loss.csv", loss_curve_csv(results[i].report));
        entries.push_back({keys[i], bridge_path});
    }
    run.outputs.emplace_back("plan.json", plan_manifest_json(plan, entries));
    run.summary = "trained " + std::to_string(keys.size()) + " bridges\n";
}

struct SteerEvalOptions {
    std::string plan;
    std::string toy_config;
    int trials = 2000;
    double strength = 1.0;
    std::string mode;
    int sde_steps = kInferenceSdeSteps;
    CLI::Option* strength_opt = nullptr;
    CLI::Option* mode_opt = nullptr;
    CLI::Option* steps_opt = nullptr;
};

void cmd_steer_eval(const Common& c, const SteerEvalOptions& o, Run& run) {
    require(o.trials >= 1, "--trials must be at least 1");
    run.inputs = plan_inputs(o.plan);
    run.inputs.push_back(o.toy_config);
    SteeringPlan plan = load_plan(o.plan);
    if (o.strength_opt->count())
        plan.strength_t = o.strength;
    if (o.mode_opt->count())
        plan.mode = parse_mode(o.mode);
    if (o.steps_opt->count())
        plan.sde_steps = o.sde_steps;
    plan.validate();
    const auto cfg = toy_config_from_json(read_text_file(o.toy_config));
    cfg.validate();
    for (const auto& [key, bridge] : plan.bridges) {
        require(key.layer >= 0 && key.layer < cfg.layers && key.head >= 0 && key.head < cfg.heads_per_layer,
                "plan bridge " + head_file_stem(key) + " lies outside the model");
        require(bridge.dim() == cfg.head_dim(), "plan bridge " + head_file_stem(key) + " has dimension " +
                                                    std::to_string(bridge.dim()) + ", model heads have " +
                                                    std::to_string(cfg.head_dim()));
    }
    const auto weights = ToyWeights::random(cfg);
    const auto baseline = kernels::evaluate_flip_rate(cfg, weights, SteeringPlan{}, o.trials, c.seed, c.jobs);
    const auto steered = kernels::evaluate_flip_rate(cfg, weights, plan, o.trials, c.seed, c.jobs);
    ojson s;
    s["baseline"] = baseline.rate;
    s["steered"] = steered.rate;
    s["delta"] = steered.rate - baseline.rate;
    s["trials"] = o.trials;
    s["mode"] = std::string(to_string(plan.mode));
    s["strength_t"] = plan.strength_t;
    s["sde_steps"] = plan.sde_steps;
    s["bridges"] = plan.bridges.size();
    run.summary = s.dump(2) + "\n";
    run.outputs.emplace_back("summary.json", run.summary);
}

struct TraceOptions {
    std::string bridge;
    std::string start;
    std::string starts;
    double strength = 1.0;
    int sde_steps = kValidationSdeSteps;
};

void cmd_trace(const Common& c, const TraceOptions& o, Run& run) {
    require(o.start.empty() != o.starts.empty(), "give exactly one of --start and --starts");
    require(o.strength >= 0.0 && o.strength <= 1.0, "--strength must lie in [0, 1]");
    require(o.sde_steps >= 1, "--sde-steps must be at least 1");
    run.inputs.push_back(o.bridge);
    const auto pot = load_bridge(o.bridge);
    std::vector<Vector> starts;
    if (!o.start.empty()) {
        starts.push_back(parse_vector(o.start, "--start"));
    } else {
        run.inputs.push_back(o.starts);
        starts = read_points_csv(o.starts);
    }
    for (const auto& s : starts)
        require(s.size() == pot.dim(), "start point dimension " + std::to_string(s.size()) +
                                           " does not match the bridge dimension " + std::to_string(pot.dim()));
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const auto path = integrate(pot, starts[i], o.strength, o.sde_steps, derive_seed(c.seed, i));
        char name[32];
        std::snprintf(name, sizeof name, "path_%03zu.csv", i);
        run.outputs.emplace_back(name, path_csv(path));
    }
    run.summary = "traced " + std::to_string(starts.size()) + " paths\n";
}

struct SinkhornOptions {
    std::string points;
    double eps = 1.0;
    double tol = 1e-9;
    int max_iter = 10000;
};

// Columns set,weight,x_1..x_D; set is "x" (source) or "y" (target). Weights are normalized per set.
oracle::DiscreteEotProblem read_sinkhorn_points(const std::string& path, double eps) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("set,weight", 0) != 0)
        throw IoError(path + ": expected a header starting with set,weight");
    std::vector<Vector> xs, ys;
    std::vector<double> wx, wy;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto cells = split(line, ',');
        const std::string where = path + ":" + std::to_string(lineno);
        if (cells.size() < 3)
            throw IoError(where + ": need set, weight and at least one coordinate");
        Vector p(static_cast<Eigen::Index>(cells.size() - 2));
        for (std::size_t k = 2; k < cells.size(); ++k)
            p[static_cast<Eigen::Index>(k - 2)] = parse_number(cells[k], where);
        const double w = parse_number(cells[1], where);
        require(w > 0.0, where + ": weights must be positive");
        if (cells[0] == "x") {
            xs.push_back(std::move(p));
            wx.push_back(w);
        } else if (cells[0] == "y") {
            ys.push_back(std::move(p));
            wy.push_back(w);
        } else {
            throw IoError(where + ": set must be x or y");
        }
    }
    require(!xs.empty() && !ys.empty(), path + " needs at least one x and one y point");
    const auto normalized = [](const std::vector<double>& w) {
        Vector v = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
        return Vector(v / v.sum());
    };
    return oracle::make_problem(xs, normalized(wx), ys, normalized(wy), eps);
}

void cmd_sinkhorn(const SinkhornOptions& o, Run& run) {
    require(o.eps > 0.0, "--eps must be positive");
    require(o.tol > 0.0, "--tol must be positive");
    require(o.max_iter >= 1, "--max-iter must be at least 1");
    run.inputs.push_back(o.points);
    const auto prob = read_sinkhorn_points(o.points, o.eps);
    const auto plan = oracle::sinkhorn(prob, o.tol, o.max_iter);
    if (!plan.converged)
        throw NumericalError("Sinkhorn did not reach tol " + format_double(o.tol) + " within " +
                             std::to_string(o.max_iter) + " iterations (violation " +
                             format_double(plan.max_violation) + ")");
    std::string csv;
    for (Eigen::Index i = 0; i < plan.matrix.rows(); ++i) {
        for (Eigen::Index j = 0; j < plan.matrix.cols(); ++j) {
            if (j)
                csv += ',';
            csv += format_double(plan.matrix(i, j));
        }
        csv += '\n';
    }
    run.outputs.emplace_back("plan.csv", csv);
    run.summary = csv;
}

struct ReplayOptions {
    std::string manifest;
    std::string out;
    int jobs = 0;
    CLI::Option* jobs_opt = nullptr;
};

class WorkingDirectory {
public:
    explicit WorkingDirectory(const fs::path& dir) : saved_(fs::current_path()) { fs::current_path(dir); }
    ~WorkingDirectory() {
        std::error_code ec;
        fs::current_path(saved_, ec);
    }
    WorkingDirectory(const WorkingDirectory&) = delete;
    WorkingDirectory& operator=(const WorkingDirectory&) = delete;

private:
    fs::path saved_;
};

int cmd_replay(const ReplayOptions& o, std::ostream& out, std::ostream& err) {
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_text_file(o.manifest));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed run manifest " + o.manifest + ": " + e.what());
    }
    std::vector<std::string> args;
    fs::path cwd;
    std::map<std::string, std::string> recorded;
    try {
        args = m.at("args").get<std::vector<std::string>>();
        cwd = m.at("cwd").get<std::string>();
        for (const auto& in : m.at("inputs")) {
            const fs::path p = cwd / in.at("path").get<std::string>();
            if (git_blob_sha1(read_text_file(p.string())) != in.at("sha1").get<std::string>())
                throw IoError("input " + p.string() + " changed since the recorded run");
        }
        for (const auto& o2 : m.at("outputs"))
            recorded[o2.at("path").get<std::string>()] = o2.at("sha1").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed run manifest " + o.manifest + ": " + e.what());
    }
    require(!args.empty() && args[0] != "replay", "manifest does not record a replayable command");
    const fs::path target = fs::absolute(o.out);
    args = with_flag(args, "--out", target.string());
    if (o.jobs_opt->count())
        args = with_flag(args, "--jobs", std::to_string(o.jobs));

    int code = kOk;
    {
        WorkingDirectory guard(cwd);
        std::ostringstream sink;
        code = run(args, sink, err);
    }
    if (code != kOk)
        return code;

    const auto replayed = nlohmann::json::parse(read_text_file((target / "manifest.json").string()));
    std::map<std::string, std::string> fresh;
    for (const auto& o2 : replayed.at("outputs"))
        fresh[o2.at("path").get<std::string>()] = o2.at("sha1").get<std::string>();
    int differing = 0;
    for (const auto& [path, sha] : recorded) {
        const auto it = fresh.find(path);
        const bool same = it != fresh.end() && it->second == sha;
        differing += !same;
        out << (same ? "same " : "differs ") << path << '\n';
    }
    for (const auto& [path, sha] : fresh) {
        if (!recorded.contains(path)) {
            ++differing;
            out << "extra " << path << '\n';
        }
    }
    out << (differing == 0 ? "replay identical\n" : "replay differs\n");
    return differing == 0 ? kOk : kReplayMismatch;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        const auto merged = merge_config(args);

        CLI::App app{"Schrodinger-bridge activation steering toolkit", "sbsteer"};
        app.require_subcommand(1);

        Common c_gen, c_probe, c_train, c_steer, c_trace, c_oracle;
        GenOptions gen;
        ProbeOptionsCli probe;
        TrainOptions train;
        SteerEvalOptions steer;
        TraceOptions trace;
        SinkhornOptions sink;
        ReplayOptions replay;

        auto* sub_gen = app.add_subcommand("gen", "Generate a labeled activation dataset from the toy model");
        add_common(sub_gen, c_gen);
        sub_gen->add_option("--n", gen.n, "Sequences per class and level")->capture_default_str();
        sub_gen->add_option("--toy-config", gen.toy_config, "Model config JSON (default: built-in, seeded by --seed)");

        auto* sub_probe = app.add_subcommand("probe", "Fit per-head probes and rank heads");
        add_common(sub_probe, c_probe);
        sub_probe->add_option("--input", probe.input, "Activation JSONL")->required();
        sub_probe->add_option("--top-h", probe.top_h, "Heads selected per level")->capture_default_str();

        auto* sub_train = app.add_subcommand("train-bridge", "Fit one bridge per selected head and level");
        add_common(sub_train, c_train);
        sub_train->add_option("--input", train.input, "Activation JSONL");
        sub_train->add_option("--ranking", train.ranking, "Ranking CSV naming the selected heads");
        sub_train->add_option("--source", train.source, "CSV of hallucinated-side points (single bridge)");
        sub_train->add_option("--target", train.target, "CSV of factual-side points (single bridge)");
        sub_train->add_option("--eps", train.eps, "Entropy regularizer")->capture_default_str();
        sub_train->add_option("--components", train.components, "Mixture components G")->capture_default_str();
        sub_train->add_option("--epochs", train.epochs)->capture_default_str();
        sub_train->add_option("--batch-size", train.batch_size)->capture_default_str();
        sub_train->add_option("--lr", train.lr, "Initial learning rate")->capture_default_str();
        sub_train->add_option("--init", train.init, "data_kmeans or random_sphere")->capture_default_str();
        sub_train->add_option("--mode", train.mode, "Steering mode recorded in plan.json")->capture_default_str();
        sub_train->add_option("--strength", train.strength, "Strength t recorded in plan.json")->capture_default_str();
        sub_train->add_option("--sde-steps", train.sde_steps, "SDE steps recorded in plan.json")->capture_default_str();

        auto* sub_steer = app.add_subcommand("steer-eval", "Compare steered and unsteered token agreement");
        add_common(sub_steer, c_steer);
        sub_steer->add_option("--plan", steer.plan, "Plan manifest JSON")->required();
        sub_steer->add_option("--toy-config", steer.toy_config, "Model config JSON")->required();
        sub_steer->add_option("--trials", steer.trials)->capture_default_str();
        steer.strength_opt = sub_steer->add_option("--strength", steer.strength, "Override the plan's strength t");
        steer.mode_opt = sub_steer->add_option("--mode", steer.mode, "Override the plan's mode");
        steer.steps_opt = sub_steer->add_option("--sde-steps", steer.sde_steps, "Override the plan's SDE steps");

        auto* sub_trace = app.add_subcommand("trace", "Dump SDE paths of one bridge as CSV");
        add_common(sub_trace, c_trace);
        sub_trace->add_option("--bridge", trace.bridge, "Bridge JSON")->required();
        sub_trace->add_option("--start", trace.start, "One start point, comma separated");
        sub_trace->add_option("--starts", trace.starts, "CSV of start points, one per row");
        sub_trace->add_option("--strength", trace.strength, "Stopping time t")->capture_default_str();
        sub_trace->add_option("--sde-steps", trace.sde_steps)->capture_default_str();

        auto* sub_oracle = app.add_subcommand("oracle", "Reference solvers");
        sub_oracle->require_subcommand(1);
        auto* sub_sinkhorn = sub_oracle->add_subcommand("sinkhorn", "Discrete entropic transport plan");
        add_common(sub_sinkhorn, c_oracle);
        sub_sinkhorn->add_option("--points", sink.points, "CSV with columns set,weight,x_1..")->required();
        sub_sinkhorn->add_option("--eps", sink.eps)->capture_default_str();
        sub_sinkhorn->add_option("--tol", sink.tol)->capture_default_str();
        sub_sinkhorn->add_option("--max-iter", sink.max_iter)->capture_default_str();

        auto* sub_replay = app.add_subcommand("replay", "Rerun a recorded command and compare its outputs");
        sub_replay->add_option("--manifest", replay.manifest, "manifest.json of the recorded run")->required();
        sub_replay->add_option("--out", replay.out, "Directory for the replayed outputs")->required();
        replay.jobs_opt = sub_replay->add_option("--jobs", replay.jobs, "Thread count for the rerun")
                              ->check(CLI::NonNegativeNumber);

        try {
            std::vector<std::string> reversed(merged.rbegin(), merged.rend());
            app.parse(reversed);
        } catch (const CLI::ParseError& e) {
            return app.exit(e, out, err) == 0 ? kOk : kValidation;
        }

        if (sub_replay->parsed())
            return cmd_replay(replay, out, err);

        Run r;
        r.args = args;
        const Common* common = nullptr;
        if (sub_gen->parsed()) {
            common = &c_gen;
            r.command = "gen";
            cmd_gen(c_gen, gen, r);
        } else if (sub_probe->parsed()) {
            common = &c_probe;
            r.command = "probe";
            cmd_probe(c_probe, probe, r);
        } else if (sub_train->parsed()) {
            common = &c_train;
            r.command = "train-bridge";
            cmd_train(c_train, train, r);
        } else if (sub_steer->parsed()) {
            common = &c_steer;
            r.command = "steer-eval";
            cmd_steer_eval(c_steer, steer, r);
        } else if (sub_trace->parsed()) {
            common = &c_trace;
            r.command = "trace";
            cmd_trace(c_trace, trace, r);
        } else {
            common = &c_oracle;
            r.command = "oracle sinkhorn";
            cmd_sinkhorn(sink, r);
        }
        r.config_path = common->config;
        if (!common->config.empty())
            r.inputs.insert(r.inputs.begin(), common->config);
        r.out_dir = common->out;
        r.seed = common->seed;
        commit(r);
        out << r.summary;
        return kOk;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::domain_error& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace sbsteer::cli
