#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mknock/common.hpp"
#include "mknock/config.hpp"
#include "mknock/csv.hpp"
#include "mknock/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace mknock;

// ---------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

struct Manifest {
    std::string subcommand;
    std::uint64_t seed = 0;
    std::string started = timestamp();
    json config = json::object();
    std::map<std::string, std::string> inputs;  // path -> digest
    std::vector<std::string> outputs;
    std::map<std::string, std::string> sub_seeds;  // stage -> hex seed

    void add_input(const std::string& path) { inputs[path] = file_digest(path); }
    void sub_seed(const std::string& stage_name, std::uint64_t s) {
        sub_seeds[stage_name] = hex64(s);
    }

    void write(const fs::path& dir) const {
        json j;
        j["tool"] = "mknock";
        j["version"] = kVersion;
        j["subcommand"] = subcommand;
        j["seed"] = seed;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["sub_seeds"] = sub_seeds;
        j["started"] = started;
        j["finished"] = timestamp();
        std::ofstream out(dir / "manifest.json");
        if (!out) throw io_error("cannot write manifest in '" + dir.string() + "'");
        out << j.dump(2) << "\n";
    }
};

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + out + "'");
    return dir;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw io_error("cannot parse '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------
// Shared input handling
// ---------------------------------------------------------------------

BatchPartition make_partition(PartitionMethod method, const MatrixXd& x, int batches,
                              std::uint64_t seed) {
    const int p = static_cast<int>(x.cols());
    switch (method) {
        case PartitionMethod::single:
            if (batches != 1)
                throw config_error("partition 'single' requires --batches 1");
            return single_partition(p);
        case PartitionMethod::clustered:
            return cluster_batches(x, batches);
        case PartitionMethod::uniform: {
            Rng rng(derive_seed(seed, stage::partition, 0));
            return uniform_partition(p, batches, rng);
        }
    }
    return single_partition(p);
}

json partition_to_json(const BatchPartition& partition) {
    json batches = json::array();
    for (const auto& batch : partition.batches) {
        json ids = json::array();
        for (int i : batch) ids.push_back(i + 1);  // 1-based in files
        batches.push_back(ids);
    }
    return json{{"method", to_string(partition.method)}, {"batches", batches}};
}

BatchPartition partition_from_json(const json& j, int p) {
    BatchPartition partition;
    partition.method = partition_method_from_string(j.at("method").get<std::string>());
    for (const auto& ids : j.at("batches")) {
        std::vector<int> batch;
        for (const auto& id : ids) batch.push_back(id.get<int>() - 1);
        partition.batches.push_back(std::move(batch));
    }
    check_partition(partition, p);
    return partition;
}

std::vector<std::string> knockoff_header(int p, int d) {
    std::vector<std::string> header;
    header.reserve(static_cast<std::size_t>(p) * d);
    for (int c = 1; c <= d; ++c)
        for (int i = 1; i <= p; ++i)
            header.push_back("f" + std::to_string(i) + "_k" + std::to_string(c));
    return header;
}

// ---------------------------------------------------------------------
// construct
// ---------------------------------------------------------------------

struct ConstructArgs {
    std::string x_path, y_path, out;
    int d = 1;
    int batches = 1;
    std::string partition = "single";
    std::uint64_t seed = 1;
    double sigma = 0.0;
    bool has_sigma = false;
};

int cmd_construct(const ConstructArgs& args) {
    Manifest manifest;
    manifest.subcommand = "construct";
    manifest.seed = args.seed;
    manifest.add_input(args.x_path);

    const CsvTable xt = read_csv(args.x_path);
    const Eigen::Index n = xt.values.rows();
    const Eigen::Index p = xt.values.cols();

    VectorXd y = VectorXd::Zero(n);
    const bool have_y = !args.y_path.empty();
    if (have_y) {
        manifest.add_input(args.y_path);
        y = read_csv_vector(args.y_path);
    }
    DesignData data = make_design(xt.values, y);

    const PartitionMethod pm = partition_method_from_string(args.partition);
    const BatchPartition partition = make_partition(pm, data.x, args.batches, args.seed);

    std::optional<double> sigma_known;
    if (args.has_sigma) sigma_known = args.sigma;

    bool extended = false;
    if (n < (args.d + 1) * p) {
        if (!have_y && !sigma_known)
            throw config_error("extension to (d+1)p rows requires --y (to estimate "
                               "sigma) or --sigma");
        if (!have_y)
            throw config_error("extension requires --y: the response is extended "
                               "alongside the design");
        const std::uint64_t ext_seed =
            derive_seed(args.seed, stage::extend, 0, static_cast<std::uint64_t>(args.d));
        manifest.sub_seed("extend", ext_seed);
        Rng rng(ext_seed);
        data = extend_design(data, args.d, sigma_known, rng);
        extended = true;
    }

    const std::uint64_t cons_seed =
        derive_seed(args.seed, stage::construct, 0, static_cast<std::uint64_t>(args.d));
    manifest.sub_seed("construct", cons_seed);
    Rng crng(cons_seed);
    KnockoffSet ks = construct_knockoffs(data, args.d, partition, crng);
    if (extended)
        ks.sigma_hat = sigma_known ? *sigma_known : std::sqrt(estimate_sigma_sq(data));

    const GramReport report = verify_gram(data, ks, 1e-6);
    if (!report.pass)
        throw numerical_error("constructed knockoffs fail Gram verification (max "
                              "deviation " + format_double(report.max_dev) + ")");

    const fs::path dir = prepare_out_dir(args.out);
    write_csv((dir / "knockoffs.csv").string(), ks.knockoffs,
              knockoff_header(static_cast<int>(p), args.d));
    manifest.outputs.push_back("knockoffs.csv");
    if (extended) {
        write_csv((dir / "y_extended.csv").string(), data.y, {"y"});
        manifest.outputs.push_back("y_extended.csv");
    }

    json meta;
    meta["d"] = args.d;
    meta["p"] = p;
    meta["n"] = data.n();
    meta["n_original"] = data.n_original;
    meta["extended_rows"] = ks.extended_rows;
    meta["per_batch_s0"] = ks.per_batch_s0;
    meta["partition"] = partition_to_json(ks.partition);
    meta["sigma_hat"] = ks.sigma_hat ? json(*ks.sigma_hat) : json(nullptr);
    meta["seed"] = args.seed;
    meta["alignment_error"] = ks.alignment_error;
    meta["gram_max_deviation"] = report.max_dev;
    write_json_file(dir / "knockoff_meta.json", meta);
    manifest.outputs.push_back("knockoff_meta.json");

    manifest.config = {{"d", args.d},
                       {"batches", args.batches},
                       {"partition", args.partition},
                       {"sigma", sigma_known ? json(*sigma_known) : json(nullptr)}};
    manifest.write(dir);
    std::cout << "constructed d=" << args.d << " knockoffs for p=" << p
              << " features (" << ks.partition.n_batches() << " batches, max Gram "
              << "deviation " << format_double(report.max_dev) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------
// score
// ---------------------------------------------------------------------

struct ScoreArgs {
    std::string x_path, y_path, knockoffs_path, meta_path, out;
    int nlambda_multiplier = 5;
    double grid_ratio = 1e-3;
    std::uint64_t seed = 1;
    int d_max = 0;
};

struct LoadedKnockoffs {
    DesignData data;
    KnockoffSet ks;
};

LoadedKnockoffs load_knockoffs(const std::string& x_path, const std::string& y_path,
                               const std::string& knockoffs_path,
                               const std::string& meta_path) {
    const CsvTable xt = read_csv(x_path);
    const VectorXd y = read_csv_vector(y_path);
    const json meta = read_json_file(meta_path);

    const int d = meta.at("d").get<int>();
    const auto p = meta.at("p").get<Eigen::Index>();
    const auto n_ext = meta.at("n").get<Eigen::Index>();
    const auto n_orig = meta.at("n_original").get<Eigen::Index>();
    if (xt.values.cols() != p)
        throw io_error("x has " + std::to_string(xt.values.cols()) +
                       " columns, metadata says p=" + std::to_string(p));
    if (xt.values.rows() != n_orig)
        throw io_error("x has " + std::to_string(xt.values.rows()) +
                       " rows, metadata says n_original=" + std::to_string(n_orig));
    if (y.size() != n_ext)
        throw io_error("y length " + std::to_string(y.size()) +
                       " != extended n " + std::to_string(n_ext) +
                       " (use y_extended.csv from construct)");

    DesignData base = make_design(xt.values, y.head(n_orig));
    LoadedKnockoffs out;
    if (n_ext > n_orig) {
        out.data.x = MatrixXd::Zero(n_ext, p);
        out.data.x.topRows(n_orig) = base.x;
    } else {
        out.data.x = base.x;
    }
    out.data.y = y;
    out.data.n_original = n_orig;
    out.data.column_norms = base.column_norms;

    const CsvTable kt = read_csv(knockoffs_path);
    if (kt.values.rows() != n_ext || kt.values.cols() != static_cast<Eigen::Index>(d) * p)
        throw io_error("knockoff matrix shape " + std::to_string(kt.values.rows()) +
                       "x" + std::to_string(kt.values.cols()) + " does not match "
                       "metadata (" + std::to_string(n_ext) + "x" +
                       std::to_string(d * p) + ")");

    out.ks.d = d;
    out.ks.knockoffs = kt.values;
    out.ks.per_batch_s0 = meta.at("per_batch_s0").get<std::vector<double>>();
    out.ks.partition = partition_from_json(meta.at("partition"), static_cast<int>(p));
    out.ks.extended_rows = n_ext - n_orig;
    if (!meta.at("sigma_hat").is_null())
        out.ks.sigma_hat = meta.at("sigma_hat").get<double>();
    return out;
}

int cmd_score(const ScoreArgs& args) {
    Manifest manifest;
    manifest.subcommand = "score";
    manifest.seed = args.seed;
    manifest.add_input(args.x_path);
    manifest.add_input(args.y_path);
    manifest.add_input(args.knockoffs_path);
    manifest.add_input(args.meta_path);

    LoadedKnockoffs loaded = load_knockoffs(args.x_path, args.y_path,
                                            args.knockoffs_path, args.meta_path);
    const int d = loaded.ks.d;
    const int p = static_cast<int>(loaded.data.p());
    const int d_max = args.d_max > 0 ? args.d_max : d;

    const LambdaGrid grid =
        make_grid_for(loaded.data, loaded.ks, loaded.data.y, args.nlambda_multiplier,
                      d_max, args.grid_ratio);

    const std::uint64_t tie_seed =
        derive_seed(args.seed, stage::score, 0, static_cast<std::uint64_t>(d));
    const std::uint64_t perm_seed =
        derive_seed(args.seed, stage::permute, 0, static_cast<std::uint64_t>(d));
    manifest.sub_seed("score", tie_seed);
    manifest.sub_seed("permute", perm_seed);
    Rng perm_rng(perm_seed);
    const ScoreTable table = score_design(loaded.data, loaded.ks, loaded.data.y, grid,
                                          tie_seed, perm_rng);

    MatrixXd score_out(p, d + 3);
    for (int i = 0; i < p; ++i) {
        score_out(i, 0) = i + 1;
        for (int j = 0; j <= d; ++j) score_out(i, j + 1) = table.scores(i, j);
        score_out(i, d + 2) = table.ranks[static_cast<std::size_t>(i)];
    }
    std::vector<std::string> header = {"feature_id"};
    for (int j = 0; j <= d; ++j) header.push_back("z" + std::to_string(j));
    header.push_back("rank");

    const fs::path dir = prepare_out_dir(args.out);
    write_csv((dir / "scores.csv").string(), score_out, header);
    manifest.outputs.push_back("scores.csv");

    json meta;
    meta["d"] = d;
    meta["p"] = p;
    meta["tie_seed"] = hex64(tie_seed);
    meta["seed"] = args.seed;
    meta["grid"] = {{"lambda_max", grid.lambda_max},
                    {"count", grid.count()},
                    {"ratio", grid.ratio}};
    write_json_file(dir / "scores_meta.json", meta);
    manifest.outputs.push_back("scores_meta.json");

    manifest.config = {{"nlambda_multiplier", args.nlambda_multiplier},
                       {"grid_ratio", args.grid_ratio},
                       {"d_max", d_max}};
    manifest.write(dir);
    std::cout << "scored " << p << " features on a " << grid.count()
              << "-point grid (lambda_max " << format_double(grid.lambda_max) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------
// select
// ---------------------------------------------------------------------

struct SelectArgs {
    std::string scores_path, meta_path, method = "mirror", out;
    double alpha = 0.1;
    std::uint64_t seed = 1;
};

ScoreTable load_score_table(const std::string& scores_path,
                            const std::string& meta_path) {
    const CsvTable st = read_csv(scores_path);
    const json meta = read_json_file(meta_path);
    const int d = meta.at("d").get<int>();
    const auto p = st.values.rows();
    if (st.values.cols() != d + 3)
        throw io_error("score table has " + std::to_string(st.values.cols()) +
                       " columns, expected feature_id, z0..z" + std::to_string(d) +
                       ", rank");

    ScoreTable table;
    table.d = d;
    table.tie_seed = parse_hex64(meta.at("tie_seed").get<std::string>());
    table.scores = st.values.block(0, 1, p, d + 1);
    table.ranks = compute_ranks(table.scores, table.tie_seed);
    for (Eigen::Index i = 0; i < p; ++i) {
        const int file_rank = static_cast<int>(st.values(i, d + 2));
        if (file_rank != table.ranks[static_cast<std::size_t>(i)]) {
            warn("rank column disagrees with the recorded tie seed at feature " +
                 std::to_string(i + 1) + "; using recomputed ranks");
            break;
        }
    }
    return table;
}

TuningParams params_for_method(const std::string& method, int d) {
    const MethodSpec spec = method_from_string(method);
    switch (spec.kind) {
        case MethodSpec::Kind::mirror: return mirror_params(d);
        case MethodSpec::Kind::max: return max_params(d);
        case MethodSpec::Kind::fixed: {
            const int d1 = d + 1;
            const int i_c = static_cast<int>(std::lround(spec.c * d1));
            const int i_lambda = static_cast<int>(std::lround(spec.lambda * d1));
            if (std::abs(spec.c * d1 - i_c) > 1e-9 ||
                std::abs(spec.lambda * d1 - i_lambda) > 1e-9)
                throw config_error("fixed (c, lambda) must lie on the grid {i/" +
                                   std::to_string(d1) + "}");
            return make_params(d, i_c, i_lambda);
        }
        default:
            throw config_error("select supports mirror, max or fixed:<c>,<lambda>");
    }
}

int cmd_select(const SelectArgs& args) {
    Manifest manifest;
    manifest.subcommand = "select";
    manifest.seed = args.seed;
    manifest.add_input(args.scores_path);
    manifest.add_input(args.meta_path);

    const ScoreTable table = load_score_table(args.scores_path, args.meta_path);
    const TuningParams params = params_for_method(args.method, table.d);

    const std::uint64_t comp_seed = derive_seed(args.seed, stage::select, 0, 0);
    manifest.sub_seed("select", comp_seed);
    Rng rng(comp_seed);
    const CompetitionOutcome outcome = compete(table, params, rng);
    const Selection sel = select_discoveries(outcome, args.alpha);

    std::vector<int> order_index(static_cast<std::size_t>(table.p()), 0);
    for (std::size_t i = 0; i < outcome.order.size(); ++i)
        order_index[static_cast<std::size_t>(outcome.order[i])] = static_cast<int>(i) + 1;

    MatrixXd rows(static_cast<Eigen::Index>(sel.discoveries.size()), 4);
    for (std::size_t i = 0; i < sel.discoveries.size(); ++i) {
        const int f = sel.discoveries[i];
        rows(static_cast<Eigen::Index>(i), 0) = f + 1;
        rows(static_cast<Eigen::Index>(i), 1) = outcome.w(f);
        rows(static_cast<Eigen::Index>(i), 2) = outcome.labels[static_cast<std::size_t>(f)];
        rows(static_cast<Eigen::Index>(i), 3) = order_index[static_cast<std::size_t>(f)];
    }

    const fs::path dir = prepare_out_dir(args.out);
    write_csv((dir / "discoveries.csv").string(), rows,
              {"feature_id", "w", "label", "order_index"});
    manifest.outputs.push_back("discoveries.csv");

    manifest.config = {{"method", args.method},
                       {"alpha", args.alpha},
                       {"i_c", params.i_c},
                       {"i_lambda", params.i_lambda}};
    manifest.write(dir);
    std::cout << "i_star=" << sel.i_star << " discoveries=" << sel.discoveries.size()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------

struct TuneArgs {
    std::string x_path, y_path, d_list = "1", out;
    int mb = 32;
    double alpha = 0.1;
    int batches = 1;
    std::string partition = "single";
    std::uint64_t seed = 1;
    double sigma = 0.0;
    bool has_sigma = false;
    int nlambda_multiplier = 5;
    double grid_ratio = 1e-3;
};

std::vector<int> parse_d_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw config_error("cannot parse d list entry '" + item + "'");
        }
    }
    if (out.empty()) throw config_error("empty d list");
    return out;
}

int cmd_tune(const TuneArgs& args) {
    Manifest manifest;
    manifest.subcommand = "tune";
    manifest.seed = args.seed;
    manifest.add_input(args.x_path);
    manifest.add_input(args.y_path);

    const CsvTable xt = read_csv(args.x_path);
    const VectorXd y = read_csv_vector(args.y_path);
    DesignData data = make_design(xt.values, y);

    const std::vector<int> d_list = parse_d_list(args.d_list);
    int d_max = 1;
    for (int d : d_list) d_max = std::max(d_max, d);

    std::optional<double> sigma_known;
    if (args.has_sigma) sigma_known = args.sigma;

    const PartitionMethod pm = partition_method_from_string(args.partition);
    const BatchPartition partition = make_partition(pm, data.x, args.batches, args.seed);

    std::map<int, PipelineStage> stages;
    for (int d : d_list)
        stages[d] = pipeline_stage(data, partition, d, d_max, args.nlambda_multiplier,
                                   args.grid_ratio, sigma_known, args.seed, 0);

    const double sigma_hat =
        sigma_known ? *sigma_known : std::sqrt(estimate_sigma_sq(data));
    const double lambda0 = estimate_lambda0(stages.at(d_max).scores);
    const std::uint64_t conj_seed = derive_seed(args.seed, stage::conjecture, 0);
    manifest.sub_seed("conjecture", conj_seed);
    Rng conj_rng(conj_seed);
    const ConjectureModel conjecture =
        build_conjecture(stages.at(d_max).scores, lambda0, conj_rng);

    BootstrapInputs inputs;
    inputs.original = &data;
    for (int d : d_list) {
        inputs.designs[d] = &stages.at(d).extended;
        inputs.knockoffs[d] = &stages.at(d).kset;
    }
    inputs.nlambda_multiplier = args.nlambda_multiplier;
    inputs.d_max = d_max;
    inputs.grid_ratio = args.grid_ratio;

    const std::uint64_t boot_seed = derive_seed(args.seed, stage::bootstrap, 0);
    manifest.sub_seed("bootstrap", boot_seed);
    Rng boot_rng(boot_seed);
    const std::vector<BootstrapSample> samples =
        draw_bootstrap(inputs, conjecture, d_list, sigma_hat, args.mb, boot_rng);

    std::map<int, ScoreTable> real_scores;
    for (int d : d_list) real_scores[d] = stages.at(d).scores;
    const std::uint64_t tune_seed = derive_seed(args.seed, stage::tune, 0);
    manifest.sub_seed("tune", tune_seed);
    const SelectResult sel =
        multi_knockoff_select(real_scores, samples, d_list, args.alpha, tune_seed);

    const fs::path dir = prepare_out_dir(args.out);

    MatrixXd objective(static_cast<Eigen::Index>(sel.objective_table.size()), 5);
    for (std::size_t i = 0; i < sel.objective_table.size(); ++i) {
        const CandidateObjective& cand = sel.objective_table[i];
        const auto r = static_cast<Eigen::Index>(i);
        objective(r, 0) = cand.params.d1 - 1;
        objective(r, 1) = cand.params.i_c;
        objective(r, 2) = cand.params.i_lambda;
        objective(r, 3) = cand.params.c();
        objective(r, 4) = cand.objective;
    }
    write_csv((dir / "objective.csv").string(), objective,
              {"d", "i_c", "i_lambda", "c", "objective"});
    manifest.outputs.push_back("objective.csv");

    MatrixXd discoveries(static_cast<Eigen::Index>(sel.discoveries.size()), 1);
    for (std::size_t i = 0; i < sel.discoveries.size(); ++i)
        discoveries(static_cast<Eigen::Index>(i), 0) = sel.discoveries[i] + 1;
    write_csv((dir / "discoveries.csv").string(), discoveries, {"feature_id"});
    manifest.outputs.push_back("discoveries.csv");

    json chosen;
    chosen["d"] = sel.chosen_d;
    chosen["i_c"] = sel.params.i_c;
    chosen["i_lambda"] = sel.params.i_lambda;
    chosen["c"] = sel.params.c();
    chosen["lambda"] = sel.params.lambda();
    chosen["objective"] = sel.objective;
    chosen["lambda0"] = lambda0;
    chosen["sigma_hat"] = sigma_hat;
    write_json_file(dir / "chosen.json", chosen);
    manifest.outputs.push_back("chosen.json");

    manifest.config = {{"d_list", d_list},       {"m_b", args.mb},
                       {"alpha", args.alpha},    {"batches", args.batches},
                       {"partition", args.partition},
                       {"nlambda_multiplier", args.nlambda_multiplier},
                       {"grid_ratio", args.grid_ratio}};
    manifest.write(dir);
    std::cout << "chosen d=" << sel.chosen_d << " c=" << format_double(sel.params.c())
              << " lambda=" << format_double(sel.params.lambda())
              << " discoveries=" << sel.discoveries.size() << "\n";
    return 0;
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

struct SimulateArgs {
    std::string config_path, out;
    std::uint64_t seed = 0;
    bool has_seed = false;
    int threads = -1;
};

int cmd_simulate(const SimulateArgs& args) {
    Manifest manifest;
    manifest.subcommand = "simulate";
    manifest.add_input(args.config_path);

    ExperimentConfig cfg = parse_config(args.config_path);
    if (args.has_seed) cfg.seed = args.seed;
    if (args.threads >= 0) cfg.threads = args.threads;
    manifest.seed = cfg.seed;
    manifest.config = json::parse(config_to_json(cfg));

    const std::vector<ExperimentRecord> records = run_experiment(cfg);
    const std::vector<CurvePoint> curves = aggregate(records);
    const std::vector<DiffPoint> diffs = power_differences(records);

    const fs::path dir = prepare_out_dir(args.out);
    write_records_csv((dir / "records.csv").string(), records);
    manifest.outputs.push_back("records.csv");
    write_curves_csv((dir / "curves.csv").string(), curves);
    manifest.outputs.push_back("curves.csv");
    write_diff_csv((dir / "power_diff.csv").string(), diffs);
    manifest.outputs.push_back("power_diff.csv");
    manifest.write(dir);

    int failed = 0;
    for (const ExperimentRecord& rec : records)
        if (rec.failed) ++failed;
    std::cout << "simulated " << cfg.replicates << " replicates, " << records.size()
              << " records (" << failed << " failed)\n";
    return 0;
}

// ---------------------------------------------------------------------
// report
// ---------------------------------------------------------------------

struct ReportArgs {
    std::string curves_path, out;
    bool svg = false;
};

struct CurveRow {
    std::string method;
    int d = 0;
    double alpha = 0.0;
    double fdr = 0.0, fdr_se = 0.0, fdr_ratio = 0.0;
    bool has_power = false;
    double power = 0.0, power_se = 0.0;
};

std::vector<CurveRow> read_curves(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw io_error("empty curves file '" + path + "'");
    std::vector<CurveRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (fields.size() < 10) throw io_error("bad curves row: " + line);
        CurveRow row;
        row.method = fields[0];
        row.d = std::stoi(fields[1]);
        row.alpha = std::stod(fields[2]);
        row.fdr = std::stod(fields[5]);
        row.fdr_se = std::stod(fields[6]);
        row.fdr_ratio = std::stod(fields[7]);
        if (!fields[8].empty()) {
            row.has_power = true;
            row.power = std::stod(fields[8]);
            row.power_se = std::stod(fields[9]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Minimal SVG polyline chart; one series per (method, d).
void write_svg(const fs::path& path, const std::string& title,
               const std::map<std::string, std::vector<std::pair<double, double>>>& series) {
    const double width = 720, height = 480;
    const double ml = 60, mr = 170, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 0.0, ymax = -1e300;
    for (const auto& [name, pts] : series) {
        for (const auto& [x, y] : pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    ymax *= 1.05;

    const auto sx = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    const auto sy = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path.string() + "'");
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
        << "' height='" << height << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << width / 2 << "' y='22' text-anchor='middle' "
        << "font-family='sans-serif' font-size='15'>" << title << "</text>\n";
    // axes
    out << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr
        << "' y2='" << height - mb << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
        << height - mb << "' stroke='black'/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double xv = xmin + (xmax - xmin) * t / 5.0;
        const double yv = ymin + (ymax - ymin) * t / 5.0;
        char xbuf[32], ybuf[32];
        std::snprintf(xbuf, sizeof(xbuf), "%.3g", xv);
        std::snprintf(ybuf, sizeof(ybuf), "%.3g", yv);
        out << "<text x='" << sx(xv) << "' y='" << height - mb + 18
            << "' text-anchor='middle' font-family='sans-serif' font-size='11'>"
            << xbuf << "</text>\n";
        out << "<text x='" << ml - 8 << "' y='" << sy(yv) + 4
            << "' text-anchor='end' font-family='sans-serif' font-size='11'>" << ybuf
            << "</text>\n";
    }
    int idx = 0;
    for (const auto& [name, pts] : series) {
        const char* color = palette[idx % 8];
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (const auto& [x, y] : pts) out << sx(x) << ',' << sy(y) << ' ';
        out << "'/>\n";
        out << "<text x='" << width - mr + 10 << "' y='" << mt + 16 * idx + 12
            << "' font-family='sans-serif' font-size='12' fill='" << color << "'>"
            << name << "</text>\n";
        ++idx;
    }
    out << "</svg>\n";
}

int cmd_report(const ReportArgs& args) {
    Manifest manifest;
    manifest.subcommand = "report";
    manifest.add_input(args.curves_path);

    const std::vector<CurveRow> rows = read_curves(args.curves_path);
    const fs::path dir = prepare_out_dir(args.out);

    std::ofstream out(dir / "report_long.csv");
    if (!out) throw io_error("cannot write report_long.csv");
    out << "method,d,metric,alpha,value,se\n";
    for (const CurveRow& row : rows) {
        out << row.method << ',' << row.d << ",fdr," << format_double(row.alpha) << ','
            << format_double(row.fdr) << ',' << format_double(row.fdr_se) << '\n';
        out << row.method << ',' << row.d << ",fdr_ratio," << format_double(row.alpha)
            << ',' << format_double(row.fdr_ratio) << ','
            << format_double(row.alpha > 0 ? row.fdr_se / row.alpha : 0.0) << '\n';
        if (row.has_power)
            out << row.method << ',' << row.d << ",power," << format_double(row.alpha)
                << ',' << format_double(row.power) << ','
                << format_double(row.power_se) << '\n';
    }
    out.close();
    manifest.outputs.push_back("report_long.csv");

    if (args.svg) {
        std::map<std::string, std::vector<std::pair<double, double>>> power_series,
            ratio_series;
        for (const CurveRow& row : rows) {
            const std::string name = row.method + " (d=" + std::to_string(row.d) + ")";
            ratio_series[name].emplace_back(row.alpha, row.fdr_ratio);
            if (row.has_power) power_series[name].emplace_back(row.alpha, row.power);
        }
        if (!power_series.empty()) {
            write_svg(dir / "power.svg", "Power vs FDR threshold", power_series);
            manifest.outputs.push_back("power.svg");
        }
        write_svg(dir / "fdr_ratio.svg", "Empirical FDR / threshold", ratio_series);
        manifest.outputs.push_back("fdr_ratio.svg");
    }
    manifest.write(dir);
    std::cout << "report written to " << dir.string() << "\n";
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------
// main
// ---------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"multiple-knockoff FDR-controlled variable selection"};
    app.require_subcommand(1);

    ConstructArgs cons;
    auto* construct = app.add_subcommand("construct", "build knockoff copies for a design");
    construct->add_option("--x", cons.x_path, "design matrix CSV (rows = observations)")
        ->required();
    construct->add_option("--y", cons.y_path, "response CSV (needed for extension)");
    construct->add_option("--d", cons.d, "knockoff copies per feature")->required();
    construct->add_option("--batches", cons.batches, "number of batches");
    construct->add_option("--partition", cons.partition,
                          "partition method: clustered|uniform|single");
    construct->add_option("--seed", cons.seed, "master seed");
    auto* sigma_opt = construct->add_option("--sigma", cons.sigma, "known noise sigma");
    construct->add_option("--out", cons.out, "output directory")->required();

    ScoreArgs sco;
    auto* score = app.add_subcommand("score", "lasso entry scores on augmented design");
    score->add_option("--x", sco.x_path, "original design matrix CSV")->required();
    score->add_option("--y", sco.y_path, "response CSV (extended if applicable)")
        ->required();
    score->add_option("--knockoffs", sco.knockoffs_path, "knockoffs CSV from construct")
        ->required();
    score->add_option("--meta", sco.meta_path, "knockoff_meta.json from construct")
        ->required();
    score->add_option("--nlambda-multiplier", sco.nlambda_multiplier,
                      "grid count multiplier");
    score->add_option("--grid-ratio", sco.grid_ratio, "lambda_min / lambda_max");
    score->add_option("--seed", sco.seed, "master seed");
    score->add_option("--d-max", sco.d_max,
                      "experiment-wide max d for the grid count (default: this d)");
    score->add_option("--out", sco.out, "output directory")->required();

    SelectArgs sel;
    auto* select = app.add_subcommand("select", "competition-based discovery selection");
    select->add_option("--scores", sel.scores_path, "scores.csv from score")->required();
    select->add_option("--scores-meta", sel.meta_path, "scores_meta.json from score")
        ->required();
    select->add_option("--method", sel.method, "mirror|max|fixed:<c>,<lambda>");
    select->add_option("--alpha", sel.alpha, "FDR threshold")->required();
    select->add_option("--seed", sel.seed, "master seed");
    select->add_option("--out", sel.out, "output directory")->required();

    TuneArgs tun;
    auto* tune = app.add_subcommand("tune", "multi-knockoff-select on file data");
    tune->add_option("--x", tun.x_path, "design matrix CSV")->required();
    tune->add_option("--y", tun.y_path, "response CSV")->required();
    tune->add_option("--d-list", tun.d_list, "comma-separated d values");
    tune->add_option("--mb", tun.mb, "model-aware bootstrap samples");
    tune->add_option("--alpha", tun.alpha, "FDR threshold")->required();
    tune->add_option("--batches", tun.batches, "number of batches");
    tune->add_option("--partition", tun.partition,
                     "partition method: clustered|uniform|single");
    tune->add_option("--seed", tun.seed, "master seed");
    auto* tune_sigma = tune->add_option("--sigma", tun.sigma, "known noise sigma");
    tune->add_option("--nlambda-multiplier", tun.nlambda_multiplier,
                     "grid count multiplier");
    tune->add_option("--grid-ratio", tun.grid_ratio, "lambda_min / lambda_max");
    tune->add_option("--out", tun.out, "output directory")->required();

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Monte-Carlo FDR/power experiment");
    simulate->add_option("--config", sim.config_path, "experiment config JSON")
        ->required();
    simulate->add_option("--out", sim.out, "output directory")->required();
    auto* sim_seed = simulate->add_option("--seed", sim.seed, "override config seed");
    simulate->add_option("--threads", sim.threads, "worker threads (0 = all cores)");

    ReportArgs rep;
    auto* report = app.add_subcommand("report", "plot-ready data from curves.csv");
    report->add_option("--curves", rep.curves_path, "curves.csv from simulate")
        ->required();
    report->add_option("--out", rep.out, "output directory")->required();
    report->add_flag("--svg", rep.svg, "also write SVG charts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        cons.has_sigma = sigma_opt->count() > 0;
        tun.has_sigma = tune_sigma->count() > 0;
        sim.has_seed = sim_seed->count() > 0;
        if (construct->parsed()) return cmd_construct(cons);
        if (score->parsed()) return cmd_score(sco);
        if (select->parsed()) return cmd_select(sel);
        if (tune->parsed()) return cmd_tune(tun);
        if (simulate->parsed()) return cmd_simulate(sim);
        if (report->parsed()) return cmd_report(rep);
    } catch (const mknock::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mknock::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const mknock::solver_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const mknock::numerical_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
