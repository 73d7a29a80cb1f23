#include "mknock/simulate.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "mknock/common.hpp"
#include "mknock/csv.hpp"

namespace mknock {

// -------------------------------------------------------------------------
// Configuration
// -------------------------------------------------------------------------

MatrixXd covariance_matrix(const CovarianceSpec& spec, int p) {
    if (!(spec.rho >= 0.0 && spec.rho < 1.0))
        throw config_error("rho must be in [0, 1), got " + std::to_string(spec.rho));
    MatrixXd cov(p, p);
    if (spec.type == CovarianceSpec::Type::toeplitz) {
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j)
                cov(i, j) = std::pow(spec.rho, std::abs(i - j));
    } else {
        cov.setConstant(spec.rho);
        cov.diagonal().setOnes();
    }
    return cov;
}

std::string MethodSpec::name() const {
    switch (kind) {
        case Kind::knockoff_plus: return "knockoff_plus";
        case Kind::mirror: return "mirror";
        case Kind::max: return "max";
        case Kind::multi_knockoff: return "multi_knockoff";
        case Kind::multi_knockoff_select: return "multi_knockoff_select";
        case Kind::fixed: {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "fixed:%g,%g", c, lambda);
            return buf;
        }
    }
    return "?";
}

MethodSpec method_from_string(const std::string& s) {
    MethodSpec m;
    if (s == "knockoff_plus") {
        m.kind = MethodSpec::Kind::knockoff_plus;
    } else if (s == "mirror") {
        m.kind = MethodSpec::Kind::mirror;
    } else if (s == "max") {
        m.kind = MethodSpec::Kind::max;
    } else if (s == "multi_knockoff") {
        m.kind = MethodSpec::Kind::multi_knockoff;
    } else if (s == "multi_knockoff_select") {
        m.kind = MethodSpec::Kind::multi_knockoff_select;
    } else if (s.rfind("fixed:", 0) == 0) {
        m.kind = MethodSpec::Kind::fixed;
        const std::string rest = s.substr(6);
        const auto comma = rest.find(',');
        if (comma == std::string::npos)
            throw config_error("fixed method needs 'fixed:<c>,<lambda>', got '" + s + "'");
        try {
            m.c = std::stod(rest.substr(0, comma));
            m.lambda = std::stod(rest.substr(comma + 1));
        } catch (const std::exception&) {
            throw config_error("cannot parse '" + s + "' as fixed:<c>,<lambda>");
        }
    } else {
        throw config_error("unknown method '" + s + "'");
    }
    return m;
}

int ExperimentConfig::d_max() const {
    int m = 1;
    for (int d : d_list) m = std::max(m, d);
    return m;
}

std::vector<double> default_alpha_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 9; ++i) grid.push_back(i / 1000.0);
    for (int i = 1; i <= 29; ++i) grid.push_back(i / 100.0);
    for (int i = 6; i <= 19; ++i) grid.push_back(i / 20.0);
    return grid;
}

namespace {

// Resolves the fixed method's (c, lambda) to integer grid indices for d;
// throws config_error when it is off the grid.
TuningParams fixed_params(const MethodSpec& method, int d) {
    const int d1 = d + 1;
    const double ic_real = method.c * d1;
    const double il_real = method.lambda * d1;
    const int i_c = static_cast<int>(std::lround(ic_real));
    const int i_lambda = static_cast<int>(std::lround(il_real));
    if (std::abs(ic_real - i_c) > 1e-9 || std::abs(il_real - i_lambda) > 1e-9)
        throw config_error("fixed (c, lambda) = (" + std::to_string(method.c) + ", " +
                           std::to_string(method.lambda) +
                           ") is not on the rank grid {i/" + std::to_string(d1) + "}");
    try {
        return make_params(d, i_c, i_lambda);
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("invalid fixed parameters: ") + e.what());
    }
}

TuningParams method_params(const MethodSpec& method, int d) {
    switch (method.kind) {
        case MethodSpec::Kind::mirror: return mirror_params(d);
        case MethodSpec::Kind::max: return max_params(d);
        case MethodSpec::Kind::fixed: return fixed_params(method, d);
        default:
            throw std::invalid_argument("method has no fixed parameters");
    }
}

}  // namespace

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.p < 1) throw config_error("p must be >= 1");
    if (cfg.n <= cfg.p)
        throw config_error("n must exceed p, got n=" + std::to_string(cfg.n) +
                           ", p=" + std::to_string(cfg.p));
    if (cfg.k < 0 || cfg.k > cfg.p)
        throw config_error("k must be in [0, p], got k=" + std::to_string(cfg.k));
    if (cfg.k > 0 && !(cfg.amplitude > 0.0))
        throw config_error("amplitude must be > 0 when k > 0");
    if (!(cfg.covariance.rho >= 0.0 && cfg.covariance.rho < 1.0))
        throw config_error("rho must be in [0, 1)");
    if (cfg.d_list.empty()) throw config_error("d_list must be non-empty");
    std::set<int> seen;
    for (int d : cfg.d_list) {
        if (d < 1) throw config_error("every d must be >= 1");
        if (!seen.insert(d).second) throw config_error("duplicate d in d_list");
    }
    if (cfg.batches < 1 || cfg.batches > cfg.p)
        throw config_error("batches must be in [1, p]");
    if (cfg.partition == PartitionMethod::single && cfg.batches != 1)
        throw config_error("partition 'single' requires batches = 1");
    if (cfg.methods.empty()) throw config_error("methods must be non-empty");
    if (cfg.alpha_grid.empty()) throw config_error("alpha grid must be non-empty");
    double prev = 0.0;
    for (double a : cfg.alpha_grid) {
        if (!(a > prev && a < 1.0))
            throw config_error("alpha grid must be strictly increasing in (0, 1)");
        prev = a;
    }
    if (cfg.replicates < 1) throw config_error("replicates must be >= 1");
    if (cfg.m_b < 1) throw config_error("m_b must be >= 1");
    if (cfg.nlambda_multiplier < 1) throw config_error("nlambda multiplier must be >= 1");
    if (!(cfg.grid_ratio > 0.0 && cfg.grid_ratio < 1.0))
        throw config_error("grid ratio must be in (0, 1)");
    if (cfg.sigma_known && !(*cfg.sigma_known > 0.0))
        throw config_error("sigma must be > 0");

    // Fixed-parameter methods must sit on every d's rank grid.
    for (const MethodSpec& method : cfg.methods) {
        if (method.kind == MethodSpec::Kind::mirror ||
            method.kind == MethodSpec::Kind::max ||
            method.kind == MethodSpec::Kind::fixed) {
            for (int d : cfg.d_list) {
                try {
                    (void)method_params(method, d);
                } catch (const std::invalid_argument& e) {
                    throw config_error("method " + method.name() + " invalid at d=" +
                                       std::to_string(d) + ": " + e.what());
                }
            }
        }
    }
}

// -------------------------------------------------------------------------
// Data generation
// -------------------------------------------------------------------------

bool Truth::is_null(int feature) const {
    return !std::binary_search(true_features.begin(), true_features.end(), feature);
}

std::pair<DesignData, Truth> generate_dataset(const ExperimentConfig& cfg, Rng& rng) {
    const int n = cfg.n;
    const int p = cfg.p;
    const MatrixXd cov = covariance_matrix(cfg.covariance, p);
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw config_error("covariance matrix is not positive definite");
    const MatrixXd chol_t = MatrixXd(llt.matrixL()).transpose();

    MatrixXd z(n, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) z(i, j) = rng.normal();
    MatrixXd x = z * chol_t;  // rows ~ N(0, cov)

    DesignData data;
    data.column_norms = x.colwise().norm();
    for (int j = 0; j < p; ++j) {
        if (data.column_norms(j) <= 0)
            throw numerical_error("sampled column has zero norm");
        x.col(j) /= data.column_norms(j);
    }

    Truth truth;
    truth.beta = VectorXd::Zero(p);
    if (cfg.k > 0) {
        std::vector<int> idx = rng.permutation(p);
        truth.true_features.assign(idx.begin(), idx.begin() + cfg.k);
        std::sort(truth.true_features.begin(), truth.true_features.end());
        for (int f : truth.true_features)
            truth.beta(f) = rng.bernoulli(0.5) ? cfg.amplitude : -cfg.amplitude;
    }

    VectorXd eps(n);
    for (int i = 0; i < n; ++i) eps(i) = rng.normal();

    data.y = x * truth.beta + eps;
    data.x = std::move(x);
    data.n_original = n;
    return {std::move(data), std::move(truth)};
}

// -------------------------------------------------------------------------
// Replicate orchestration
// -------------------------------------------------------------------------

namespace {

std::vector<int> needed_d_values(const ExperimentConfig& cfg) {
    std::set<int> ds;
    for (const MethodSpec& method : cfg.methods) {
        if (method.kind == MethodSpec::Kind::knockoff_plus)
            ds.insert(1);
        else
            ds.insert(cfg.d_list.begin(), cfg.d_list.end());
    }
    return {ds.begin(), ds.end()};
}

BatchPartition build_partition(const ExperimentConfig& cfg, const DesignData& data,
                               int replicate) {
    switch (cfg.partition) {
        case PartitionMethod::single:
            return single_partition(cfg.p);
        case PartitionMethod::clustered:
            return cluster_batches(data.x, cfg.batches);
        case PartitionMethod::uniform: {
            Rng rng(derive_seed(cfg.seed, stage::partition,
                                static_cast<std::uint64_t>(replicate)));
            return uniform_partition(cfg.p, cfg.batches, rng);
        }
    }
    return single_partition(cfg.p);
}

}  // namespace

PipelineStage pipeline_stage(const DesignData& data, const BatchPartition& partition,
                             int d, int d_max, int nlambda_multiplier,
                             double grid_ratio, std::optional<double> sigma_known,
                             std::uint64_t seed, int replicate) {
    PipelineStage stage;
    const auto rep = static_cast<std::uint64_t>(replicate);
    const auto du = static_cast<std::uint64_t>(d);

    if (data.n() < static_cast<Eigen::Index>(d + 1) * data.p()) {
        const double sigma =
            sigma_known ? *sigma_known : std::sqrt(estimate_sigma_sq(data));
        Rng rng(derive_seed(seed, stage::extend, rep, du));
        stage.extended = extend_design(data, d, sigma, rng);
        Rng crng(derive_seed(seed, stage::construct, rep, du));
        stage.kset = construct_knockoffs(stage.extended, d, partition, crng);
        stage.kset.sigma_hat = sigma;
    } else {
        stage.extended = data;
        Rng crng(derive_seed(seed, stage::construct, rep, du));
        stage.kset = construct_knockoffs(stage.extended, d, partition, crng);
    }

    const LambdaGrid grid = make_grid_for(stage.extended, stage.kset,
                                          stage.extended.y, nlambda_multiplier,
                                          d_max, grid_ratio);
    Rng perm_rng(derive_seed(seed, stage::permute, rep, du));
    stage.scores = score_design(stage.extended, stage.kset, stage.extended.y, grid,
                                derive_seed(seed, stage::score, rep, du), perm_rng);
    return stage;
}

ReplicateData prepare_replicate(const ExperimentConfig& cfg, int replicate,
                                const std::vector<int>& d_values) {
    validate_config(cfg);
    ReplicateData rd;
    Rng data_rng(derive_seed(cfg.seed, stage::data, static_cast<std::uint64_t>(replicate)));
    std::tie(rd.data, rd.truth) = generate_dataset(cfg, data_rng);
    rd.partition = build_partition(cfg, rd.data, replicate);

    std::vector<int> ds = d_values.empty() ? needed_d_values(cfg) : d_values;
    for (int d : ds) {
        PipelineStage stage =
            pipeline_stage(rd.data, rd.partition, d, cfg.d_max(),
                           cfg.nlambda_multiplier, cfg.grid_ratio, cfg.sigma_known,
                           cfg.seed, replicate);
        rd.extended[d] = std::move(stage.extended);
        rd.ksets[d] = std::move(stage.kset);
        rd.scores[d] = std::move(stage.scores);
    }
    return rd;
}

namespace {

ExperimentRecord base_record(const MethodSpec& method, int d, int replicate,
                             double alpha) {
    ExperimentRecord rec;
    rec.method = method.name();
    rec.d = d;
    rec.replicate = replicate;
    rec.alpha = alpha;
    return rec;
}

void fill_outcome(ExperimentRecord* rec, const std::vector<int>& discoveries,
                  const Truth& truth, int k) {
    rec->discoveries = static_cast<int>(discoveries.size());
    long false_hits = 0;
    for (int f : discoveries)
        if (truth.is_null(f)) ++false_hits;
    rec->fdp = static_cast<double>(false_hits) /
               std::max<double>(1.0, static_cast<double>(discoveries.size()));
    if (k > 0)
        rec->power = static_cast<double>(static_cast<long>(discoveries.size()) -
                                         false_hits) /
                     static_cast<double>(k);
}

void fail_records(std::vector<ExperimentRecord>* out, const MethodSpec& method, int d,
                  int replicate, const std::vector<double>& alphas,
                  const std::string& stage_tag) {
    for (double alpha : alphas) {
        ExperimentRecord rec = base_record(method, d, replicate, alpha);
        rec.failed = true;
        rec.stage = stage_tag;
        out->push_back(rec);
    }
}

}  // namespace

std::vector<ExperimentRecord> run_replicate(const ExperimentConfig& cfg, int replicate) {
    validate_config(cfg);
    std::vector<ExperimentRecord> records;
    const auto rep = static_cast<std::uint64_t>(replicate);

    Rng data_rng(derive_seed(cfg.seed, stage::data, rep));
    DesignData data;
    Truth truth;
    std::tie(data, truth) = generate_dataset(cfg, data_rng);
    const BatchPartition partition = build_partition(cfg, data, replicate);

    // Per-d pipeline stages, isolated so one d's failure only takes down
    // the methods that need it.
    std::map<int, PipelineStage> stages;
    std::map<int, std::string> stage_errors;
    for (int d : needed_d_values(cfg)) {
        try {
            stages[d] = pipeline_stage(data, partition, d, cfg.d_max(),
                                       cfg.nlambda_multiplier, cfg.grid_ratio,
                                       cfg.sigma_known, cfg.seed, replicate);
        } catch (const solver_error& e) {
            stage_errors[d] = std::string("score: ") + e.what();
        } catch (const numerical_error& e) {
            stage_errors[d] = std::string("construct: ") + e.what();
        } catch (const std::exception& e) {
            stage_errors[d] = std::string("prepare: ") + e.what();
        }
    }

    bool resampling_needed = false;
    for (const MethodSpec& method : cfg.methods)
        if (method.needs_resampling()) resampling_needed = true;

    // Shared resampling state (conjecture at the largest d, one bootstrap
    // draw reused by every tuned method).
    std::vector<BootstrapSample> samples;
    std::string resample_error;
    if (resampling_needed) {
        try {
            const int dmax = cfg.d_max();
            bool all_present = true;
            for (int d : cfg.d_list)
                if (!stages.count(d)) all_present = false;
            if (!all_present) throw numerical_error("knockoff stage failed");

            const double sigma_hat = cfg.sigma_known
                                         ? *cfg.sigma_known
                                         : std::sqrt(estimate_sigma_sq(data));
            const double lambda0 = estimate_lambda0(stages.at(dmax).scores);
            Rng conj_rng(derive_seed(cfg.seed, stage::conjecture, rep));
            const ConjectureModel conjecture =
                build_conjecture(stages.at(dmax).scores, lambda0, conj_rng);

            BootstrapInputs inputs;
            inputs.original = &data;
            for (int d : cfg.d_list) {
                inputs.designs[d] = &stages.at(d).extended;
                inputs.knockoffs[d] = &stages.at(d).kset;
            }
            inputs.nlambda_multiplier = cfg.nlambda_multiplier;
            inputs.d_max = dmax;
            inputs.grid_ratio = cfg.grid_ratio;

            Rng boot_rng(derive_seed(cfg.seed, stage::bootstrap, rep));
            samples = draw_bootstrap(inputs, conjecture, cfg.d_list, sigma_hat,
                                     cfg.m_b, boot_rng);
        } catch (const std::exception& e) {
            resample_error = std::string("resample: ") + e.what();
        }
    }

    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const MethodSpec& method = cfg.methods[mi];
        switch (method.kind) {
            case MethodSpec::Kind::knockoff_plus: {
                if (!stages.count(1)) {
                    fail_records(&records, method, 1, replicate, cfg.alpha_grid,
                                 stage_errors[1]);
                    break;
                }
                const ScoreTable& table = stages.at(1).scores;
                const VectorXd z = table.scores.col(0);
                const VectorXd zt = table.scores.col(1);
                for (double alpha : cfg.alpha_grid) {
                    ExperimentRecord rec = base_record(method, 1, replicate, alpha);
                    fill_outcome(&rec,
                                 knockoff_plus_reference(z, zt, alpha, table.tie_seed),
                                 truth, cfg.k);
                    records.push_back(std::move(rec));
                }
                break;
            }
            case MethodSpec::Kind::mirror:
            case MethodSpec::Kind::max:
            case MethodSpec::Kind::fixed: {
                for (int d : cfg.d_list) {
                    if (!stages.count(d)) {
                        fail_records(&records, method, d, replicate, cfg.alpha_grid,
                                     stage_errors[d]);
                        continue;
                    }
                    const TuningParams params = method_params(method, d);
                    Rng rng(derive_seed(cfg.seed, stage::select, rep,
                                        mix64(static_cast<std::uint64_t>(d) * 1000 + mi)));
                    const CompetitionOutcome outcome =
                        compete(stages.at(d).scores, params, rng);
                    for (double alpha : cfg.alpha_grid) {
                        ExperimentRecord rec = base_record(method, d, replicate, alpha);
                        rec.chosen = params;
                        fill_outcome(&rec, select_discoveries(outcome, alpha).discoveries,
                                     truth, cfg.k);
                        records.push_back(std::move(rec));
                    }
                }
                break;
            }
            case MethodSpec::Kind::multi_knockoff: {
                for (int d : cfg.d_list) {
                    if (!resample_error.empty() || !stages.count(d)) {
                        fail_records(&records, method, d, replicate, cfg.alpha_grid,
                                     resample_error.empty() ? stage_errors[d]
                                                            : resample_error);
                        continue;
                    }
                    const std::uint64_t seed =
                        derive_seed(cfg.seed, stage::tune, rep, mi);
                    TunedSelector selector(stages.at(d).scores, samples, d, seed);
                    for (double alpha : cfg.alpha_grid) {
                        const TunedResult run = selector.at(alpha);
                        ExperimentRecord rec = base_record(method, d, replicate, alpha);
                        rec.chosen = run.params;
                        fill_outcome(&rec, run.discoveries, truth, cfg.k);
                        records.push_back(std::move(rec));
                    }
                }
                break;
            }
            case MethodSpec::Kind::multi_knockoff_select: {
                const int d_tag = 0;  // aggregated across d_list
                if (!resample_error.empty() ||
                    static_cast<int>(stages.size()) <
                        static_cast<int>(needed_d_values(cfg).size())) {
                    std::string why = resample_error;
                    if (why.empty())
                        for (auto& kv : stage_errors)
                            if (why.empty()) why = kv.second;
                    fail_records(&records, method, d_tag, replicate, cfg.alpha_grid, why);
                    break;
                }
                const std::uint64_t seed = derive_seed(cfg.seed, stage::tune, rep, mi);
                std::vector<int> ds = cfg.d_list;
                std::sort(ds.begin(), ds.end());
                std::map<int, TunedSelector> selectors;
                for (int d : ds)
                    selectors.emplace(d, TunedSelector(stages.at(d).scores, samples,
                                                       d, seed));
                for (double alpha : cfg.alpha_grid) {
                    ExperimentRecord rec = base_record(method, d_tag, replicate, alpha);
                    TunedResult best;
                    bool have = false;
                    int chosen_d = 0;
                    for (int d : ds) {
                        TunedResult run = selectors.at(d).at(alpha);
                        if (!have || run.objective > best.objective) {
                            best = std::move(run);
                            chosen_d = d;
                            have = true;
                        }
                    }
                    rec.chosen = best.params;
                    rec.chosen_d = chosen_d;
                    fill_outcome(&rec, best.discoveries, truth, cfg.k);
                    records.push_back(std::move(rec));
                }
                break;
            }
        }
    }
    return records;
}

// -------------------------------------------------------------------------
// Experiment driver
// -------------------------------------------------------------------------

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads < 1) {
        const unsigned hc = std::thread::hardware_concurrency();
        threads = hc > 0 ? static_cast<int>(hc) : 1;
    }
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }

    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    std::vector<std::vector<ExperimentRecord>> slots(
        static_cast<std::size_t>(cfg.replicates));
    parallel_for(cfg.replicates, cfg.threads,
                 [&](int rep) { slots[static_cast<std::size_t>(rep)] = run_replicate(cfg, rep); });

    std::vector<ExperimentRecord> records;
    for (auto& slot : slots)
        for (auto& rec : slot) records.push_back(std::move(rec));
    return records;
}

// -------------------------------------------------------------------------
// Aggregation
// -------------------------------------------------------------------------

namespace {

struct Moments {
    int n = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double v) {
        ++n;
        sum += v;
        sum_sq += v * v;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = std::max(0.0, (sum_sq - n * m * m) / (n - 1));
        return std::sqrt(var / n);
    }
};

using GroupKey = std::tuple<std::string, int, double>;

}  // namespace

std::vector<CurvePoint> aggregate(const std::vector<ExperimentRecord>& records) {
    std::map<GroupKey, std::pair<Moments, Moments>> groups;  // fdp, power
    std::map<GroupKey, int> failures;
    for (const ExperimentRecord& rec : records) {
        const GroupKey key{rec.method, rec.d, rec.alpha};
        if (rec.failed) {
            ++failures[key];
            groups[key];  // ensure the group exists
            continue;
        }
        auto& g = groups[key];
        g.first.add(rec.fdp);
        if (rec.power) g.second.add(*rec.power);
    }

    std::vector<CurvePoint> out;
    for (const auto& [key, g] : groups) {
        CurvePoint pt;
        pt.method = std::get<0>(key);
        pt.d = std::get<1>(key);
        pt.alpha = std::get<2>(key);
        pt.n_used = g.first.n;
        const auto fit = failures.find(key);
        pt.n_failed = fit == failures.end() ? 0 : fit->second;
        pt.fdr = g.first.mean();
        pt.fdr_se = g.first.se();
        if (g.second.n > 0) {
            pt.power = g.second.mean();
            pt.power_se = g.second.se();
        }
        out.push_back(std::move(pt));
    }
    return out;
}

std::vector<DiffPoint> power_differences(const std::vector<ExperimentRecord>& records) {
    // (method, d) curve id -> alpha -> replicate -> power
    using CurveId = std::pair<std::string, int>;
    std::map<CurveId, std::map<double, std::map<int, double>>> curves;
    for (const ExperimentRecord& rec : records) {
        if (rec.failed || !rec.power) continue;
        curves[{rec.method, rec.d}][rec.alpha][rec.replicate] = *rec.power;
    }

    std::vector<DiffPoint> out;
    for (auto a = curves.begin(); a != curves.end(); ++a) {
        for (auto b = std::next(a); b != curves.end(); ++b) {
            for (const auto& [alpha, reps_a] : a->second) {
                const auto bt = b->second.find(alpha);
                if (bt == b->second.end()) continue;
                Moments diff;
                for (const auto& [rep, pa] : reps_a) {
                    const auto pb = bt->second.find(rep);
                    if (pb != bt->second.end()) diff.add(pa - pb->second);
                }
                if (diff.n == 0) continue;
                DiffPoint pt;
                pt.method_a = a->first.first;
                pt.d_a = a->first.second;
                pt.method_b = b->first.first;
                pt.d_b = b->first.second;
                pt.alpha = alpha;
                pt.n_used = diff.n;
                pt.power_diff = diff.mean();
                pt.power_diff_se = diff.se();
                out.push_back(std::move(pt));
            }
        }
    }
    return out;
}

NullWinCurve null_win_diagnostic(const std::vector<ScoreTable>& tables,
                                 const std::vector<Truth>& truths,
                                 const TuningParams& params, std::uint64_t seed) {
    if (tables.size() != truths.size())
        throw std::invalid_argument("one truth per score table required");
    if (tables.empty()) throw std::invalid_argument("no replicates");

    std::size_t max_i0 = SIZE_MAX;
    for (std::size_t r = 0; r < tables.size(); ++r) {
        const std::size_t nulls = static_cast<std::size_t>(tables[r].p()) -
                                  truths[r].true_features.size();
        max_i0 = std::min(max_i0, nulls);
    }
    if (max_i0 == 0) throw std::invalid_argument("no null features");

    std::vector<long> wins(max_i0, 0);
    for (std::size_t r = 0; r < tables.size(); ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        const CompetitionOutcome outcome = compete(tables[r], params, rng);
        // cumulative original wins over the null features in w-order
        std::size_t null_rank = 0;
        long acc = 0;
        for (int f : outcome.order) {
            if (!truths[r].is_null(f)) continue;
            if (outcome.labels[static_cast<std::size_t>(f)] == 1) ++acc;
            wins[null_rank] += acc;
            ++null_rank;
            if (null_rank >= max_i0) break;
        }
    }

    NullWinCurve curve;
    curve.c = params.c();
    curve.replicates = static_cast<int>(tables.size());
    curve.fraction.resize(static_cast<Eigen::Index>(max_i0));
    curve.lo.resize(static_cast<Eigen::Index>(max_i0));
    curve.hi.resize(static_cast<Eigen::Index>(max_i0));
    const double c = params.c();
    for (std::size_t i = 0; i < max_i0; ++i) {
        const double denom = static_cast<double>(tables.size()) *
                             static_cast<double>(i + 1);
        curve.fraction(static_cast<Eigen::Index>(i)) =
            static_cast<double>(wins[i]) / denom;
        const double half = 1.959963984540054 * std::sqrt(c * (1.0 - c) / denom);
        curve.lo(static_cast<Eigen::Index>(i)) = c - half;
        curve.hi(static_cast<Eigen::Index>(i)) = c + half;
    }
    return curve;
}

// -------------------------------------------------------------------------
// CSV output
// -------------------------------------------------------------------------

namespace {

std::string opt_str(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

}  // namespace

void write_records_csv(const std::string& path,
                       const std::vector<ExperimentRecord>& records) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "method,d,replicate,alpha,discoveries,fdp,power,chosen_d,chosen_i_c,"
           "chosen_i_lambda,failed,stage\n";
    for (const ExperimentRecord& rec : records) {
        out << rec.method << ',' << rec.d << ',' << rec.replicate << ','
            << format_double(rec.alpha) << ',' << rec.discoveries << ','
            << format_double(rec.fdp) << ',' << opt_str(rec.power) << ',';
        if (rec.chosen_d) out << *rec.chosen_d;
        out << ',';
        if (rec.chosen) out << rec.chosen->i_c;
        out << ',';
        if (rec.chosen) out << rec.chosen->i_lambda;
        out << ',' << (rec.failed ? 1 : 0) << ',' << rec.stage << '\n';
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& curves) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "method,d,alpha,n_used,n_failed,fdr,fdr_se,fdr_ratio,power,power_se\n";
    for (const CurvePoint& pt : curves) {
        out << pt.method << ',' << pt.d << ',' << format_double(pt.alpha) << ','
            << pt.n_used << ',' << pt.n_failed << ',' << format_double(pt.fdr) << ','
            << format_double(pt.fdr_se) << ',' << format_double(pt.fdr / pt.alpha)
            << ',' << opt_str(pt.power) << ',' << opt_str(pt.power_se) << '\n';
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

void write_diff_csv(const std::string& path, const std::vector<DiffPoint>& diffs) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "method_a,d_a,method_b,d_b,alpha,n_used,power_diff,power_diff_se\n";
    for (const DiffPoint& pt : diffs) {
        out << pt.method_a << ',' << pt.d_a << ',' << pt.method_b << ',' << pt.d_b
            << ',' << format_double(pt.alpha) << ',' << pt.n_used << ','
            << format_double(pt.power_diff) << ',' << format_double(pt.power_diff_se)
            << '\n';
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

}  // namespace mknock
