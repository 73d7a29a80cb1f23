#ifndef MKNOCK_SIMULATE_HPP
#define MKNOCK_SIMULATE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mknock/competition.hpp"
#include "mknock/knockoffs.hpp"
#include "mknock/lasso.hpp"
#include "mknock/resampling.hpp"

namespace mknock {

struct CovarianceSpec {
    enum class Type { toeplitz, equicorrelated };
    Type type = Type::toeplitz;
    double rho = 0.0;
};

MatrixXd covariance_matrix(const CovarianceSpec& spec, int p);

struct MethodSpec {
    enum class Kind {
        knockoff_plus,
        mirror,
        max,
        fixed,
        multi_knockoff,
        multi_knockoff_select,
    };
    Kind kind = Kind::mirror;
    // Only for Kind::fixed; validated against each d at run time.
    double c = 0.5;
    double lambda = 0.5;

    std::string name() const;
    bool needs_resampling() const {
        return kind == Kind::multi_knockoff || kind == Kind::multi_knockoff_select;
    }
};

MethodSpec method_from_string(const std::string& s);

struct ExperimentConfig {
    int n = 0;
    int p = 0;
    int k = 0;
    double amplitude = 0.0;
    CovarianceSpec covariance;
    std::vector<int> d_list = {1};
    int batches = 1;
    PartitionMethod partition = PartitionMethod::single;
    std::vector<MethodSpec> methods;
    std::vector<double> alpha_grid;  // Phi
    int replicates = 100;
    int m_b = 32;
    std::uint64_t seed = 1;
    int nlambda_multiplier = 5;
    double grid_ratio = 1e-3;
    std::optional<double> sigma_known;
    int threads = 0;  // 0 = hardware concurrency

    int d_max() const;
};

// The default threshold grid Phi: 0.001..0.009 step 0.001,
// 0.01..0.29 step 0.01, 0.30..0.95 step 0.05.
std::vector<double> default_alpha_grid();

void validate_config(const ExperimentConfig& cfg);

struct Truth {
    std::vector<int> true_features;  // sorted
    VectorXd beta;

    bool is_null(int feature) const;
};

// Rows of X i.i.d. N(0, covariance), columns normalized afterwards,
// K coefficients set to +-amplitude, y = X beta + N(0, I) noise.
std::pair<DesignData, Truth> generate_dataset(const ExperimentConfig& cfg, Rng& rng);

// One d's pipeline stage: extension (when n < (d+1)p), construction and
// real-response scoring. Deterministic in (seed, replicate, d).
struct PipelineStage {
    DesignData extended;
    KnockoffSet kset;
    ScoreTable scores;
};

PipelineStage pipeline_stage(const DesignData& data, const BatchPartition& partition,
                             int d, int d_max, int nlambda_multiplier,
                             double grid_ratio, std::optional<double> sigma_known,
                             std::uint64_t seed, int replicate);

// Everything one replicate shares across methods: dataset, partition,
// per-d extended designs, knockoff sets and real-response score tables.
struct ReplicateData {
    DesignData data;
    Truth truth;
    BatchPartition partition;
    std::map<int, DesignData> extended;   // keyed by d
    std::map<int, KnockoffSet> ksets;
    std::map<int, ScoreTable> scores;
};

// Deterministic in (cfg.seed, replicate). d_values defaults to the d
// values required by cfg.methods.
ReplicateData prepare_replicate(const ExperimentConfig& cfg, int replicate,
                                const std::vector<int>& d_values = {});

struct ExperimentRecord {
    std::string method;
    int d = 0;
    int replicate = 0;
    double alpha = 0.0;
    int discoveries = 0;
    double fdp = 0.0;
    std::optional<double> power;  // absent when k == 0
    std::optional<TuningParams> chosen;
    std::optional<int> chosen_d;
    bool failed = false;
    std::string stage;  // failure stage tag
};

std::vector<ExperimentRecord> run_replicate(const ExperimentConfig& cfg, int replicate);

// Runs all replicates on a worker pool; records ordered by
// (replicate, method, alpha) regardless of scheduling.
std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& cfg);

struct CurvePoint {
    std::string method;
    int d = 0;
    double alpha = 0.0;
    int n_used = 0;
    int n_failed = 0;
    double fdr = 0.0;
    double fdr_se = 0.0;
    std::optional<double> power;
    std::optional<double> power_se;
};

std::vector<CurvePoint> aggregate(const std::vector<ExperimentRecord>& records);

struct DiffPoint {
    std::string method_a;
    std::string method_b;
    int d_a = 0;
    int d_b = 0;
    double alpha = 0.0;
    int n_used = 0;
    double power_diff = 0.0;
    double power_diff_se = 0.0;
};

// Paired power differences between every pair of method curves.
std::vector<DiffPoint> power_differences(const std::vector<ExperimentRecord>& records);

struct NullWinCurve {
    VectorXd fraction;  // pooled original-win fraction among top-i0 nulls
    VectorXd lo;        // 0.025 normal-approximation quantile
    VectorXd hi;        // 0.975 quantile
    double c = 0.5;
    int replicates = 0;
};

// Pooled original-win diagnostic among true nulls at c = lambda.
// One score table + truth per replicate; seed drives the per-replicate
// competition randomness.
NullWinCurve null_win_diagnostic(const std::vector<ScoreTable>& tables,
                                 const std::vector<Truth>& truths,
                                 const TuningParams& params, std::uint64_t seed);

void write_records_csv(const std::string& path,
                       const std::vector<ExperimentRecord>& records);
void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& curves);
void write_diff_csv(const std::string& path, const std::vector<DiffPoint>& diffs);

// Simple worker pool; fn(i) runs once for each i in [0, n). Results must
// be written to disjoint slots for determinism.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace mknock

#endif
