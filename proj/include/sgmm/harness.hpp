#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgmm/estimator.hpp"

namespace sgmm {

// ---- methods -------------------------------------------------------------------

enum class MethodKind {
    standard,      // the experiment's baseline (see run_method)
    identity,      // W = I on every moment
    gmm_full,
    gmm_diagonal,
    gmm_subset,    // two-step full weighting on the named groups
    phd_y,
    phd_residual,
    robustified,   // W = I on the sign-robust group
    augmented,     // kappa * M + V W V^T after the two-step weighting
};

struct MethodSpec {
    std::string tag;
    MethodKind kind = MethodKind::gmm_full;
    std::vector<std::string> groups;  // gmm_subset
    double kappa = 0.0;               // augmented
};

/// Accepts standard, identity, gmm-full, gmm-diagonal, gmm-full-2, gmm-full-3,
/// gmm-subset:<g1>+<g2>+..., phd-y, phd-residual, robustified, augmented:<kappa>.
MethodSpec parse_method(const std::string& tag);

/// Everything a method needs for one dataset.
struct MethodInput {
    const Dataset* data = nullptr;
    const MomentMatrix* moments = nullptr;  // materialized full set
    Index r = 1;
    bool auto_rank = false;
    double delta = 0.01;
    double eta_quantile = 0.95;
    int iterations = 1;
    bool standard_is_pca = false;                // centered sample covariance
    std::vector<std::string> standard_groups;    // else W = I on these groups
};

struct MethodOutput {
    SubspaceEstimate estimate;
    std::optional<RankEstimate> rank;
};

MethodOutput run_method(const MethodSpec& method, const MethodInput& input);

/// Top-r eigenvectors of the centered sample covariance (divisor n).
SubspaceEstimate pca_subspace(const Dataset& data, Index r);

// ---- experiments -----------------------------------------------------------------

enum class ExperimentKind { example1, example2, example3, dimest, custom };

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

struct Sweep {
    std::string parameter;  // mu | n | r | variant
    std::vector<double> values;  // variant coded A=0, B=1, C=2
};

struct ExperimentConfig {
    std::string name = "example1";
    Index n = 500;
    Index p = 10;
    Index r = 2;
    Index K = 2;
    double mu = 0.0;
    double sigma = 2.0;
    IndexVariant variant = IndexVariant::A;
    double beta_radius = 4.0;
    double noise_scale = 0.5;
    std::optional<Index> n_per_r;  // dimension study: n = n_per_r * r
    std::vector<std::string> methods;
    int replicates = 100;
    std::optional<std::uint64_t> seed;
    double delta = 0.01;
    double eta_quantile = 0.95;
    int iterations = 1;
    std::optional<Sweep> sweep;
    bool record_runtime = false;
    // custom experiments
    std::string model = "factor";  // factor | mixed_linear | mixed_logistic | index
    nlohmann::json moments;        // builder list
};

/// Defaults of the named simulation designs (n, p, r, methods, sweep).
ExperimentConfig default_config(const std::string& name);

/// Throws ConfigError on unknown methods, names or parameters.
void validate(const ExperimentConfig& config);

ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& config);

struct ResultRow {
    Index grid_index = 0;
    std::string grid_label;
    double grid_value = 0.0;
    std::string method;
    int replicate = 0;
    Index true_r = 0;
    double distance = 0.0;
    double distance_sq = 0.0;
    double spectral = 0.0;
    double spectral_sq = 0.0;
    std::optional<Index> r_tau;
    std::optional<Index> r_eta;
    std::optional<double> runtime_ms;
};

struct SummaryRow {
    Index grid_index = 0;
    std::string grid_label;
    double grid_value = 0.0;
    std::string method;
    int replicates = 0;
    double mean_distance = 0.0;
    double se_distance = 0.0;
    double median_distance = 0.0;
    double mean_distance_sq = 0.0;
    double se_distance_sq = 0.0;
    double mean_spectral = 0.0;
    double se_spectral = 0.0;
    double mean_spectral_sq = 0.0;
    double se_spectral_sq = 0.0;
    std::optional<double> frac_r_tau_correct;
    std::optional<double> frac_r_eta_within;  // r_eta in {r - 1, r}
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<ResultRow> rows;       // ordered by (grid, method, replicate)
    std::vector<SummaryRow> summary;   // ordered by (grid, method)
};

ExperimentResult run_experiment(const ExperimentConfig& config);

/// Mean and standard error (sample sd / sqrt(count)) per (grid, method).
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);

/// Finds the summary row for (grid_index, method); throws if absent.
const SummaryRow& find_summary(const ExperimentResult& result, Index grid_index,
                               const std::string& method);

/// sqrt(a.se^2 + b.se^2) for the distance metric.
double pooled_se(const SummaryRow& a, const SummaryRow& b);

// ---- emission ---------------------------------------------------------------------

enum class OutputFormat { csv, json };

extern const std::vector<std::string> kRowColumns;
extern const std::vector<std::string> kSummaryColumns;

/// CSV writes <prefix>_rows.csv and <prefix>_summary.csv; JSON writes one
/// document at `path`.
void emit(const ExperimentResult& result, OutputFormat format, const std::string& path);

nlohmann::json to_json(const ExperimentResult& result);
ExperimentResult experiment_result_from_json(const nlohmann::json& doc);
std::vector<SummaryRow> load_summary_csv(const std::string& path);
std::vector<ResultRow> load_rows_csv(const std::string& path);

// ---- bootstrap, whitening, R^2 ------------------------------------------------------

struct BootstrapOptions {
    std::string method = "gmm-full";
    Index r = 1;
    double delta = 0.01;
    int resamples = 100;
    std::uint64_t seed = 0;
    bool identity_resample = false;  // every resample is the original row order
    std::optional<MatrixXd> truth;   // reference basis; default is the full-data estimate
};

struct BootstrapRow {
    int resample = 0;
    double distance = 0.0;
    double distance_sq = 0.0;
    double spectral = 0.0;
    double spectral_sq = 0.0;
};

struct BootstrapResult {
    SubspaceEstimate full_estimate;
    MatrixXd reference;
    std::vector<BootstrapRow> rows;
    double mean_distance = 0.0;
    double sd_distance = 0.0;
};

BootstrapResult bootstrap(const Dataset& data, const MomentFunctionSet& set,
                          const BootstrapOptions& options);

std::string bootstrap_csv(const BootstrapResult& result);

/// Subtracts the column means of x and the mean of y.
Dataset center(const Dataset& data);

/// Centers x and multiplies by the symmetric inverse square root of its
/// sample covariance (divisor n - 1); y is centered.
Dataset whiten(const Dataset& data);

/// R^2 of least squares of y on the projections x^T d_k with intercept;
/// degree 2 adds squares and pairwise products.
double evaluate_projection_r2(const Dataset& data, const MatrixXd& directions, int degree);

}  // namespace sgmm
