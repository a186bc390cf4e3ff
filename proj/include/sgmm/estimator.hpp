#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "sgmm/moments.hpp"

namespace sgmm {

enum class WeightKind { identity, diagonal, full, block_diagonal };

std::string to_string(WeightKind kind);

/// Symmetric PSD m x m weighting. The lifted W kron I_p never exists in memory.
struct WeightMatrix {
    MatrixXd W;
    WeightKind kind = WeightKind::full;
    std::vector<Index> blocks;  // block sizes when kind == block_diagonal
    bool degenerate = false;    // thresholding removed every eigenvalue

    Index m() const { return W.rows(); }

    static WeightMatrix identity(Index m);
    static WeightMatrix diagonal(const VectorXd& d);
    static WeightMatrix full(MatrixXd W);
    static WeightMatrix block_diagonal(const std::vector<MatrixXd>& blocks);

    /// Throws unless symmetric within 1e-12 and PSD within -1e-10 * largest.
    void validate() const;
};

struct SubspaceEstimate {
    MatrixXd U;             // p x r, orthonormal columns
    VectorXd eigenvalues;   // all p eigenvalues, descending
    Index r = 0;
    std::vector<std::string> warnings;

    Index p() const { return U.rows(); }
};

struct SigmaHat {
    MatrixXd Sigma;  // m x m, exactly symmetric
    Index n = 0;
    MatrixXd U0;
};

struct SubspaceMetrics {
    double distance = 0.0;   // ||P_hat - P*||_F
    VectorXd sin_theta;      // descending
    double psi_trace = 0.0;  // r - ||U*^T U_hat||_F^2
    double spectral = 0.0;   // ||P_hat - P*||_2
};

struct RankRow {
    Index k = 0;
    double lambda = 0.0;  // lambda_k, NaN for k = 0
    double stat = 0.0;    // n (p - k) sum_{j>k} lambda_j, NaN when undefined
    double eta = 0.0;     // chi-squared critical value, NaN when dof <= 0
};

struct RankEstimate {
    Index r_tau = 0;
    Index r_eta = 0;
    double tau = 0.0;
    double eta_quantile = 0.95;
    Index n = 0;
    std::vector<RankRow> rows;  // k = 0..p
};

/// Eigendecomposition of (A + A^T)/2 with the top-r eigenvectors returned.
/// Eigenvalues descend; each eigenvector's first coordinate above 1e-8 times
/// its largest magnitude is made positive.
SubspaceEstimate top_eigen(const MatrixXd& A, Index r);

/// Top-r eigenvectors of V W V^T.
SubspaceEstimate weighted_eigen(const MatrixXd& V, const WeightMatrix& W, Index r);
SubspaceEstimate weighted_eigen(const MomentMatrix& V, const WeightMatrix& W, Index r);

/// The sum_{k,l} w_kl v_k^T v_l - Tr(U^T V W V^T U) form of the objective.
double gmm_objective(const MatrixXd& V, const WeightMatrix& W, const MatrixXd& U);

/// Sigma-hat from the per-sample evaluations projected off span(U0).
SigmaHat estimate_sigma(const MomentMatrix& V, const MatrixXd& U0);
/// Same, through the sequential reference kernel.
SigmaHat estimate_sigma_serial(const MomentMatrix& V, const MatrixXd& U0);

/// Eigenvalues above delta are inverted, the rest zeroed.
WeightMatrix thresholded_pinv(const MatrixXd& S, double delta);
WeightMatrix thresholded_pinv(const SigmaHat& S, double delta);

enum class WeightShape { full, diagonal };

enum class RankRule { tau, eta };

struct TwoStepOptions {
    std::optional<Index> r;  // nullopt selects the rank from the data
    double delta = 0.01;
    WeightShape shape = WeightShape::full;
    int iterations = 1;
    std::optional<double> tau;  // default n^{-1/2} tr(V W V^T) / p
    double eta_quantile = 0.95;
    RankRule rank_rule = RankRule::tau;
};

struct TwoStepResult {
    SubspaceEstimate estimate;
    SubspaceEstimate pilot;
    SigmaHat sigma;
    WeightMatrix weight;
    std::optional<RankEstimate> rank;
};

TwoStepResult two_step_gmm(const MomentMatrix& V, const TwoStepOptions& options = {});

/// n^{-1/2} times the mean eigenvalue.
double default_tau(const VectorXd& eigenvalues, Index n);

RankEstimate estimate_rank(const MatrixXd& V, const WeightMatrix& W, Index n,
                           std::optional<double> tau = std::nullopt, double eta_quantile = 0.95);

/// n (p - k) sum_{j>k} lambda_j(V W V^T).
double chi2_rank_statistic(const MatrixXd& V, const WeightMatrix& W, Index n, Index k);

SubspaceMetrics subspace_metrics(const MatrixXd& U_hat, const MatrixXd& U_star);
SubspaceMetrics subspace_metrics(const SubspaceEstimate& estimate, const GroundTruth& truth);

/// Top-r eigenvectors of kappa M + V W V^T.
SubspaceEstimate augmented_eigen(double kappa, const MatrixXd& M, const MatrixXd& V,
                                 const WeightMatrix& W, Index r);

nlohmann::json to_json(const SubspaceEstimate& estimate);
SubspaceEstimate subspace_estimate_from_json(const nlohmann::json& doc);

/// CSV table with header k,lambda_k,stat_k,eta_k; undefined cells are empty.
std::string rank_table_csv(const RankEstimate& rank);

}  // namespace sgmm
