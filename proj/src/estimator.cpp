#include "sgmm/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sgmm/csv.hpp"
#include "sgmm/error.hpp"
#include "sgmm/kernels.hpp"
#include "sgmm/stats.hpp"

namespace sgmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kGapTolerance = 1e-8;
constexpr int kMaxRankRefinements = 5;

double max_abs(const MatrixXd& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

void require_square(const MatrixXd& A, const char* what) {
    if (A.rows() != A.cols()) {
        throw DimensionError(std::string(what) + " must be square");
    }
}

void require_orthonormal(const MatrixXd& U, double tol, const char* what) {
    const MatrixXd G = U.transpose() * U - MatrixXd::Identity(U.cols(), U.cols());
    if (max_abs(G) > tol) {
        throw ParameterError(std::string(what) + " does not have orthonormal columns");
    }
}

/// Descending eigenvalues of the symmetrized A, optionally with eigenvectors.
Eigen::SelfAdjointEigenSolver<MatrixXd> symmetric_solver(const MatrixXd& A, bool vectors) {
    const MatrixXd S = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(
        S, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericalError("symmetric eigendecomposition did not converge");
    }
    return es;
}

VectorXd descending(const VectorXd& ascending) { return ascending.reverse(); }

VectorXd spectrum(const MatrixXd& V, const WeightMatrix& W) {
    return descending(symmetric_solver(V * W.W * V.transpose(), false).eigenvalues());
}

void check_weight_against(const MatrixXd& V, const WeightMatrix& W) {
    if (W.m() != V.cols() || W.W.cols() != V.cols()) {
        std::ostringstream msg;
        msg << "weight matrix is " << W.W.rows() << " x " << W.W.cols() << " but V has "
            << V.cols() << " columns";
        throw DimensionError(msg.str());
    }
}

void check_restreamable(const MomentMatrix& V) {
    if (!V.cached() && !V.restreamable()) {
        throw ParameterError("moment matrix has no per-sample evaluator; Sigma-hat needs one");
    }
}

WeightMatrix weight_from_sigma(const SigmaHat& sigma, const TwoStepOptions& options,
                               std::vector<std::string>& warnings) {
    MatrixXd S = sigma.Sigma;
    if (options.shape == WeightShape::diagonal) {
        S = MatrixXd(S.diagonal().asDiagonal());
    }
    WeightMatrix W = thresholded_pinv(S, options.delta);
    if (W.degenerate) {
        std::ostringstream msg;
        msg << "all eigenvalues of Sigma-hat are at or below delta = " << options.delta
            << "; falling back to W = I";
        warnings.push_back(msg.str());
        return WeightMatrix::identity(S.rows());
    }
    if (options.shape == WeightShape::diagonal) W.kind = WeightKind::diagonal;
    return W;
}

Index select_rank(const RankEstimate& rank, RankRule rule) {
    return rule == RankRule::tau ? rank.r_tau : rank.r_eta;
}

void append(std::vector<std::string>& to, const std::vector<std::string>& from) {
    to.insert(to.end(), from.begin(), from.end());
}

}  // namespace

std::string to_string(WeightKind kind) {
    switch (kind) {
        case WeightKind::identity: return "identity";
        case WeightKind::diagonal: return "diagonal";
        case WeightKind::full: return "full";
        case WeightKind::block_diagonal: return "block-diagonal";
    }
    return "?";
}

// ---- WeightMatrix ------------------------------------------------------------

void WeightMatrix::validate() const {
    require_square(W, "weight matrix");
    if (W.rows() < 1) throw DimensionError("weight matrix must be at least 1 x 1");
    if (!W.allFinite()) throw NumericalError("weight matrix has non-finite entries");
    const double scale = std::max(1.0, max_abs(W));
    if (max_abs(W - W.transpose()) > 1e-12 * scale) {
        throw ParameterError("weight matrix is not symmetric");
    }
    const VectorXd ev = symmetric_solver(W, false).eigenvalues();
    if (ev(0) < -1e-10 * std::max(0.0, ev(ev.size() - 1))) {
        throw ParameterError("weight matrix is not positive semidefinite");
    }
}

WeightMatrix WeightMatrix::identity(Index m) {
    if (m < 1) throw DimensionError("weight matrix must be at least 1 x 1");
    return WeightMatrix{MatrixXd::Identity(m, m), WeightKind::identity, {}, false};
}

WeightMatrix WeightMatrix::diagonal(const VectorXd& d) {
    WeightMatrix w{MatrixXd(d.asDiagonal()), WeightKind::diagonal, {}, false};
    w.validate();
    return w;
}

WeightMatrix WeightMatrix::full(MatrixXd W) {
    WeightMatrix w{std::move(W), WeightKind::full, {}, false};
    w.validate();
    return w;
}

WeightMatrix WeightMatrix::block_diagonal(const std::vector<MatrixXd>& blocks) {
    if (blocks.empty()) throw DimensionError("block-diagonal weight needs at least one block");
    Index m = 0;
    for (const auto& b : blocks) {
        require_square(b, "weight block");
        m += b.rows();
    }
    WeightMatrix w{MatrixXd::Zero(m, m), WeightKind::block_diagonal, {}, false};
    Index at = 0;
    for (const auto& b : blocks) {
        w.W.block(at, at, b.rows(), b.cols()) = b;
        w.blocks.push_back(b.rows());
        at += b.rows();
    }
    w.validate();
    return w;
}

// ---- eigen problems --------------------------------------------------------------

SubspaceEstimate top_eigen(const MatrixXd& A, Index r) {
    require_square(A, "eigen-problem matrix");
    const Index p = A.rows();
    if (r < 0 || r > p) {
        std::ostringstream msg;
        msg << "requested dimension r = " << r << " outside [0, " << p << "]";
        throw DimensionError(msg.str());
    }
    if (!A.allFinite()) throw NumericalError("eigen-problem matrix has non-finite entries");
    const auto es = symmetric_solver(A, true);
    SubspaceEstimate out;
    out.r = r;
    out.eigenvalues = descending(es.eigenvalues());
    out.U = es.eigenvectors().rowwise().reverse().leftCols(r);
    for (Index k = 0; k < r; ++k) {
        auto u = out.U.col(k);
        const double cut = 1e-8 * u.cwiseAbs().maxCoeff();
        for (Index i = 0; i < p; ++i) {
            if (std::abs(u(i)) > cut) {
                if (u(i) < 0.0) u *= -1.0;
                break;
            }
        }
    }
    if (r >= 1 && r < p) {
        const double gap = out.eigenvalues(r - 1) - out.eigenvalues(r);
        const double scale = std::max(std::abs(out.eigenvalues(0)), std::numeric_limits<double>::min());
        if (gap < kGapTolerance * scale) {
            std::ostringstream msg;
            msg << "near-degenerate eigengap at position " << r << " (relative gap "
                << gap / scale << ")";
            out.warnings.push_back(msg.str());
        }
    }
    return out;
}

SubspaceEstimate weighted_eigen(const MatrixXd& V, const WeightMatrix& W, Index r) {
    check_weight_against(V, W);
    if (r < 1 || r > V.rows()) {
        std::ostringstream msg;
        msg << "subspace dimension r = " << r << " must lie in [1, " << V.rows() << "]";
        throw DimensionError(msg.str());
    }
    return top_eigen(V * W.W * V.transpose(), r);
}

SubspaceEstimate weighted_eigen(const MomentMatrix& V, const WeightMatrix& W, Index r) {
    return weighted_eigen(V.V(), W, r);
}

double gmm_objective(const MatrixXd& V, const WeightMatrix& W, const MatrixXd& U) {
    check_weight_against(V, W);
    if (U.rows() != V.rows()) throw DimensionError("U and V differ in row count");
    require_orthonormal(U, 1e-8, "U");
    const double total = (V.transpose() * V).cwiseProduct(W.W).sum();
    const MatrixXd B = V.transpose() * U;
    return total - (B.transpose() * W.W * B).trace();
}

// ---- Sigma-hat and weights -------------------------------------------------------

SigmaHat estimate_sigma(const MomentMatrix& V, const MatrixXd& U0) {
    check_restreamable(V);
    if (U0.rows() != V.p()) throw DimensionError("pilot basis has wrong row count");
    require_orthonormal(U0, 1e-8, "pilot basis");
    return SigmaHat{kernels::parallel::projected_gram(V, U0), V.n(), U0};
}

SigmaHat estimate_sigma_serial(const MomentMatrix& V, const MatrixXd& U0) {
    check_restreamable(V);
    if (U0.rows() != V.p()) throw DimensionError("pilot basis has wrong row count");
    require_orthonormal(U0, 1e-8, "pilot basis");
    return SigmaHat{kernels::serial::projected_gram(V, U0), V.n(), U0};
}

WeightMatrix thresholded_pinv(const MatrixXd& S, double delta) {
    if (!(delta >= 0.0)) throw ParameterError("threshold delta must be nonnegative");
    require_square(S, "Sigma-hat");
    if (S.rows() < 1) throw DimensionError("Sigma-hat must be at least 1 x 1");
    if (!S.allFinite()) throw NumericalError("Sigma-hat has non-finite entries");
    const auto es = symmetric_solver(S, true);
    VectorXd psi = es.eigenvalues();
    bool any = false;
    for (Index i = 0; i < psi.size(); ++i) {
        if (psi(i) > delta) {
            psi(i) = 1.0 / psi(i);
            any = true;
        } else {
            psi(i) = 0.0;
        }
    }
    const MatrixXd& Q = es.eigenvectors();
    MatrixXd W = Q * psi.asDiagonal() * Q.transpose();
    W = 0.5 * (W + W.transpose());
    return WeightMatrix{std::move(W), WeightKind::full, {}, !any};
}

WeightMatrix thresholded_pinv(const SigmaHat& S, double delta) {
    return thresholded_pinv(S.Sigma, delta);
}

// ---- rank ---------------------------------------------------------------------------

double default_tau(const VectorXd& eigenvalues, Index n) {
    if (n < 1) throw EmptyDatasetError("sample count must be at least 1");
    return eigenvalues.mean() / std::sqrt(static_cast<double>(n));
}

RankEstimate estimate_rank(const MatrixXd& V, const WeightMatrix& W, Index n,
                           std::optional<double> tau, double eta_quantile) {
    check_weight_against(V, W);
    if (!(eta_quantile > 0.0 && eta_quantile < 1.0)) {
        throw ParameterError("eta quantile must lie in (0, 1)");
    }
    if (n < 1) throw EmptyDatasetError("sample count must be at least 1");
    const Index p = V.rows();
    const Index m = V.cols();
    const Index cap = std::min(p, m);
    const VectorXd lambda = spectrum(V, W);

    RankEstimate out;
    out.n = n;
    out.eta_quantile = eta_quantile;
    out.tau = tau ? *tau : default_tau(lambda, n);
    while (out.r_tau < cap && lambda(out.r_tau) > out.tau) ++out.r_tau;

    std::optional<Index> r_eta;
    for (Index k = 0; k <= p; ++k) {
        RankRow row;
        row.k = k;
        row.lambda = k == 0 ? kNaN : lambda(k - 1);
        const Index dof = (p - k) * (m - k);
        if (k < p && k < m && dof > 0) {
            row.stat = static_cast<double>(n) * static_cast<double>(p - k) * lambda.tail(p - k).sum();
            row.eta = stats::chi2_quantile(eta_quantile, static_cast<double>(dof));
            if (!r_eta && row.stat <= row.eta) r_eta = k;
        } else {
            row.stat = kNaN;
            row.eta = kNaN;
        }
        out.rows.push_back(row);
    }
    out.r_eta = r_eta ? *r_eta : cap;
    return out;
}

double chi2_rank_statistic(const MatrixXd& V, const WeightMatrix& W, Index n, Index k) {
    check_weight_against(V, W);
    const Index p = V.rows();
    if (k < 0 || k >= p) {
        throw DimensionError("rank statistic needs 0 <= k < p");
    }
    const VectorXd lambda = spectrum(V, W);
    return static_cast<double>(n) * static_cast<double>(p - k) * lambda.tail(p - k).sum();
}

// ---- two-step procedure ------------------------------------------------------------

TwoStepResult two_step_gmm(const MomentMatrix& V, const TwoStepOptions& options) {
    check_restreamable(V);
    if (!(options.delta >= 0.0)) throw ParameterError("threshold delta must be nonnegative");
    if (options.iterations < 1) throw ParameterError("iterations must be at least 1");
    const Index p = V.p();
    const Index cap = std::min(p, V.m());
    if (options.r && (*options.r < 1 || *options.r > p)) {
        std::ostringstream msg;
        msg << "subspace dimension r = " << *options.r << " must lie in [1, " << p << "]";
        throw DimensionError(msg.str());
    }

    TwoStepResult out;
    std::vector<std::string> warnings;
    const WeightMatrix I = WeightMatrix::identity(V.m());

    Index r = 0;
    if (options.r) {
        r = *options.r;
        out.pilot = weighted_eigen(V, I, r);
        out.sigma = estimate_sigma(V, out.pilot.U);
        out.weight = weight_from_sigma(out.sigma, options, warnings);
    } else {
        // Pilot dimension from the identity-weighted spectrum, then refined on
        // the weighted spectrum until the selected rank stops moving.
        const RankEstimate first = estimate_rank(V.V(), I, V.n(), std::nullopt, options.eta_quantile);
        r = std::clamp<Index>(first.r_tau, 1, cap);
        bool settled = false;
        for (int attempt = 0; attempt < kMaxRankRefinements; ++attempt) {
            std::vector<std::string> local;
            out.pilot = weighted_eigen(V, I, r);
            out.sigma = estimate_sigma(V, out.pilot.U);
            out.weight = weight_from_sigma(out.sigma, options, local);
            out.rank = estimate_rank(V.V(), out.weight, V.n(), options.tau, options.eta_quantile);
            Index next = select_rank(*out.rank, options.rank_rule);
            if (next < 1) {
                local.push_back("rank estimate is 0 (no eigenvalue clears the threshold); using r = 1");
                next = 1;
            }
            if (next == r) {
                append(warnings, local);
                settled = true;
                break;
            }
            r = next;
        }
        if (!settled) {
            warnings.push_back("rank selection did not settle; using the last selected value");
            out.pilot = weighted_eigen(V, I, r);
            out.sigma = estimate_sigma(V, out.pilot.U);
            out.weight = weight_from_sigma(out.sigma, options, warnings);
        }
    }

    out.estimate = weighted_eigen(V, out.weight, r);
    for (int it = 1; it < options.iterations; ++it) {
        out.sigma = estimate_sigma(V, out.estimate.U);
        out.weight = weight_from_sigma(out.sigma, options, warnings);
        out.estimate = weighted_eigen(V, out.weight, r);
    }
    std::vector<std::string> all = out.pilot.warnings;
    for (auto& w : all) w = "pilot: " + w;
    append(all, warnings);
    append(all, out.estimate.warnings);
    out.estimate.warnings = std::move(all);
    return out;
}

// ---- metrics and augmentation ---------------------------------------------------------

SubspaceMetrics subspace_metrics(const MatrixXd& U_hat, const MatrixXd& U_star) {
    if (U_hat.rows() != U_star.rows() || U_hat.cols() != U_star.cols()) {
        std::ostringstream msg;
        msg << "estimate is " << U_hat.rows() << " x " << U_hat.cols() << " but truth is "
            << U_star.rows() << " x " << U_star.cols();
        throw DimensionError(msg.str());
    }
    const Index r = U_hat.cols();
    SubspaceMetrics out;
    out.sin_theta = VectorXd::Zero(r);
    if (r == 0) return out;

    const MatrixXd C = U_star.transpose() * U_hat;
    const VectorXd sv = Eigen::JacobiSVD<MatrixXd>(C).singularValues();  // descending
    for (Index k = 0; k < r; ++k) {
        const double c = std::clamp(sv(r - 1 - k), 0.0, 1.0);
        out.sin_theta(k) = std::sqrt(1.0 - c * c);
    }
    const MatrixXd D = U_hat * U_hat.transpose() - U_star * U_star.transpose();
    out.distance = D.norm();
    out.psi_trace = static_cast<double>(r) - C.squaredNorm();
    out.spectral = symmetric_solver(D, false).eigenvalues().cwiseAbs().maxCoeff();
    return out;
}

SubspaceMetrics subspace_metrics(const SubspaceEstimate& estimate, const GroundTruth& truth) {
    return subspace_metrics(estimate.U, truth.basis);
}

SubspaceEstimate augmented_eigen(double kappa, const MatrixXd& M, const MatrixXd& V,
                                 const WeightMatrix& W, Index r) {
    if (!(kappa >= 0.0)) throw ParameterError("augmentation weight kappa must be nonnegative");
    check_weight_against(V, W);
    if (M.rows() != V.rows() || M.cols() != V.rows()) {
        throw DimensionError("augmentation matrix must be p x p");
    }
    if (max_abs(M - M.transpose()) > 1e-10 * std::max(1.0, max_abs(M))) {
        throw ParameterError("augmentation matrix is not symmetric");
    }
    if (r < 1 || r > V.rows()) throw DimensionError("subspace dimension r must lie in [1, p]");
    return top_eigen(kappa * M + V * W.W * V.transpose(), r);
}

// ---- serialization -----------------------------------------------------------------------

nlohmann::json to_json(const SubspaceEstimate& e) {
    nlohmann::json doc;
    doc["p"] = e.U.rows();
    doc["r"] = e.r;
    doc["eigenvalues"] = std::vector<double>(e.eigenvalues.data(),
                                             e.eigenvalues.data() + e.eigenvalues.size());
    doc["U"] = std::vector<double>(e.U.data(), e.U.data() + e.U.size());  // column-major
    doc["warnings"] = e.warnings;
    return doc;
}

SubspaceEstimate subspace_estimate_from_json(const nlohmann::json& doc) {
    try {
        SubspaceEstimate e;
        const Index p = doc.at("p").get<Index>();
        e.r = doc.at("r").get<Index>();
        const auto ev = doc.at("eigenvalues").get<std::vector<double>>();
        const auto u = doc.at("U").get<std::vector<double>>();
        if (static_cast<Index>(u.size()) != p * e.r || static_cast<Index>(ev.size()) != p) {
            throw ParseError("subspace estimate arrays do not match p and r");
        }
        e.eigenvalues = Eigen::Map<const VectorXd>(ev.data(), p);
        e.U = Eigen::Map<const MatrixXd>(u.data(), p, e.r);
        e.warnings = doc.value("warnings", std::vector<std::string>{});
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("malformed subspace estimate: ") + ex.what());
    }
}

std::string rank_table_csv(const RankEstimate& rank) {
    auto cell = [](double v) { return std::isnan(v) ? std::string{} : csv::format_double(v); };
    std::ostringstream out;
    out << "k,lambda_k,stat_k,eta_k\n";
    for (const auto& row : rank.rows) {
        out << row.k << ',' << cell(row.lambda) << ',' << cell(row.stat) << ',' << cell(row.eta)
            << '\n';
    }
    return out.str();
}

}  // namespace sgmm
