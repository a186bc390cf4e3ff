#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "sgmm/error.hpp"
#include "sgmm/estimator.hpp"
#include "sgmm/rng.hpp"
#include "support.hpp"

using namespace sgmm;
using testkit::gaussian;
using testkit::projector_distance;
using testkit::random_orthonormal;
using testkit::random_psd;

namespace {

CustomMoment constant_moment(const std::string& name, VectorXd b) {
    return {name,
            [b](const Eigen::Ref<const VectorXd>&, std::optional<double>, Eigen::Ref<VectorXd> out) {
                out = b;
            },
            true, false};
}

CustomMoment identity_moment() {
    return {"x",
            [](const Eigen::Ref<const VectorXd>& x, std::optional<double>, Eigen::Ref<VectorXd> out) {
                out = x;
            },
            true, false};
}

MomentMatrix factor_example(Index n, std::uint64_t seed, double mu = 2.0) {
    VectorXd m(2);
    m << mu, -mu;
    const Simulation s = gen_factor({n, 10, 2, m, 2.0}, seed);
    return materialize(s.data, factor_moments(10, 2.0));
}

}  // namespace

// ---- weighted_eigen -------------------------------------------------------------

TEST(WeightedEigen, RankOneByHand) {
    MatrixXd V(2, 1);
    V << 1, 0;
    const SubspaceEstimate e = weighted_eigen(V, WeightMatrix::identity(1), 1);
    EXPECT_NEAR(std::abs(e.U(0, 0)), 1.0, 1e-15);
    EXPECT_NEAR(e.U(1, 0), 0.0, 1e-15);
    EXPECT_NEAR(e.eigenvalues(0), 1.0, 1e-15);
    EXPECT_NEAR(e.eigenvalues(1), 0.0, 1e-15);
}

TEST(WeightedEigen, DiagonalWeight) {
    VectorXd d(3);
    d << 3, 2, 1;
    const SubspaceEstimate e = weighted_eigen(MatrixXd::Identity(3, 3), WeightMatrix::diagonal(d), 2);
    EXPECT_LE(projector_distance(e.U, MatrixXd::Identity(3, 2)), 1e-14);
    EXPECT_LE((e.eigenvalues - d).norm(), 1e-14);
}

TEST(WeightedEigen, Errors) {
    const MatrixXd V = MatrixXd::Identity(3, 2);
    EXPECT_THROW(weighted_eigen(V, WeightMatrix::identity(2), 4), DimensionError);
    EXPECT_THROW(weighted_eigen(V, WeightMatrix::identity(3), 1), DimensionError);
    EXPECT_THROW(weighted_eigen(V, WeightMatrix::identity(2), 0), DimensionError);
}

TEST(WeightedEigen, CharacteristicPolynomialOracle) {
    std::mt19937_64 rng(2024);
    int checked = 0;
    for (Index p = 2; p <= 4; ++p) {
        for (int trial = 0; trial < 40; ++trial) {
            const Index m = 1 + static_cast<Index>(trial % 4);
            const MatrixXd V = gaussian(p, m, rng);
            const WeightMatrix W = WeightMatrix::full(random_psd(m, rng));
            const MatrixXd A = V * W.W * V.transpose();
            const std::vector<double> roots = testkit::charpoly_eigenvalues(0.5 * (A + A.transpose()));
            // Roots of multiplicity > 1 (including the zero block when m < p)
            // are found once, so compare only the simple leading roots.
            const Index rank = std::min(p, m);
            if (static_cast<Index>(roots.size()) < rank) continue;
            const SubspaceEstimate e = weighted_eigen(V, W, rank);
            bool simple = true;
            for (Index k = 0; k < rank; ++k) {
                const double gap = k + 1 < p ? e.eigenvalues(k) - e.eigenvalues(k + 1) : 1.0;
                if (gap < 1e-3 * std::max(1.0, e.eigenvalues(0))) simple = false;
            }
            if (!simple) continue;
            MatrixXd oracle(p, rank);
            for (Index k = 0; k < rank; ++k) {
                EXPECT_NEAR(e.eigenvalues(k), roots[static_cast<std::size_t>(k)],
                            1e-8 * std::max(1.0, std::abs(roots[0])));
                oracle.col(k) = testkit::null_vector(A, roots[static_cast<std::size_t>(k)]);
            }
            // Eigenvectors agree up to sign, entry by entry.
            for (Index k = 0; k < rank; ++k) {
                const double sign = e.U.col(k).dot(oracle.col(k)) < 0.0 ? -1.0 : 1.0;
                EXPECT_LE((e.U.col(k) - sign * oracle.col(k)).norm(), 1e-8) << "p=" << p << " m=" << m;
            }
            ++checked;
        }
    }
    EXPECT_GT(checked, 80);
}

TEST(WeightedEigen, ScaleInvariance) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const MatrixXd V = gaussian(6, 5, rng);
        const MatrixXd W = random_psd(5, rng);
        const double c = std::exp(gaussian(1, 1, rng)(0, 0) * 3.0);
        const SubspaceEstimate a = weighted_eigen(V, WeightMatrix::full(W), 3);
        const SubspaceEstimate b = weighted_eigen(V, WeightMatrix::full(c * W), 3);
        EXPECT_LE(subspace_metrics(a.U, b.U).distance, 1e-10);
        EXPECT_LE((b.eigenvalues - c * a.eigenvalues).norm(), 1e-10 * c * a.eigenvalues.norm());
    }
}

TEST(WeightedEigen, ProjectionIdempotence) {
    std::mt19937_64 rng(6);
    const SubspaceEstimate e = weighted_eigen(gaussian(7, 4, rng), WeightMatrix::identity(4), 3);
    const MatrixXd Q = MatrixXd::Identity(7, 7) - e.U * e.U.transpose();
    EXPECT_LE((Q * Q - Q).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TopEigen, FlagsDegenerateGap) {
    const SubspaceEstimate e = top_eigen(MatrixXd::Identity(3, 3), 1);
    ASSERT_FALSE(e.warnings.empty());
    EXPECT_NE(e.warnings.front().find("eigengap"), std::string::npos);
}

TEST(TopEigen, SignCanonicalization) {
    MatrixXd A = MatrixXd::Zero(3, 3);
    A(1, 1) = 2.0;
    A(2, 2) = 1.0;
    const SubspaceEstimate e = top_eigen(A, 2);
    EXPECT_GT(e.U(1, 0), 0.0);
    EXPECT_GT(e.U(2, 1), 0.0);
}

// ---- objective ------------------------------------------------------------------

TEST(GmmObjective, FullProjectionIsZero) {
    std::mt19937_64 rng(7);
    const MatrixXd V = gaussian(4, 6, rng);
    const WeightMatrix W = WeightMatrix::full(random_psd(6, rng));
    EXPECT_NEAR(gmm_objective(V, W, MatrixXd::Identity(4, 4)), 0.0, 1e-10 * V.squaredNorm());
    MatrixXd bad = MatrixXd::Identity(4, 2);
    bad(0, 0) = 1.1;
    EXPECT_THROW(gmm_objective(V, W, bad), ParameterError);
}

TEST(GmmObjective, EigenMinimizesAndMatchesSpectrum) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 1000; ++trial) {
        const Index p = 2 + static_cast<Index>(trial % 5);
        const Index m = 1 + static_cast<Index>((trial / 5) % 6);
        const Index r = 1 + static_cast<Index>(trial % p);
        const MatrixXd V = gaussian(p, m, rng);
        const WeightMatrix W = WeightMatrix::full(random_psd(m, rng));
        const SubspaceEstimate e = weighted_eigen(V, W, r);
        const double q_hat = gmm_objective(V, W, e.U);
        const double total = (V.transpose() * V).cwiseProduct(W.W).sum();
        const double closed = total - e.eigenvalues.head(r).sum();
        EXPECT_NEAR(q_hat, closed, 1e-10 * std::max(1.0, total));
        const MatrixXd U = random_orthonormal(p, r, rng);
        EXPECT_LE(q_hat, gmm_objective(V, W, U) + 1e-10 * std::max(1.0, total));
    }
}

TEST(GmmObjective, KroneckerFormMatchesTraceForm) {
    // g(U) = vec((I - U U^T) V) and W_bar = W (x) I_p, built entry by entry.
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const Index p = 3 + static_cast<Index>(trial % 3);
        const Index m = 2 + static_cast<Index>(trial % 4);
        const MatrixXd V = gaussian(p, m, rng);
        const MatrixXd W = random_psd(m, rng);
        const MatrixXd U = random_orthonormal(p, 2, rng);
        const MatrixXd R = (MatrixXd::Identity(p, p) - U * U.transpose()) * V;
        VectorXd g(p * m);
        for (Index l = 0; l < m; ++l) g.segment(l * p, p) = R.col(l);
        MatrixXd Wbar = MatrixXd::Zero(p * m, p * m);
        for (Index k = 0; k < m; ++k) {
            for (Index l = 0; l < m; ++l) {
                for (Index i = 0; i < p; ++i) Wbar(k * p + i, l * p + i) = W(k, l);
            }
        }
        const double direct = g.dot(Wbar * g);
        const double trace = gmm_objective(V, WeightMatrix::full(W), U);
        EXPECT_NEAR(direct, trace, 1e-10 * std::max(1.0, std::abs(direct)));
    }
}

// ---- Sigma-hat and thresholding ---------------------------------------------------

TEST(EstimateSigma, HandComputation) {
    RowMatrix x(2, 2);
    x << 0, 1, 0, -1;
    const MomentMatrix mm = materialize(make_dataset(x), custom_moments(2, {identity_moment()}));
    const SigmaHat s = estimate_sigma(mm, MatrixXd::Identity(2, 1));
    ASSERT_EQ(s.Sigma.rows(), 1);
    EXPECT_NEAR(s.Sigma(0, 0), 1.0, 1e-15);
    EXPECT_EQ(s.n, 2);
}

TEST(EstimateSigma, SpanContainedEvaluationsGiveZero) {
    std::mt19937_64 rng(10);
    RowMatrix x = RowMatrix::Zero(30, 3);
    x.leftCols(2) = gaussian(30, 2, rng);
    const MomentMatrix mm = materialize(make_dataset(x), custom_moments(3, {identity_moment()}));
    const SigmaHat s = estimate_sigma(mm, MatrixXd::Identity(3, 2));
    EXPECT_LE(s.Sigma.norm(), 1e-15);
}

TEST(EstimateSigma, SerialMatchesParallel) {
    const MomentMatrix mm = factor_example(700, 3);
    const MatrixXd U0 = weighted_eigen(mm, WeightMatrix::identity(11), 2).U;
    const SigmaHat a = estimate_sigma(mm, U0);
    const SigmaHat b = estimate_sigma_serial(mm, U0);
    EXPECT_LE((a.Sigma - b.Sigma).cwiseAbs().maxCoeff(), 1e-12 * a.Sigma.cwiseAbs().maxCoeff());
    EXPECT_EQ(a.Sigma, a.Sigma.transpose());
    EXPECT_GE(a.Sigma.diagonal().minCoeff(), -1e-10);
}

TEST(EstimateSigma, NeedsEvaluator) {
    const MomentMatrix bare = MomentMatrix::from_values(MatrixXd::Identity(3, 2), 10);
    EXPECT_THROW(estimate_sigma(bare, MatrixXd::Identity(3, 1)), ParameterError);
    EXPECT_THROW(two_step_gmm(bare), ParameterError);
}

TEST(ThresholdedPinv, ExactInverse) {
    std::mt19937_64 rng(11);
    const MatrixXd S = random_psd(5, rng, 1.0);
    const WeightMatrix W = thresholded_pinv(S, 0.0);
    EXPECT_LE((W.W * S - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(W.kind, WeightKind::full);
    EXPECT_FALSE(W.degenerate);
}

TEST(ThresholdedPinv, HandThreshold) {
    MatrixXd S = MatrixXd::Zero(2, 2);
    S(0, 0) = 2.0;
    S(1, 1) = 1e-9;
    const WeightMatrix W = thresholded_pinv(S, 0.01);
    EXPECT_NEAR(W.W(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(W.W(1, 1), 0.0, 1e-15);
    EXPECT_NEAR(W.W(0, 1), 0.0, 1e-15);
}

TEST(ThresholdedPinv, MoorePenroseIdentities) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const Index m = 2 + static_cast<Index>(trial % 6);
        const Index k = 1 + static_cast<Index>(trial % m);
        const MatrixXd A = gaussian(m, k, rng);
        const MatrixXd S = A * A.transpose();  // rank k, remaining eigenvalues ~1e-16
        const MatrixXd W = thresholded_pinv(S, 1e-8).W;
        const double scale = std::max(1.0, W.norm() * S.norm());
        EXPECT_LE((W * S * W - W).cwiseAbs().maxCoeff(), 1e-8 * scale * W.norm());
        EXPECT_LE((S * W * S - S).cwiseAbs().maxCoeff(), 1e-8 * scale * S.norm());
        EXPECT_LE((W * S - (W * S).transpose()).cwiseAbs().maxCoeff(), 1e-8 * scale);
        EXPECT_LE((S * W - (S * W).transpose()).cwiseAbs().maxCoeff(), 1e-8 * scale);
    }
}

TEST(ThresholdedPinv, AllBelowThresholdIsDegenerate) {
    const WeightMatrix W = thresholded_pinv(MatrixXd::Identity(3, 3) * 1e-4, 0.01);
    EXPECT_TRUE(W.degenerate);
    EXPECT_EQ(W.W, MatrixXd::Zero(3, 3));
    EXPECT_THROW(thresholded_pinv(MatrixXd::Identity(2, 2), -1.0), ParameterError);
}

TEST(WeightMatrix, Validation) {
    MatrixXd asym = MatrixXd::Identity(2, 2);
    asym(0, 1) = 0.5;
    EXPECT_THROW(WeightMatrix::full(asym).validate(), ParameterError);
    MatrixXd indefinite = MatrixXd::Identity(2, 2);
    indefinite(1, 1) = -1.0;
    EXPECT_THROW(WeightMatrix::full(indefinite).validate(), ParameterError);
    const WeightMatrix blocks =
        WeightMatrix::block_diagonal({MatrixXd::Identity(2, 2) * 2.0, MatrixXd::Identity(1, 1)});
    EXPECT_EQ(blocks.m(), 3);
    EXPECT_EQ(blocks.kind, WeightKind::block_diagonal);
    EXPECT_EQ(blocks.W(2, 2), 1.0);
    EXPECT_EQ(blocks.W(0, 2), 0.0);
}

// ---- two-step procedure --------------------------------------------------------------

TEST(TwoStep, DeterministicMomentsFallBackToIdentity) {
    MatrixXd B = MatrixXd::Zero(5, 2);
    B(0, 0) = 1.0;
    B(1, 1) = 2.0;
    B(2, 1) = 1.0;
    std::mt19937_64 rng(13);
    const MomentFunctionSet set =
        custom_moments(5, {constant_moment("b1", B.col(0)), constant_moment("b2", B.col(1))});
    const MomentMatrix mm = materialize(make_dataset(gaussian(20, 5, rng)), set);
    TwoStepOptions opts;
    opts.r = 2;
    const TwoStepResult res = two_step_gmm(mm, opts);
    EXPECT_LE(res.sigma.Sigma.norm(), 1e-12);
    EXPECT_EQ(res.weight.kind, WeightKind::identity);
    ASSERT_FALSE(res.estimate.warnings.empty());
    EXPECT_NE(res.estimate.warnings.back().find("falling back"), std::string::npos);
    EXPECT_LE(subspace_metrics(res.estimate.U, canonical_basis(B).basis).distance, 1e-12);
}

TEST(TwoStep, DiagonalShapeAndIterations) {
    const MomentMatrix mm = factor_example(500, 4);
    TwoStepOptions opts;
    opts.r = 2;
    opts.shape = WeightShape::diagonal;
    const TwoStepResult diag = two_step_gmm(mm, opts);
    EXPECT_EQ(diag.weight.kind, WeightKind::diagonal);
    EXPECT_LE((diag.weight.W - MatrixXd(diag.weight.W.diagonal().asDiagonal())).norm(), 0.0);

    opts.shape = WeightShape::full;
    opts.iterations = 3;
    const TwoStepResult iter = two_step_gmm(mm, opts);
    EXPECT_EQ(iter.estimate.r, 2);
    // The final Sigma-hat is formed from the previous estimate, not the pilot.
    EXPECT_GT((iter.sigma.U0 * iter.sigma.U0.transpose() -
               iter.pilot.U * iter.pilot.U.transpose()).norm(), 0.0);

    opts.iterations = 0;
    EXPECT_THROW(two_step_gmm(mm, opts), ParameterError);
    opts.iterations = 1;
    opts.r = 11;
    EXPECT_THROW(two_step_gmm(mm, opts), DimensionError);
}

TEST(TwoStep, RedundantDescriptorLeavesSpanUnchanged) {
    VectorXd mu(2);
    mu << 2, -2;
    const Simulation s = gen_factor({500, 10, 2, mu, 2.0}, 14);
    const MomentFunctionSet base = factor_moments(10, 2.0);
    std::vector<Index> cols(static_cast<std::size_t>(base.m()));
    for (Index l = 0; l < base.m(); ++l) cols[static_cast<std::size_t>(l)] = l;
    cols.push_back(3);
    const MomentFunctionSet dup = base.subset(cols);
    const MomentMatrix va = materialize(s.data, base);
    const MomentMatrix vb = materialize(s.data, dup);

    // The weighted step at a shared U0 is exactly invariant.
    const MatrixXd U0 = weighted_eigen(va, WeightMatrix::identity(base.m()), 2).U;
    const SubspaceEstimate a = weighted_eigen(va, thresholded_pinv(estimate_sigma(va, U0), 0.01), 2);
    const SubspaceEstimate b = weighted_eigen(vb, thresholded_pinv(estimate_sigma(vb, U0), 0.01), 2);
    EXPECT_LE(subspace_metrics(a.U, b.U).distance, 1e-8);

    // The W = I pilot is not, but the iterated map is, so both runs reach the
    // same fixed point.
    TwoStepOptions opts;
    opts.r = 2;
    opts.iterations = 40;
    const TwoStepResult ia = two_step_gmm(va, opts);
    const TwoStepResult ib = two_step_gmm(vb, opts);
    EXPECT_LE(subspace_metrics(ia.estimate.U, ib.estimate.U).distance, 1e-8);
}

TEST(TwoStep, RotationEquivariance) {
    VectorXd mu(2);
    mu << 1.5, -1.5;
    const Simulation s = gen_factor({400, 6, 2, mu, 1.0}, 15);
    std::mt19937_64 rng(16);
    const MatrixXd Q = random_orthonormal(6, 6, rng);
    Dataset turned = s.data;
    turned.x = s.data.x * Q.transpose();  // x_i -> Q x_i
    TwoStepOptions opts;
    opts.r = 2;
    const TwoStepResult a = two_step_gmm(materialize(s.data, factor_moments(6, 1.0)), opts);
    const TwoStepResult b = two_step_gmm(materialize(turned, factor_moments(6, 1.0)), opts);
    const SubspaceMetrics ma = subspace_metrics(a.estimate.U, s.truth.basis);
    const SubspaceMetrics mb = subspace_metrics(b.estimate.U, Q * s.truth.basis);
    EXPECT_NEAR(ma.distance, mb.distance, 1e-10);
    EXPECT_NEAR(ma.spectral, mb.spectral, 1e-10);
    EXPECT_LE((ma.sin_theta - mb.sin_theta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TwoStep, AutoRankOnFactorModel) {
    const MomentMatrix mm = factor_example(500, 17);
    const TwoStepResult res = two_step_gmm(mm);
    ASSERT_TRUE(res.rank.has_value());
    EXPECT_EQ(res.estimate.r, res.rank->r_tau);
    EXPECT_EQ(res.estimate.r, 2);
}

TEST(TwoStep, QuadruplingSampleSizeHalvesError) {
    std::vector<double> small, large;
    TwoStepOptions opts;
    opts.r = 2;
    for (std::uint64_t b = 0; b < 100; ++b) {
        for (Index n : {Index{400}, Index{1600}}) {
            VectorXd mu(2);
            mu << 2, -2;
            const MatrixXd B = draw_loadings(10, 2, 1234);
            const Simulation s = sample_factor(B, n, mu, 2.0, derive_seed(99, {b, static_cast<std::uint64_t>(n)}));
            const TwoStepResult res = two_step_gmm(materialize(s.data, factor_moments(10, 2.0)), opts);
            (n == 400 ? small : large).push_back(subspace_metrics(res.estimate.U, s.truth.basis).distance);
        }
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return 0.5 * (v[49] + v[50]);
    };
    const double ratio = median(large) / median(small);
    EXPECT_GE(ratio, 0.4);
    EXPECT_LE(ratio, 0.62);
}

// ---- rank estimation -------------------------------------------------------------------

TEST(EstimateRank, CleanGap) {
    VectorXd lam(4);
    lam << 5, 3, 1e-6, 1e-7;
    const MatrixXd V = lam.cwiseSqrt().asDiagonal();
    const RankEstimate r = estimate_rank(V, WeightMatrix::identity(4), 100, 0.01);
    EXPECT_EQ(r.r_tau, 2);
    EXPECT_EQ(r.tau, 0.01);
    ASSERT_EQ(r.rows.size(), 5u);
    EXPECT_TRUE(std::isnan(r.rows[0].lambda));
    EXPECT_NEAR(r.rows[1].lambda, 5.0, 1e-12);
    // k = p has no statistic.
    EXPECT_TRUE(std::isnan(r.rows[4].stat));
    EXPECT_TRUE(std::isnan(r.rows[4].eta));
    // Statistic definition n (p - k) sum_{j>k} lambda_j.
    EXPECT_NEAR(r.rows[2].stat, 100.0 * 2.0 * (1e-6 + 1e-7), 1e-12);
    EXPECT_EQ(r.r_eta, 2);
}

TEST(EstimateRank, DefaultTauAndUndefinedDof) {
    std::mt19937_64 rng(18);
    const MatrixXd V = gaussian(5, 2, rng);
    const RankEstimate r = estimate_rank(V, WeightMatrix::identity(2), 400);
    const SubspaceEstimate e = weighted_eigen(V, WeightMatrix::identity(2), 1);
    EXPECT_NEAR(r.tau, e.eigenvalues.sum() / 5.0 / 20.0, 1e-14);
    for (const auto& row : r.rows) {
        if (row.k >= 2) {
            EXPECT_TRUE(std::isnan(row.stat)) << row.k;
        }
    }
    EXPECT_LE(r.r_tau, 2);
    EXPECT_LE(r.r_eta, 2);
    EXPECT_THROW(estimate_rank(V, WeightMatrix::identity(2), 400, std::nullopt, 1.0), ParameterError);
}

TEST(Chi2RankStatistic, ExactRankAndRotation) {
    std::mt19937_64 rng(19);
    const MatrixXd V = random_orthonormal(6, 2, rng) * gaussian(2, 4, rng);
    const WeightMatrix W = WeightMatrix::full(random_psd(4, rng));
    EXPECT_NEAR(chi2_rank_statistic(V, W, 100, 2), 0.0, 1e-9);
    EXPECT_THROW(chi2_rank_statistic(V, W, 100, 6), DimensionError);

    const MatrixXd V2 = gaussian(6, 4, rng);
    const MatrixXd Q = random_orthonormal(6, 6, rng);
    for (Index k = 0; k < 4; ++k) {
        const double a = chi2_rank_statistic(V2, W, 50, k);
        EXPECT_NEAR(a, chi2_rank_statistic(Q * V2, W, 50, k), 1e-10 * std::max(1.0, a));
    }
}

// ---- metrics ------------------------------------------------------------------------------

TEST(SubspaceMetrics, IdenticalAndOrthogonal) {
    std::mt19937_64 rng(20);
    const MatrixXd U = random_orthonormal(5, 2, rng);
    const SubspaceMetrics same = subspace_metrics(U, U);
    EXPECT_NEAR(same.distance, 0.0, 1e-14);
    EXPECT_LE(same.sin_theta.maxCoeff(), 1e-7);  // sqrt of roundoff

    const SubspaceMetrics ortho = subspace_metrics(MatrixXd::Identity(2, 2).col(1), MatrixXd::Identity(2, 2).col(0));
    EXPECT_NEAR(ortho.distance, std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(ortho.sin_theta(0), 1.0, 1e-15);
    EXPECT_NEAR(ortho.psi_trace, 1.0, 1e-15);
    EXPECT_NEAR(ortho.spectral, 1.0, 1e-15);
    EXPECT_THROW(subspace_metrics(U, MatrixXd::Identity(5, 3)), DimensionError);
}

TEST(SubspaceMetrics, PsiTraceIsHalfSquaredDistance) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 1000; ++trial) {
        const Index p = 2 + static_cast<Index>(trial % 8);
        const Index r = 1 + static_cast<Index>(trial % (p - 1));
        const MatrixXd A = random_orthonormal(p, r, rng);
        const MatrixXd B = random_orthonormal(p, r, rng);
        const SubspaceMetrics m = subspace_metrics(A, B);
        EXPECT_NEAR(m.psi_trace, 0.5 * m.distance * m.distance, 1e-10);
        EXPECT_NEAR(m.distance, projector_distance(A, B), 1e-12);
        // Also 2 ||sin Theta||_F^2 = d^2.
        EXPECT_NEAR(2.0 * m.sin_theta.squaredNorm(), m.distance * m.distance, 1e-10);
        EXPECT_GE(m.sin_theta.minCoeff(), 0.0);
        EXPECT_LE(m.sin_theta.maxCoeff(), 1.0 + 1e-12);
        for (Index k = 1; k < r; ++k) EXPECT_GE(m.sin_theta(k - 1), m.sin_theta(k));
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(A * A.transpose() - B * B.transpose());
        EXPECT_NEAR(m.spectral, es.eigenvalues().cwiseAbs().maxCoeff(), 1e-12);
    }
}

// ---- augmentation --------------------------------------------------------------------------

TEST(AugmentedEigen, ZeroKappaAndAlignedM) {
    std::mt19937_64 rng(22);
    const MatrixXd V = gaussian(6, 4, rng);
    const WeightMatrix W = WeightMatrix::full(random_psd(4, rng));
    const MatrixXd M = random_psd(6, rng);
    const SubspaceEstimate a = augmented_eigen(0.0, M, V, W, 2);
    const SubspaceEstimate b = weighted_eigen(V, W, 2);
    EXPECT_LE((a.U - b.U).norm(), 1e-12);

    const MatrixXd Ustar = random_orthonormal(6, 2, rng);
    const MatrixXd Va = Ustar * gaussian(2, 4, rng);
    VectorXd lam(2);
    lam << 3.0, 1.0;
    const MatrixXd Ma = Ustar * lam.asDiagonal() * Ustar.transpose();
    for (double kappa : {0.5, 10.0}) {
        EXPECT_LE(subspace_metrics(augmented_eigen(kappa, Ma, Va, W, 2).U, Ustar).distance, 1e-10);
    }
    MatrixXd asym = M;
    asym(0, 1) += 1.0;
    EXPECT_THROW(augmented_eigen(1.0, asym, V, W, 2), ParameterError);
    EXPECT_THROW(augmented_eigen(-1.0, M, V, W, 2), ParameterError);
}

// ---- serialization ----------------------------------------------------------------------------

TEST(EstimateJson, RoundTrip) {
    const TwoStepResult res = two_step_gmm(factor_example(300, 23));
    const nlohmann::json j = to_json(res.estimate);
    EXPECT_EQ(j.at("p"), 10);
    EXPECT_EQ(j.at("U").size(), static_cast<std::size_t>(10 * res.estimate.r));
    const SubspaceEstimate back = subspace_estimate_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.U, res.estimate.U);
    EXPECT_EQ(back.eigenvalues, res.estimate.eigenvalues);
    nlohmann::json broken = j;
    broken["r"] = 7;
    EXPECT_THROW(subspace_estimate_from_json(broken), ParseError);
}

TEST(RankTable, CsvShape) {
    const TwoStepResult res = two_step_gmm(factor_example(300, 24));
    const std::string csv = rank_table_csv(*res.rank);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,lambda_k,stat_k,eta_k");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);  // header + k = 0..10
    EXPECT_EQ(csv.find("nan"), std::string::npos);
}
