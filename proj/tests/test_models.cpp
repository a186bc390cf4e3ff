#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "sgmm/error.hpp"
#include "sgmm/models.hpp"
#include "support.hpp"

using namespace sgmm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("sgmm_models_" + name);
}

void expect_orthonormal(const MatrixXd& U) {
    EXPECT_LE((U.transpose() * U - MatrixXd::Identity(U.cols(), U.cols())).norm(), 1e-10);
}

}  // namespace

TEST(GenFactor, ExampleOneShape) {
    VectorXd mu(2);
    mu << 2, -2;
    const Simulation s = gen_factor({500, 10, 2, mu, 2.0}, 11);
    EXPECT_EQ(s.data.n(), 500);
    EXPECT_EQ(s.data.dim(), 10);
    EXPECT_FALSE(s.data.has_response());
    EXPECT_EQ(s.truth.r(), 2);
    expect_orthonormal(s.truth.basis);
    // Truth spans the loadings.
    const MatrixXd& B = s.coefficients;
    const MatrixXd P = s.truth.basis * s.truth.basis.transpose();
    EXPECT_LE((B - P * B).norm(), 1e-10 * B.norm());
}

TEST(GenFactor, NoiselessSamplesLieInSpan) {
    VectorXd mu(3);
    mu << 1, 0.5, -2;
    const Simulation s = gen_factor({300, 7, 3, mu, 0.0}, 5);
    const MatrixXd P = MatrixXd::Identity(7, 7) - s.truth.basis * s.truth.basis.transpose();
    double worst = 0.0;
    for (Index i = 0; i < s.data.n(); ++i) {
        worst = std::max(worst, (P * s.data.x.row(i).transpose()).norm());
    }
    EXPECT_LE(worst, 1e-8);
}

TEST(GenFactor, CovarianceMatchesLoadings) {
    const Simulation s = gen_factor({200000, 4, 1, VectorXd::Zero(1), 1.0}, 99);
    const MatrixXd X = s.data.x;
    const MatrixXd Xc = X.rowwise() - X.colwise().mean();
    const MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(X.rows());
    const MatrixXd& B = s.coefficients;
    const MatrixXd expected = B * B.transpose() + MatrixXd::Identity(4, 4);
    EXPECT_LE((cov - expected).norm() / expected.norm(), 0.05);
}

TEST(GenFactor, Errors) {
    EXPECT_THROW(gen_factor({10, 3, 3, VectorXd{}, 1.0}, 1), DimensionError);
    EXPECT_THROW(gen_factor({0, 3, 1, VectorXd{}, 1.0}, 1), EmptyDatasetError);
    EXPECT_THROW(gen_factor({10, 3, 1, VectorXd{}, -1.0}, 1), ParameterError);
}

TEST(GenFactor, Deterministic) {
    const FactorParams params{50, 6, 2, VectorXd::Constant(2, 1.0), 1.5};
    const Simulation a = gen_factor(params, 42);
    const Simulation b = gen_factor(params, 42);
    EXPECT_EQ(a.data.x, b.data.x);
    EXPECT_EQ(a.truth.basis, b.truth.basis);
    const Simulation c = gen_factor(params, 43);
    EXPECT_NE(a.data.x, c.data.x);
}

TEST(GenMixedLinear, BetaOnSphereAndTruth) {
    const Simulation s = gen_mixed_linear({1000, 10, 2, 4.0, 1.0, 1.0}, 3);
    ASSERT_TRUE(s.data.has_response());
    ASSERT_EQ(s.coefficients.cols(), 2);
    for (Index k = 0; k < 2; ++k) EXPECT_NEAR(s.coefficients.col(k).norm(), 4.0, 1e-10);
    expect_orthonormal(s.truth.basis);
    EXPECT_EQ(s.truth.r(), 2);
    for (int label : s.labels) EXPECT_TRUE(label == 0 || label == 1);
}

TEST(GenMixedLinear, SingleComponentResidualVariance) {
    const Simulation s = gen_mixed_linear({10000, 5, 1, 2.0, 1.5, 1.0}, 8);
    const VectorXd resid = *s.data.y - MatrixXd(s.data.x) * s.coefficients.col(0) -
                           VectorXd::Constant(s.data.n(), s.intercepts(0));
    const double mean = resid.mean();
    const double var = (resid.array() - mean).square().sum() / (resid.size() - 1);
    EXPECT_NEAR(var / (1.5 * 1.5), 1.0, 0.1);
}

TEST(GenMixedLinear, SecondMomentIdentityAgainstIsserlisOracle) {
    // Zero intercepts and noise: E[y^2 (x x^T - I)] = 2 sum_k pi_k beta_k beta_k^T.
    const Index p = 4;
    const Simulation s = gen_mixed_linear({200000, p, 2, 1.0, 0.0, 0.0}, 21);
    const MatrixXd X = s.data.x;
    const VectorXd& y = *s.data.y;
    MatrixXd mc = MatrixXd::Zero(p, p);
    for (Index i = 0; i < X.rows(); ++i) {
        const VectorXd xi = X.row(i).transpose();
        mc += y(i) * y(i) * (xi * xi.transpose() - MatrixXd::Identity(p, p));
    }
    mc /= static_cast<double>(X.rows());

    // Brute force over Gaussian fourth moments:
    // E[x_a x_b x_i x_j] = d_ab d_ij + d_ai d_bj + d_aj d_bi.
    auto d = [](Index u, Index v) { return u == v ? 1.0 : 0.0; };
    MatrixXd oracle = MatrixXd::Zero(p, p);
    for (Index k = 0; k < 2; ++k) {
        const VectorXd b = s.coefficients.col(k);
        for (Index i = 0; i < p; ++i) {
            for (Index j = 0; j < p; ++j) {
                double fourth = 0.0, second = 0.0;
                for (Index a = 0; a < p; ++a) {
                    for (Index c = 0; c < p; ++c) {
                        fourth += b(a) * b(c) *
                                  (d(a, c) * d(i, j) + d(a, i) * d(c, j) + d(a, j) * d(c, i));
                        second += b(a) * b(c) * d(a, c) * d(i, j);
                    }
                }
                oracle(i, j) += 0.5 * (fourth - second);
            }
        }
    }
    MatrixXd identity = MatrixXd::Zero(p, p);
    for (Index k = 0; k < 2; ++k) {
        identity += 2.0 * 0.5 * s.coefficients.col(k) * s.coefficients.col(k).transpose();
    }
    EXPECT_LE((oracle - identity).norm(), 1e-12);
    EXPECT_LE((mc - oracle).norm() / oracle.norm(), 0.05);
}

TEST(GenMixedLogistic, BinaryResponse) {
    const Simulation s = gen_mixed_logistic({2000, 6, 3, 3.0, 1.0, 1.0}, 4);
    for (Index i = 0; i < s.data.n(); ++i) {
        const double v = (*s.data.y)(i);
        EXPECT_TRUE(v == 0.0 || v == 1.0);
    }
    EXPECT_EQ(s.truth.r(), 3);
}

TEST(GenMixedLogistic, SymmetricCaseHasHalfMean) {
    // beta = 0 and beta_0 = 0 make every draw a fair coin.
    const Simulation s = gen_mixed_logistic({10000, 3, 1, 0.0, 1.0, 0.0}, 12);
    const double mean = s.data.y->mean();
    EXPECT_LE(std::abs(mean - 0.5), 3.0 * std::sqrt(0.25 / 10000));
}

TEST(GenMixedLogistic, SteinIdentityAgainstQuadrature) {
    // E[y (x x^T - I)] = sum_k pi_k beta_k beta_k^T E[phi''(x^T beta_k + beta_k0)].
    const Index p = 3;
    const Simulation s = gen_mixed_logistic({200000, p, 2, 1.5, 1.0, 1.0}, 31);
    const MatrixXd X = s.data.x;
    const VectorXd& y = *s.data.y;
    MatrixXd mc = MatrixXd::Zero(p, p);
    MatrixXd mc2 = MatrixXd::Zero(p, p);
    for (Index i = 0; i < X.rows(); ++i) {
        const VectorXd xi = X.row(i).transpose();
        const MatrixXd term = y(i) * (xi * xi.transpose() - MatrixXd::Identity(p, p));
        mc += term;
        mc2 += term.cwiseProduct(term);
    }
    const double n = static_cast<double>(X.rows());
    mc /= n;
    const MatrixXd se = ((mc2 / n - mc.cwiseProduct(mc)) / n).cwiseSqrt();

    auto phi2 = [](double t) {
        const double f = 1.0 / (1.0 + std::exp(-t));
        return f * (1.0 - f) * (1.0 - 2.0 * f);
    };
    MatrixXd oracle = MatrixXd::Zero(p, p);
    for (Index k = 0; k < 2; ++k) {
        const VectorXd b = s.coefficients.col(k);
        const double b0 = s.intercepts(k);
        const double curvature =
            testkit::gaussian_expectation([&](double z) { return phi2(b.norm() * z + b0); });
        oracle += 0.5 * curvature * b * b.transpose();
    }
    ASSERT_GT(oracle.norm(), 1e-3);
    // Entrywise agreement within four Monte Carlo standard errors.
    for (Index i = 0; i < p; ++i) {
        for (Index j = 0; j < p; ++j) {
            EXPECT_LE(std::abs(mc(i, j) - oracle(i, j)), 4.0 * se(i, j)) << i << "," << j;
        }
    }
}

TEST(GenIndexModel, NoiselessOriginRow) {
    VectorXd x = VectorXd::Zero(5);
    EXPECT_DOUBLE_EQ(index_response(IndexVariant::B, x, 0.7, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(index_response(IndexVariant::A, x, 0.0, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(index_response(IndexVariant::C, x, 0.0, 0.5), 0.0);
}

TEST(GenIndexModel, TruthIsFirstTwoAxes) {
    const Simulation s = gen_index_model({400, 10, IndexVariant::A, 0.5}, 2);
    MatrixXd expected = MatrixXd::Zero(10, 2);
    expected(0, 0) = 1.0;
    expected(1, 1) = 1.0;
    EXPECT_LE(testkit::projector_distance(s.truth.basis, expected), 1e-12);
    EXPECT_THROW(gen_index_model({10, 1, IndexVariant::A, 0.5}, 2), DimensionError);
    EXPECT_EQ(parse_index_variant("C"), IndexVariant::C);
    EXPECT_THROW(parse_index_variant("D"), ParameterError);
}

TEST(GenIndexModel, ModelCFirstMomentVanishes) {
    // Every term of Model C is even in x, so E[y x] = 0 by symmetry; the
    // quadrature confirms E[cos(2Z) Z] = E[cos(Z) Z] = 0 exactly.
    EXPECT_NEAR(testkit::gaussian_expectation([](double z) { return std::cos(2 * z) * z; }), 0.0,
                1e-14);
    const Index n = 200000;
    const Simulation s = gen_index_model({n, 4, IndexVariant::C, 0.5}, 17);
    const MatrixXd X = s.data.x;
    const VectorXd& y = *s.data.y;
    for (Index j = 0; j < 4; ++j) {
        const VectorXd prod = X.col(j).cwiseProduct(y);
        const double mean = prod.mean();
        const double sd = std::sqrt((prod.array() - mean).square().sum() / (n - 1));
        EXPECT_LE(std::abs(mean), 3.0 * sd / std::sqrt(static_cast<double>(n))) << "column " << j;
    }
}

TEST(CanonicalBasis, SignAndOrder) {
    MatrixXd B(3, 2);
    B << -3, 0, 0, 1, 0, 0;
    const GroundTruth t = canonical_basis(B);
    ASSERT_EQ(t.r(), 2);
    EXPECT_NEAR(t.basis(0, 0), 1.0, 1e-15);  // largest singular value first, sign positive
    EXPECT_NEAR(t.basis(1, 1), 1.0, 1e-15);
}

TEST(BlockDesign, ShapesAndSubspace) {
    const BlockDesign d = draw_block_design(8, 5, 2, 3);
    EXPECT_EQ(d.m(), 5);
    expect_orthonormal(d.truth.basis);
    const MatrixXd P = d.truth.basis * d.truth.basis.transpose();
    EXPECT_LE((d.mu - P * d.mu).norm(), 1e-12 * d.mu.norm());
    const Dataset x = sample_block_design(d, 20, 4);
    EXPECT_EQ(x.dim(), 40);
}

TEST(Csv, SmokeParse) {
    const auto path = temp_file("smoke.csv");
    {
        std::ofstream out(path);
        out << "a,b,y\n1,2,3\r\n4,5,6\n7,8,9\n";
    }
    const Dataset d = load_csv(path.string(), std::string("y"));
    EXPECT_EQ(d.n(), 3);
    EXPECT_EQ(d.dim(), 2);
    EXPECT_DOUBLE_EQ((*d.y)(2), 9.0);
    EXPECT_DOUBLE_EQ(d.x(1, 1), 5.0);
    const Dataset all = load_csv(path.string());
    EXPECT_EQ(all.dim(), 3);
    EXPECT_FALSE(all.has_response());
}

TEST(Csv, ErrorsNameTheCell) {
    const auto path = temp_file("blank.csv");
    {
        std::ofstream out(path);
        out << "a,b\n1,2\n3,\n";
    }
    try {
        load_csv(path.string());
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
    }
    {
        std::ofstream out(path);
        out << "a,b\n1,x\n";
    }
    EXPECT_THROW(load_csv(path.string()), ParseError);
    EXPECT_THROW(load_csv(path.string(), std::string("zz")), ParseError);
    EXPECT_THROW(load_csv((fs::temp_directory_path() / "sgmm_missing.csv").string()), IoError);
}

TEST(Csv, RoundTripIsBitwise) {
    const Simulation s = gen_mixed_linear({200, 6, 2, 4.0, 1.0, 1.0}, 77);
    const auto path = temp_file("round.csv");
    write_csv(path.string(), s.data);
    const Dataset back = load_csv(path.string(), std::string("y"));
    EXPECT_EQ(back.x, s.data.x);
    EXPECT_EQ(*back.y, *s.data.y);
}
