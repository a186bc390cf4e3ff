#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sgmm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n samples of covariates (one per row) and an optional scalar response.
struct Dataset {
    RowMatrix x;
    std::optional<VectorXd> y;

    Index n() const { return x.rows(); }
    Index dim() const { return x.cols(); }
    bool has_response() const { return y.has_value(); }

    /// Throws EmptyDatasetError / DimensionError / NumericalError when the
    /// invariants (n >= 1, |y| = n, all entries finite) do not hold.
    void validate() const;

    /// Copy holding rows `rows` in the given order (duplicates allowed).
    Dataset subset(const std::vector<Index>& rows) const;
};

Dataset make_dataset(RowMatrix x, std::optional<VectorXd> y = std::nullopt);

/// Orthonormal basis of the target subspace.
struct GroundTruth {
    MatrixXd basis;
    Index r() const { return basis.cols(); }
    Index p() const { return basis.rows(); }
};

/// Left singular vectors of `spanning` for its nonzero singular values, in
/// descending singular-value order, each column signed so that its
/// largest-magnitude entry is positive.
GroundTruth canonical_basis(const MatrixXd& spanning);

/// A generated dataset with the parameters that produced it.
struct Simulation {
    Dataset data;
    GroundTruth truth;
    MatrixXd coefficients;   // B (factor), [beta_1 ... beta_K] (mixtures), [e1 e2] (index)
    VectorXd intercepts;     // beta_k0 for mixtures, empty otherwise
    std::vector<int> labels; // latent component of each sample (mixtures only)
    std::vector<std::string> notes;
};

// ---- factor model  x = B z + eps ---------------------------------------

struct FactorParams {
    Index n = 500;
    Index p = 10;
    Index r = 2;
    VectorXd mu_z;  // length r; empty means zero
    double sigma = 2.0;
};

/// p x r loading matrix with i.i.d. N(0,1) entries.
MatrixXd draw_loadings(Index p, Index r, std::uint64_t seed);

/// Samples z ~ N(mu_z, I_r), eps ~ N(0, sigma^2 I_p) for a fixed loading matrix.
Simulation sample_factor(const MatrixXd& loadings, Index n, const VectorXd& mu_z, double sigma,
                         std::uint64_t seed);

/// Draws B from `seed` then samples. The loadings and the samples come from
/// separate substreams of the seed.
Simulation gen_factor(const FactorParams& params, std::uint64_t seed);

// ---- mixtures of linear / logistic regressions --------------------------

struct MixtureParams {
    Index n = 1000;
    Index p = 10;
    Index K = 2;
    double beta_radius = 4.0;
    double sigma = 1.0;           // noise scale (linear model only)
    double intercept_scale = 1.0; // beta_k0 ~ N(0, intercept_scale^2)
};

/// y = x^T beta_z + beta_z0 + sigma * eps with z uniform on [K].
Simulation gen_mixed_linear(const MixtureParams& params, std::uint64_t seed);

/// P(y = 1 | x, z = k) = logistic(x^T beta_k + beta_k0).
Simulation gen_mixed_logistic(const MixtureParams& params, std::uint64_t seed);

// ---- multiple index models ----------------------------------------------

enum class IndexVariant { A, B, C };

IndexVariant parse_index_variant(const std::string& name);
std::string to_string(IndexVariant v);

/// Response of the chosen variant at covariate x with standard-normal draw eps:
///   A: cos(2 x1) - sin(x2) + s eps
///   B: cos(2 x1) - x2      + s eps
///   C: cos(2 x1) - cos(x2) + s eps
double index_response(IndexVariant variant, const Eigen::Ref<const VectorXd>& x, double eps,
                      double noise_scale);

struct IndexParams {
    Index n = 400;
    Index p = 10;
    IndexVariant variant = IndexVariant::A;
    double noise_scale = 0.5;
};

Simulation gen_index_model(const IndexParams& params, std::uint64_t seed);

// ---- block design ------------------------------------------------------------

/// Moment functions of the form f_l = mu_l + sum_k L(l, k) xi_k with
/// xi_k ~ N(0, I_p) independent and every mu_l inside a fixed r-dimensional
/// subspace. The projected covariance of such moments is (p - r) L L^T.
struct BlockDesign {
    Index p = 0;
    Index r = 0;
    MatrixXd L;   // m x m, full rank
    MatrixXd mu;  // p x m, columns in span(truth.basis)
    GroundTruth truth;

    Index m() const { return L.rows(); }
    MatrixXd sigma_star() const { return static_cast<double>(p - r) * L * L.transpose(); }
};

/// L lower triangular with diagonal in [1, 2] and N(0, 1/4) entries below;
/// mu_l = U* c_l with c_l ~ N(0, 4 I_r).
BlockDesign draw_block_design(Index p, Index m, Index r, std::uint64_t seed);

/// Each row stacks xi_1 .. xi_m, so the covariate dimension is m p.
Dataset sample_block_design(const BlockDesign& design, Index n, std::uint64_t seed);

// ---- CSV ------------------------------------------------------------------

/// Reads a header + numeric table. Every column except `response_column`
/// becomes a covariate.
Dataset load_csv(const std::string& path, const std::optional<std::string>& response_column = {});

/// Writes x1..xp[,y] with 17 significant digits and LF line endings.
void write_csv(const std::string& path, const Dataset& data);

}  // namespace sgmm
