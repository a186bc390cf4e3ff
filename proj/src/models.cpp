#include "sgmm/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sgmm/csv.hpp"
#include "sgmm/error.hpp"
#include "sgmm/rng.hpp"

namespace sgmm {

namespace {

void require_samples(Index n) {
    if (n < 1) {
        throw EmptyDatasetError("sample count must be at least 1");
    }
}

constexpr double kCollinearTolerance = 1e-8;
constexpr int kMaxRedraws = 64;

/// Regression vectors on the radius sphere plus intercepts, re-drawn from
/// fresh substreams while the vectors are numerically collinear.
void draw_regression_parameters(const MixtureParams& params, std::uint64_t seed,
                                Simulation& sim) {
    const Index p = params.p;
    const Index K = params.K;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        const std::uint64_t s =
            attempt == 0 ? derive_seed(seed, {static_cast<std::uint64_t>(Stage::parameters)})
                         : derive_seed(seed, {static_cast<std::uint64_t>(Stage::redraw),
                                              static_cast<std::uint64_t>(attempt)});
        Rng rng(s);
        MatrixXd beta(p, K);
        VectorXd intercepts(K);
        for (Index k = 0; k < K; ++k) {
            VectorXd g(p);
            for (Index j = 0; j < p; ++j) g(j) = rng.normal();
            beta.col(k) = params.beta_radius * g / g.norm();
            intercepts(k) = params.intercept_scale * rng.normal();
        }
        if (params.beta_radius > 0.0) {
            Eigen::JacobiSVD<MatrixXd> svd(beta);
            const VectorXd& sv = svd.singularValues();
            if (sv(K - 1) < kCollinearTolerance * sv(0)) {
                std::ostringstream msg;
                msg << "regression vectors numerically collinear on draw " << attempt
                    << "; re-drawing";
                sim.notes.push_back(msg.str());
                continue;
            }
            sim.truth = canonical_basis(beta);
        } else {
            sim.truth.basis = MatrixXd(p, 0);
        }
        sim.coefficients = std::move(beta);
        sim.intercepts = std::move(intercepts);
        return;
    }
    throw DegenerateError("could not draw linearly independent regression vectors");
}

void check_mixture(const MixtureParams& params) {
    require_samples(params.n);
    if (params.K < 1 || params.K > params.p) {
        throw DimensionError("mixture count K must satisfy 1 <= K <= p");
    }
    if (params.beta_radius < 0.0 || params.sigma < 0.0 || params.intercept_scale < 0.0) {
        throw ParameterError("radius, noise scale and intercept scale must be nonnegative");
    }
}

template <typename Response>
Simulation gen_mixture(const MixtureParams& params, std::uint64_t seed, Response response) {
    check_mixture(params);
    Simulation sim;
    draw_regression_parameters(params, seed, sim);

    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stage::samples)}));
    RowMatrix x(params.n, params.p);
    VectorXd y(params.n);
    sim.labels.resize(params.n);
    for (Index i = 0; i < params.n; ++i) {
        for (Index j = 0; j < params.p; ++j) x(i, j) = rng.normal();
        const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(params.K)));
        sim.labels[i] = k;
        const double eta = x.row(i).dot(sim.coefficients.col(k)) + sim.intercepts(k);
        y(i) = response(eta, rng);
    }
    sim.data = make_dataset(std::move(x), std::move(y));
    return sim;
}

}  // namespace

void Dataset::validate() const {
    if (x.rows() < 1) {
        throw EmptyDatasetError("dataset has no samples");
    }
    if (y && y->size() != x.rows()) {
        throw DimensionError("response length does not match sample count");
    }
    if (!x.allFinite() || (y && !y->allFinite())) {
        throw NumericalError("dataset contains non-finite values");
    }
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
    Dataset out;
    out.x.resize(static_cast<Index>(rows.size()), x.cols());
    if (y) out.y = VectorXd(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(static_cast<Index>(i)) = x.row(rows[i]);
        if (y) (*out.y)(static_cast<Index>(i)) = (*y)(rows[i]);
    }
    return out;
}

Dataset make_dataset(RowMatrix x, std::optional<VectorXd> y) {
    Dataset d{std::move(x), std::move(y)};
    d.validate();
    return d;
}

GroundTruth canonical_basis(const MatrixXd& spanning) {
    if (spanning.cols() == 0) {
        return GroundTruth{MatrixXd(spanning.rows(), 0)};
    }
    Eigen::JacobiSVD<MatrixXd> svd(spanning, Eigen::ComputeThinU);
    const VectorXd& sv = svd.singularValues();
    const double tol = static_cast<double>(std::max(spanning.rows(), spanning.cols())) *
                       std::numeric_limits<double>::epsilon() * sv(0);
    Index rank = 0;
    while (rank < sv.size() && sv(rank) > tol) ++rank;
    MatrixXd basis = svd.matrixU().leftCols(rank);
    for (Index k = 0; k < rank; ++k) {
        Index arg = 0;
        basis.col(k).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, k) < 0.0) basis.col(k) *= -1.0;
    }
    return GroundTruth{std::move(basis)};
}

MatrixXd draw_loadings(Index p, Index r, std::uint64_t seed) {
    Rng rng(seed);
    MatrixXd B(p, r);
    for (Index j = 0; j < r; ++j) {
        for (Index i = 0; i < p; ++i) B(i, j) = rng.normal();
    }
    return B;
}

Simulation sample_factor(const MatrixXd& loadings, Index n, const VectorXd& mu_z, double sigma,
                         std::uint64_t seed) {
    require_samples(n);
    const Index p = loadings.rows();
    const Index r = loadings.cols();
    if (r < 1 || r >= p) {
        throw DimensionError("factor model requires 1 <= r < p");
    }
    if (sigma < 0.0) {
        throw ParameterError("noise scale sigma must be nonnegative");
    }
    const VectorXd mu = mu_z.size() == 0 ? VectorXd::Zero(r) : mu_z;
    if (mu.size() != r) {
        throw DimensionError("mu_z must have length r");
    }

    Simulation sim;
    sim.coefficients = loadings;
    sim.truth = canonical_basis(loadings);
    Rng rng(seed);
    RowMatrix x(n, p);
    VectorXd z(r);
    VectorXd eps(p);
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < r; ++k) z(k) = mu(k) + rng.normal();
        for (Index j = 0; j < p; ++j) eps(j) = rng.normal();
        x.row(i) = (loadings * z + sigma * eps).transpose();
    }
    sim.data = make_dataset(std::move(x));
    return sim;
}

Simulation gen_factor(const FactorParams& params, std::uint64_t seed) {
    require_samples(params.n);
    if (params.r < 1 || params.r >= params.p) {
        throw DimensionError("factor model requires 1 <= r < p");
    }
    const MatrixXd B = draw_loadings(
        params.p, params.r, derive_seed(seed, {static_cast<std::uint64_t>(Stage::parameters)}));
    return sample_factor(B, params.n, params.mu_z, params.sigma,
                         derive_seed(seed, {static_cast<std::uint64_t>(Stage::samples)}));
}

Simulation gen_mixed_linear(const MixtureParams& params, std::uint64_t seed) {
    const double sigma = params.sigma;
    return gen_mixture(params, seed,
                       [sigma](double eta, Rng& rng) { return eta + sigma * rng.normal(); });
}

Simulation gen_mixed_logistic(const MixtureParams& params, std::uint64_t seed) {
    return gen_mixture(params, seed, [](double eta, Rng& rng) {
        const double prob = 1.0 / (1.0 + std::exp(-eta));
        return rng.uniform() < prob ? 1.0 : 0.0;
    });
}

IndexVariant parse_index_variant(const std::string& name) {
    if (name == "A" || name == "a") return IndexVariant::A;
    if (name == "B" || name == "b") return IndexVariant::B;
    if (name == "C" || name == "c") return IndexVariant::C;
    throw ParameterError("unknown index-model variant '" + name + "' (expected A, B or C)");
}

std::string to_string(IndexVariant v) {
    switch (v) {
        case IndexVariant::A: return "A";
        case IndexVariant::B: return "B";
        case IndexVariant::C: return "C";
    }
    return "?";
}

double index_response(IndexVariant variant, const Eigen::Ref<const VectorXd>& x, double eps,
                      double noise_scale) {
    const double a = x(0);
    const double b = x(1);
    double g = std::cos(2.0 * a);
    switch (variant) {
        case IndexVariant::A: g -= std::sin(b); break;
        case IndexVariant::B: g -= b; break;
        case IndexVariant::C: g -= std::cos(b); break;
    }
    return g + noise_scale * eps;
}

Simulation gen_index_model(const IndexParams& params, std::uint64_t seed) {
    require_samples(params.n);
    if (params.p < 2) {
        throw DimensionError("index model requires p >= 2");
    }
    if (params.noise_scale < 0.0) {
        throw ParameterError("noise scale must be nonnegative");
    }
    Simulation sim;
    sim.coefficients = MatrixXd::Identity(params.p, 2);
    sim.truth.basis = MatrixXd::Identity(params.p, 2);

    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stage::samples)}));
    RowMatrix x(params.n, params.p);
    VectorXd y(params.n);
    VectorXd row(params.p);
    for (Index i = 0; i < params.n; ++i) {
        for (Index j = 0; j < params.p; ++j) row(j) = rng.normal();
        x.row(i) = row.transpose();
        y(i) = index_response(params.variant, row, rng.normal(), params.noise_scale);
    }
    sim.data = make_dataset(std::move(x), std::move(y));
    return sim;
}

BlockDesign draw_block_design(Index p, Index m, Index r, std::uint64_t seed) {
    if (r < 1 || r >= p) throw DimensionError("block design requires 1 <= r < p");
    if (m < 1) throw DimensionError("block design requires m >= 1");
    Rng rng(seed);
    BlockDesign d;
    d.p = p;
    d.r = r;
    MatrixXd G(p, r);
    for (Index j = 0; j < r; ++j) {
        for (Index i = 0; i < p; ++i) G(i, j) = rng.normal();
    }
    d.truth = canonical_basis(G);
    d.L = MatrixXd::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
        d.L(i, i) = 1.0 + rng.uniform();
        for (Index j = 0; j < i; ++j) d.L(i, j) = 0.5 * rng.normal();
    }
    MatrixXd c(r, m);
    for (Index l = 0; l < m; ++l) {
        for (Index k = 0; k < r; ++k) c(k, l) = 2.0 * rng.normal();
    }
    d.mu = d.truth.basis * c;
    return d;
}

Dataset sample_block_design(const BlockDesign& design, Index n, std::uint64_t seed) {
    require_samples(n);
    Rng rng(seed);
    RowMatrix x(n, design.m() * design.p);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    }
    return make_dataset(std::move(x));
}

Dataset load_csv(const std::string& path, const std::optional<std::string>& response_column) {
    const csv::NumericTable table = csv::read_numeric(path);
    std::optional<std::size_t> ycol;
    if (response_column) {
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (table.header[c] == *response_column) ycol = c;
        }
        if (!ycol) {
            throw ParseError(path + ": response column '" + *response_column + "' not found");
        }
    }
    if (table.rows.empty()) {
        throw EmptyDatasetError(path + ": no data rows");
    }
    const Index n = static_cast<Index>(table.rows.size());
    const Index p = static_cast<Index>(table.header.size()) - (ycol ? 1 : 0);
    RowMatrix x(n, p);
    std::optional<VectorXd> y;
    if (ycol) y = VectorXd(n);
    for (Index i = 0; i < n; ++i) {
        Index j = 0;
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            const double v = table.rows[static_cast<std::size_t>(i)][c];
            if (ycol && c == *ycol) {
                (*y)(i) = v;
            } else {
                x(i, j++) = v;
            }
        }
    }
    return make_dataset(std::move(x), std::move(y));
}

void write_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write '" + path + "'");
    }
    for (Index j = 0; j < data.dim(); ++j) {
        out << (j ? "," : "") << 'x' << (j + 1);
    }
    if (data.y) out << ",y";
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        for (Index j = 0; j < data.dim(); ++j) {
            out << (j ? "," : "") << csv::format_double(data.x(i, j));
        }
        if (data.y) out << ',' << csv::format_double((*data.y)(i));
        out << '\n';
    }
    if (!out) {
        throw IoError("write failed for '" + path + "'");
    }
}

}  // namespace sgmm
