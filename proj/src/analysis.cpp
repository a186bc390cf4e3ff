#include <cmath>
#include <exception>
#include <sstream>

#include "sgmm/csv.hpp"
#include "sgmm/error.hpp"
#include "sgmm/harness.hpp"
#include "sgmm/rng.hpp"

namespace sgmm {

namespace {

MatrixXd centered(const RowMatrix& x) {
    const MatrixXd X = x;
    return X.rowwise() - X.colwise().mean();
}

std::vector<Index> resample_rows(Index n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (auto& r : rows) r = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    return rows;
}

}  // namespace

BootstrapResult bootstrap(const Dataset& data, const MomentFunctionSet& set,
                          const BootstrapOptions& options) {
    data.validate();
    if (options.resamples < 1) throw ParameterError("bootstrap needs at least one resample");
    const MethodSpec method = parse_method(options.method);

    auto run = [&](std::shared_ptr<const Dataset> d) {
        const MomentMatrix mm = materialize(d, set);
        MethodInput in;
        in.data = d.get();
        in.moments = &mm;
        in.r = options.r;
        in.delta = options.delta;
        return run_method(method, in).estimate;
    };

    BootstrapResult out;
    out.full_estimate = run(std::make_shared<const Dataset>(data));
    out.reference = options.truth ? *options.truth : out.full_estimate.U;
    if (out.reference.rows() != data.dim() && set.p() != out.reference.rows()) {
        throw DimensionError("reference basis has the wrong row count");
    }

    const Index n = data.n();
    const int B = options.resamples;
    out.rows.resize(static_cast<std::size_t>(B));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(B));
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < B; ++b) {
        try {
            std::vector<Index> rows;
            if (options.identity_resample) {
                rows.resize(static_cast<std::size_t>(n));
                for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
            } else {
                rows = resample_rows(
                    n, derive_seed(options.seed, {static_cast<std::uint64_t>(Stage::resample),
                                                  static_cast<std::uint64_t>(b)}));
            }
            const auto d = std::make_shared<const Dataset>(data.subset(rows));
            const SubspaceMetrics m = subspace_metrics(run(d).U, out.reference);
            out.rows[static_cast<std::size_t>(b)] =
                BootstrapRow{b, m.distance, m.distance * m.distance, m.spectral, m.spectral * m.spectral};
        } catch (...) {
            errors[static_cast<std::size_t>(b)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    double sum = 0.0;
    for (const auto& r : out.rows) sum += r.distance;
    out.mean_distance = sum / B;
    double ss = 0.0;
    for (const auto& r : out.rows) ss += (r.distance - out.mean_distance) * (r.distance - out.mean_distance);
    out.sd_distance = B > 1 ? std::sqrt(ss / (B - 1)) : 0.0;
    return out;
}

std::string bootstrap_csv(const BootstrapResult& result) {
    std::ostringstream out;
    out << "resample,distance,distance_sq,spectral,spectral_sq\n";
    for (const auto& r : result.rows) {
        out << r.resample << ',' << csv::format_double(r.distance) << ','
            << csv::format_double(r.distance_sq) << ',' << csv::format_double(r.spectral) << ','
            << csv::format_double(r.spectral_sq) << '\n';
    }
    return out.str();
}

Dataset center(const Dataset& data) {
    data.validate();
    Dataset out;
    out.x = centered(data.x);
    if (data.y) out.y = data.y->array() - data.y->mean();
    return out;
}

Dataset whiten(const Dataset& data) {
    data.validate();
    if (data.n() < 2) throw EmptyDatasetError("whitening needs at least two samples");
    const MatrixXd Xc = centered(data.x);
    const MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(data.n() - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    const VectorXd& ev = es.eigenvalues();
    if (!(ev(0) > 1e-12 * ev(ev.size() - 1))) {
        throw DegenerateError("sample covariance is singular; cannot whiten");
    }
    const MatrixXd inv_sqrt =
        es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    Dataset out;
    out.x = Xc * inv_sqrt;
    if (data.y) out.y = data.y->array() - data.y->mean();
    return out;
}

double evaluate_projection_r2(const Dataset& data, const MatrixXd& directions, int degree) {
    data.validate();
    if (!data.y) throw ParameterError("R^2 evaluation needs a response");
    if (degree != 1 && degree != 2) throw ParameterError("degree must be 1 or 2");
    const Index k = directions.cols();
    if (k < 1) throw DimensionError("need at least one direction");
    if (directions.rows() != data.dim()) throw DimensionError("directions have the wrong row count");
    const Index n = data.n();
    const Index terms = 1 + k + (degree == 2 ? k * (k + 1) / 2 : 0);
    if (n <= terms) {
        std::ostringstream msg;
        msg << "R^2 fit needs more samples (" << n << ") than regression terms (" << terms << ")";
        throw ParameterError(msg.str());
    }
    const MatrixXd Z = MatrixXd(data.x) * directions;
    MatrixXd design(n, terms);
    design.col(0).setOnes();
    design.middleCols(1, k) = Z;
    Index at = 1 + k;
    if (degree == 2) {
        for (Index a = 0; a < k; ++a) {
            for (Index b = a; b < k; ++b) design.col(at++) = Z.col(a).cwiseProduct(Z.col(b));
        }
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
    if (qr.rank() < terms) throw DegenerateError("rank-deficient design in R^2 fit");
    const VectorXd& y = *data.y;
    const VectorXd resid = y - design * qr.solve(y);
    const double sst = (y.array() - y.mean()).square().sum();
    if (!(sst > 0.0)) throw DegenerateError("response has zero variance");
    return 1.0 - resid.squaredNorm() / sst;
}

}  // namespace sgmm
