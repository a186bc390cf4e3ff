#include "sgmm/kernels.hpp"

#include <exception>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sgmm::kernels {

namespace {

std::string describe(Index sample, Index column) {
    std::ostringstream msg;
    msg << "non-finite moment evaluation at sample " << sample << ", column " << column;
    return msg.str();
}

void check_finite(const MatrixXd& F, Index i) {
    if (F.allFinite()) return;
    for (Index l = 0; l < F.cols(); ++l) {
        if (!F.col(l).allFinite()) throw NonFiniteEvaluation(i, l);
    }
}

/// Keeps the failure with the lowest sample index so the reported error does
/// not depend on thread scheduling.
class FirstFailure {
public:
    void record(Index sample, std::exception_ptr e) {
#pragma omp critical(sgmm_first_failure)
        {
            if (sample < sample_) {
                sample_ = sample;
                error_ = std::move(e);
            }
        }
    }
    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
    }

private:
    Index sample_ = std::numeric_limits<Index>::max();
    std::exception_ptr error_;
};

MatrixXd tree_sum(std::vector<MatrixXd>& parts, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return std::move(parts[lo]);
    const std::size_t mid = lo + (hi - lo) / 2;
    MatrixXd left = tree_sum(parts, lo, mid);
    left += tree_sum(parts, mid, hi);
    return left;
}

Index chunk_count(Index n) { return (n + kChunk - 1) / kChunk; }

void accumulate_projected(const MatrixXd& F, const MatrixXd& U0, MatrixXd& R, MatrixXd& acc) {
    if (U0.cols() > 0) {
        R.noalias() = F - U0 * (U0.transpose() * F);
    } else {
        R = F;
    }
    acc.selfadjointView<Eigen::Lower>().rankUpdate(R.transpose());
}

MatrixXd mirror_lower(MatrixXd acc) {
    acc.triangularView<Eigen::StrictlyUpper>() = acc.transpose();
    return acc;
}

void check_pilot(const SampleSource& src, const MatrixXd& U0) {
    if (U0.rows() != src.p()) {
        throw DimensionError("pilot basis has wrong row count");
    }
}

}  // namespace

NonFiniteEvaluation::NonFiniteEvaluation(Index s, Index c)
    : NumericalError(describe(s, c)), sample(s), column(c) {}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace serial {

MatrixXd moment_mean(const SampleSource& src) {
    const Index n = src.n();
    MatrixXd acc = MatrixXd::Zero(src.p(), src.m());
    MatrixXd F(src.p(), src.m());
    for (Index i = 0; i < n; ++i) {
        src.sample(i, F);
        check_finite(F, i);
        acc += F;
    }
    return acc / static_cast<double>(n);
}

MatrixXd projected_gram(const SampleSource& src, const MatrixXd& U0) {
    check_pilot(src, U0);
    const Index n = src.n();
    MatrixXd acc = MatrixXd::Zero(src.m(), src.m());
    MatrixXd F(src.p(), src.m());
    MatrixXd R(src.p(), src.m());
    for (Index i = 0; i < n; ++i) {
        src.sample(i, F);
        accumulate_projected(F, U0, R, acc);
    }
    return mirror_lower(std::move(acc)) / static_cast<double>(n);
}

}  // namespace serial

namespace parallel {

MatrixXd moment_mean(const SampleSource& src) {
    const Index n = src.n();
    const Index chunks = chunk_count(n);
    std::vector<MatrixXd> partial(static_cast<std::size_t>(chunks));
    FirstFailure failure;
#pragma omp parallel
    {
        MatrixXd F(src.p(), src.m());
#pragma omp for schedule(static)
        for (Index c = 0; c < chunks; ++c) {
            MatrixXd acc = MatrixXd::Zero(src.p(), src.m());
            const Index end = std::min(n, (c + 1) * kChunk);
            for (Index i = c * kChunk; i < end; ++i) {
                try {
                    src.sample(i, F);
                    check_finite(F, i);
                } catch (...) {
                    failure.record(i, std::current_exception());
                    break;
                }
                acc += F;
            }
            partial[static_cast<std::size_t>(c)] = std::move(acc);
        }
    }
    failure.rethrow();
    return tree_sum(partial, 0, partial.size()) / static_cast<double>(n);
}

MatrixXd projected_gram(const SampleSource& src, const MatrixXd& U0) {
    check_pilot(src, U0);
    const Index n = src.n();
    const Index chunks = chunk_count(n);
    std::vector<MatrixXd> partial(static_cast<std::size_t>(chunks));
    FirstFailure failure;
#pragma omp parallel
    {
        MatrixXd F(src.p(), src.m());
        MatrixXd R(src.p(), src.m());
#pragma omp for schedule(static)
        for (Index c = 0; c < chunks; ++c) {
            MatrixXd acc = MatrixXd::Zero(src.m(), src.m());
            const Index end = std::min(n, (c + 1) * kChunk);
            for (Index i = c * kChunk; i < end; ++i) {
                try {
                    src.sample(i, F);
                } catch (...) {
                    failure.record(i, std::current_exception());
                    break;
                }
                accumulate_projected(F, U0, R, acc);
            }
            partial[static_cast<std::size_t>(c)] = std::move(acc);
        }
    }
    failure.rethrow();
    return mirror_lower(tree_sum(partial, 0, partial.size())) / static_cast<double>(n);
}

MatrixXd evaluation_stack(const SampleSource& src) {
    const Index n = src.n();
    const Index m = src.m();
    MatrixXd stack(src.p(), n * m);
    FirstFailure failure;
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < n; ++i) {
        try {
            auto block = stack.middleCols(i * m, m);
            src.sample(i, block);
        } catch (...) {
            failure.record(i, std::current_exception());
        }
    }
    failure.rethrow();
    return stack;
}

}  // namespace parallel

}  // namespace sgmm::kernels
