#pragma once

#include <Eigen/Dense>

#include "sgmm/error.hpp"

namespace sgmm::kernels {

using Eigen::Index;
using Eigen::MatrixXd;

/// Anything that can replay the per-sample moment evaluations F_i (p x m).
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual Index n() const = 0;
    virtual Index p() const = 0;
    virtual Index m() const = 0;
    virtual void sample(Index i, Eigen::Ref<MatrixXd> F) const = 0;
};

/// Raised when an evaluation produced NaN or Inf.
class NonFiniteEvaluation : public NumericalError {
public:
    NonFiniteEvaluation(Index sample, Index column);
    Index sample;
    Index column;
};

/// Samples per reduction chunk. Partial sums are formed per chunk and then
/// combined by a fixed pairwise tree, so the parallel kernels return the same
/// bits for any thread count.
inline constexpr Index kChunk = 256;

/// Number of OpenMP threads available to a parallel region (1 without OpenMP).
int max_threads();

/// Straight sequential loops, kept as the reference for the parallel kernels.
namespace serial {

/// (1/n) sum_i F_i.
MatrixXd moment_mean(const SampleSource& src);

/// (1/n) sum_i F_i^T (I - U0 U0^T) F_i, lower triangle accumulated and mirrored.
MatrixXd projected_gram(const SampleSource& src, const MatrixXd& U0);

}  // namespace serial

namespace parallel {

MatrixXd moment_mean(const SampleSource& src);
MatrixXd projected_gram(const SampleSource& src, const MatrixXd& U0);

/// Evaluates every sample into a p x (n m) stack, F_i in columns [i m, (i+1) m).
MatrixXd evaluation_stack(const SampleSource& src);

}  // namespace parallel

}  // namespace sgmm::kernels
