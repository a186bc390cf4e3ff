// Serial vs OpenMP kernels on a synthetic sample source.
//
//   ./build/bench/sgmm_bench --benchmark_filter=projected_gram

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "sgmm/kernels.hpp"

using namespace sgmm::kernels;

namespace {

// F_i = x_i c_iᵀ for stored x_i and coefficients, roughly the cost of a
// cross-moment evaluation.
class OuterProductSource final : public SampleSource {
public:
    OuterProductSource(Index n, Index p, Index m) : X_(p, n), C_(m, n) {
        std::mt19937_64 gen(11);
        std::normal_distribution<double> z;
        for (Index j = 0; j < n; ++j) {
            for (Index i = 0; i < p; ++i) X_(i, j) = z(gen);
            for (Index k = 0; k < m; ++k) C_(k, j) = z(gen);
        }
    }
    Index n() const override { return X_.cols(); }
    Index p() const override { return X_.rows(); }
    Index m() const override { return C_.rows(); }
    void sample(Index i, Eigen::Ref<MatrixXd> F) const override {
        F.noalias() = X_.col(i) * C_.col(i).transpose();
    }

private:
    MatrixXd X_;
    MatrixXd C_;
};

const OuterProductSource& source(Index n) {
    static std::vector<std::pair<Index, OuterProductSource>> cache;
    for (auto& [k, s] : cache)
        if (k == n) return s;
    cache.emplace_back(n, OuterProductSource(n, 20, 40));
    return cache.back().second;
}

MatrixXd basis() {
    MatrixXd U = MatrixXd::Zero(20, 3);
    U(0, 0) = U(1, 1) = U(2, 2) = 1.0;
    return U;
}

void BM_moment_mean_serial(benchmark::State& st) {
    const auto& src = source(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(serial::moment_mean(src));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_moment_mean_parallel(benchmark::State& st) {
    const auto& src = source(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(parallel::moment_mean(src));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_projected_gram_serial(benchmark::State& st) {
    const auto& src = source(st.range(0));
    const MatrixXd U = basis();
    for (auto _ : st) benchmark::DoNotOptimize(serial::projected_gram(src, U));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_projected_gram_parallel(benchmark::State& st) {
    const auto& src = source(st.range(0));
    const MatrixXd U = basis();
    for (auto _ : st) benchmark::DoNotOptimize(parallel::projected_gram(src, U));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_moment_mean_serial)->Arg(4096)->Arg(65536)->UseRealTime();
BENCHMARK(BM_moment_mean_parallel)->Arg(4096)->Arg(65536)->UseRealTime();
BENCHMARK(BM_projected_gram_serial)->Arg(4096)->Arg(65536)->UseRealTime();
BENCHMARK(BM_projected_gram_parallel)->Arg(4096)->Arg(65536)->UseRealTime();

BENCHMARK_MAIN();
