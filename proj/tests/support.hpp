#pragma once

// Shared generators and independent oracles for the unit tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace sgmm::testkit {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd gaussian(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    MatrixXd A(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) A(i, j) = nd(rng);
    }
    return A;
}

/// Orthonormal p x r via modified Gram-Schmidt on a Gaussian draw.
inline MatrixXd random_orthonormal(Index p, Index r, std::mt19937_64& rng) {
    MatrixXd Q = gaussian(p, r, rng);
    for (Index j = 0; j < r; ++j) {
        for (Index k = 0; k < j; ++k) Q.col(j) -= Q.col(k).dot(Q.col(j)) * Q.col(k);
        Q.col(j) /= Q.col(j).norm();
    }
    return Q;
}

inline MatrixXd random_psd(Index m, std::mt19937_64& rng, double ridge = 0.1) {
    const MatrixXd A = gaussian(m, m, rng);
    return A * A.transpose() + ridge * MatrixXd::Identity(m, m);
}

/// Distance between spans computed from the projectors directly.
inline double projector_distance(const MatrixXd& A, const MatrixXd& B) {
    return (A * A.transpose() - B * B.transpose()).norm();
}

// ---- characteristic-polynomial eigen oracle (small symmetric matrices) ------

/// det(A - x I) by cofactor expansion; exponential cost, fine for p <= 4.
inline double det_cofactor(const MatrixXd& M) {
    const Index n = M.rows();
    if (n == 1) return M(0, 0);
    if (n == 2) return M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0);
    double det = 0.0;
    for (Index j = 0; j < n; ++j) {
        MatrixXd minor(n - 1, n - 1);
        for (Index r = 1; r < n; ++r) {
            Index c2 = 0;
            for (Index c = 0; c < n; ++c) {
                if (c != j) minor(r - 1, c2++) = M(r, c);
            }
        }
        det += ((j % 2 == 0) ? 1.0 : -1.0) * M(0, j) * det_cofactor(minor);
    }
    return det;
}

inline double char_poly(const MatrixXd& A, double x) {
    return det_cofactor(A - x * MatrixXd::Identity(A.rows(), A.cols()));
}

/// Roots of det(A - x I) for symmetric A, descending, found by scanning a
/// Gershgorin interval for sign changes and bisecting each bracket.
inline std::vector<double> charpoly_eigenvalues(const MatrixXd& A) {
    const Index n = A.rows();
    double lo = 0.0, hi = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double radius = A.row(i).cwiseAbs().sum() - std::abs(A(i, i));
        lo = std::min(lo, A(i, i) - radius);
        hi = std::max(hi, A(i, i) + radius);
    }
    lo -= 1.0;
    hi += 1.0;
    const int steps = 200000;
    std::vector<double> roots;
    double x0 = lo, f0 = char_poly(A, x0);
    for (int s = 1; s <= steps; ++s) {
        const double x1 = lo + (hi - lo) * s / steps;
        const double f1 = char_poly(A, x1);
        if (f0 == 0.0) {
            roots.push_back(x0);
        } else if (f0 * f1 < 0.0) {
            double a = x0, b = x1, fa = f0;
            for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
                const double mid = 0.5 * (a + b);
                const double fm = char_poly(A, mid);
                if (fa * fm <= 0.0) {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            roots.push_back(0.5 * (a + b));
        }
        x0 = x1;
        f0 = f1;
    }
    std::sort(roots.rbegin(), roots.rend());
    return roots;
}

/// Unit null vector of (A - lambda I) for a simple eigenvalue: row-echelon
/// form by partial pivoting, first free variable set to 1, back-substitution.
inline VectorXd null_vector(const MatrixXd& A, double lambda) {
    const Index n = A.rows();
    const MatrixXd S = A - lambda * MatrixXd::Identity(n, n);
    MatrixXd M = S;
    std::vector<Index> pivot_cols;
    Index row = 0;
    for (Index col = 0; col < n && row < n; ++col) {
        Index best = row;
        for (Index r = row + 1; r < n; ++r) {
            if (std::abs(M(r, col)) > std::abs(M(best, col))) best = r;
        }
        if (std::abs(M(best, col)) < 1e-9 * std::max(1.0, S.cwiseAbs().maxCoeff())) continue;
        M.row(row).swap(M.row(best));
        for (Index r = row + 1; r < n; ++r) M.row(r) -= M(r, col) / M(row, col) * M.row(row);
        pivot_cols.push_back(col);
        ++row;
    }
    VectorXd v = VectorXd::Zero(n);
    std::vector<bool> is_pivot(static_cast<std::size_t>(n), false);
    for (Index c : pivot_cols) is_pivot[static_cast<std::size_t>(c)] = true;
    for (Index c = 0; c < n; ++c) {
        if (!is_pivot[static_cast<std::size_t>(c)]) {
            v(c) = 1.0;
            break;
        }
    }
    for (Index k = static_cast<Index>(pivot_cols.size()) - 1; k >= 0; --k) {
        const Index c = pivot_cols[static_cast<std::size_t>(k)];
        double s = 0.0;
        for (Index j = c + 1; j < n; ++j) s += M(k, j) * v(j);
        v(c) = -s / M(k, c);
    }
    return v.normalized();
}

// ---- quadrature -------------------------------------------------------------

/// E[g(Z)] for Z ~ N(0, 1) by composite Simpson on [-12, 12].
inline double gaussian_expectation(const std::function<double(double)>& g, int panels = 4000) {
    const double a = -12.0, b = 12.0, h = (b - a) / panels;
    const double c = 1.0 / std::sqrt(2.0 * M_PI);
    double s = 0.0;
    for (int k = 0; k <= panels; ++k) {
        const double z = a + k * h;
        const double w = (k == 0 || k == panels) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        s += w * g(z) * c * std::exp(-0.5 * z * z);
    }
    return s * h / 3.0;
}

}  // namespace sgmm::testkit
