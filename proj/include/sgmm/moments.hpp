#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "sgmm/kernels.hpp"
#include "sgmm/models.hpp"

namespace sgmm {

/// Scalar transform h(y) applied to the response before it weights a moment.
enum class ResponseKind {
    one,          // h = 1 (unsupervised moments)
    y,            // h = y
    y_squared,    // h = y^2
    cosine,       // h = cos(y / t + gamma)
    sign_robust,  // h = sign(y) * sign(x^T v1), v1 = mean(sign(y) x)
    residual,     // h = y - b0 - x^T b (least-squares residual)
};

struct ResponseWeight {
    ResponseKind kind = ResponseKind::one;
    double t = 1.0;
    double gamma = 0.0;
    // When finite, t is resolved at bind time as 2*tau/pi with tau the
    // tau_quantile-th sample quantile of |y|.
    double tau_quantile = std::numeric_limits<double>::quiet_NaN();

    // Data-dependent state filled by MomentFunctionSet::bind.
    bool bound = false;
    VectorXd direction;  // v1 (sign_robust) or slope b (residual)
    double intercept = 0.0;

    bool needs_response() const { return kind != ResponseKind::one; }
    bool needs_binding() const;
    double operator()(const Eigen::Ref<const VectorXd>& x, double y) const;
};

/// User-supplied per-sample rule. `eval` must be a pure function of the
/// sample (no state carried across samples); streaming storage relies on it.
struct CustomMoment {
    using Fn = std::function<void(const Eigen::Ref<const VectorXd>& x, std::optional<double> y,
                                  Eigen::Ref<VectorXd> out)>;
    std::string name;
    Fn eval;
    bool pure = true;
    bool needs_response = false;
};

enum class MomentShape {
    first,          // h(y) x
    second_column,  // h(y) x (x^T a) - c a
    custom,
};

enum class Centering {
    stein,     // c = h(y): h(y) (x x^T a - a)
    constant,  // c = shift: x x^T a - shift a  (factor model, shift = sigma^2)
};

struct MomentDescriptor {
    MomentShape shape = MomentShape::first;
    ResponseWeight weight;
    Index axis = -1;     // a = e_axis when `column` is empty
    VectorXd column;     // explicit a
    Centering centering = Centering::stein;
    double shift = 0.0;
    CustomMoment custom;
    std::string group;   // free-form tag used to select subsets, e.g. "a".."d"

    std::string label() const;
};

/// Ordered list of m moment functions f_l mapping a sample to R^p.
class MomentFunctionSet {
public:
    MomentFunctionSet() = default;
    MomentFunctionSet(Index p, std::vector<MomentDescriptor> descriptors);

    Index p() const { return p_; }
    Index m() const { return static_cast<Index>(descriptors_.size()); }
    const std::vector<MomentDescriptor>& descriptors() const { return descriptors_; }

    bool needs_response() const;
    bool is_bound() const;
    bool is_pure() const;

    /// Copy with data-dependent state (v1, least-squares fit, cosine scale)
    /// computed from `data`. Also checks dimensions and response presence.
    MomentFunctionSet bind(const Dataset& data) const;

    /// Writes F_i = [f_1(x_i,y_i) ... f_m(x_i,y_i)] into `F` (p x m). The set
    /// must be bound.
    void evaluate(const Dataset& data, Index i, Eigen::Ref<MatrixXd> F) const;

    MomentFunctionSet subset(const std::vector<Index>& columns) const;
    /// Columns whose group is one of `groups`, in set order.
    std::vector<Index> columns_in_groups(const std::vector<std::string>& groups) const;
    MomentFunctionSet with_group(const std::string& group) const;

private:
    Index p_ = 0;
    std::vector<MomentDescriptor> descriptors_;
};

// ---- builders ----------------------------------------------------------

/// v_1 = mean(x), v_{1+l} = mean(x x^T e_l) - sigma^2 e_l.
MomentFunctionSet factor_moments(Index p, double sigma);

enum class MixtureKind { y_first, y2_second, y_second };
MixtureKind parse_mixture_kind(const std::string& s);

/// y-first: mean(y x); y2-second / y-second: mean(h(y)(x x^T a_j - a_j)) with
/// h = y^2 or y and a_j the standard basis or the columns of `basis`.
MomentFunctionSet mixture_moments(Index p, MixtureKind kind,
                                  const std::optional<MatrixXd>& basis = std::nullopt);

enum class MomentOrder { first, second };

struct CosineScale {
    double t;
    double gamma;
};

/// h_l(y) = cos(y/t_l + gamma_l); first order gives h_l(y) x, second order
/// gives h_l(y)(x x^T e_j - e_j) for every (l, j), l outer.
MomentFunctionSet cosine_moments(Index p, MomentOrder order, const std::vector<CosineScale>& scales);

/// `count` cosine moments with t = 2 tau / pi and gamma_j = (j-1) pi / 4,
/// tau being the `quantile` sample quantile of |y| resolved at bind time.
MomentFunctionSet quantile_cosine_moments(Index p, MomentOrder order, double quantile = 0.8,
                                          int count = 4);

/// p descriptors mean(ytilde (x x^T e_j - e_j)), ytilde = sign(y) sign(x^T v1).
MomentFunctionSet sign_robust_moments(Index p);

/// pHd moments on y, or on the least-squares residual when `residualize`.
MomentFunctionSet phd_moments(Index p, bool residualize);

/// Concatenates descriptor lists; all sets must share p.
MomentFunctionSet concat(const std::vector<MomentFunctionSet>& sets);

/// A set made of custom descriptors with output dimension p.
MomentFunctionSet custom_moments(Index p, std::vector<CustomMoment> fns);

/// Custom descriptors f_l(x) = mu_l + sum_k L(l, k) xi_k for a block design,
/// reading xi_k from the stacked covariate row.
MomentFunctionSet block_design_moments(const BlockDesign& design);

/// Type-7 (linear interpolation) sample quantile.
double sample_quantile(std::vector<double> values, double q);

// ---- JSON --------------------------------------------------------------

nlohmann::json to_json(const MomentFunctionSet& set);
MomentFunctionSet moment_set_from_json(const nlohmann::json& doc);

/// Builds a set from the compact builder list used by CLI configs, e.g.
/// [{"builder":"factor","sigma":2}, {"builder":"sign_robust"}].
MomentFunctionSet moment_set_from_builders(const nlohmann::json& builders, Index p);

// ---- materialization ---------------------------------------------------

enum class Storage { automatic, cached, streaming };

/// Largest n*p*m for which `automatic` storage keeps the evaluation stack.
inline constexpr Index kCacheLimit = Index{1} << 24;

/// The p x m matrix V of moment averages, plus the ability to replay the
/// per-sample evaluations F_i.
class MomentMatrix final : public kernels::SampleSource {
public:
    /// A moment matrix without a per-sample evaluator (e.g. received summaries).
    static MomentMatrix from_values(MatrixXd V, Index n);

    const MatrixXd& V() const { return V_; }
    Index n() const override { return n_; }
    Index p() const override { return V_.rows(); }
    Index m() const override { return V_.cols(); }
    void sample(Index i, Eigen::Ref<MatrixXd> F) const override;

    bool cached() const { return cache_ != nullptr; }
    bool restreamable() const { return data_ != nullptr; }
    const MomentFunctionSet& moments() const { return set_; }
    const std::shared_ptr<const Dataset>& data() const { return data_; }

private:
    friend MomentMatrix materialize(std::shared_ptr<const Dataset>, const MomentFunctionSet&,
                                    Storage);
    MatrixXd V_;
    Index n_ = 0;
    std::shared_ptr<const Dataset> data_;
    MomentFunctionSet set_;
    std::shared_ptr<const MatrixXd> cache_;  // p x (n m), F_i in columns [i m, (i+1) m)
};

MomentMatrix materialize(std::shared_ptr<const Dataset> data, const MomentFunctionSet& set,
                         Storage storage = Storage::automatic);
MomentMatrix materialize(const Dataset& data, const MomentFunctionSet& set,
                         Storage storage = Storage::automatic);

}  // namespace sgmm
