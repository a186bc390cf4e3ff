#include "sgmm/moments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "sgmm/error.hpp"

namespace sgmm {

namespace {

double sign(double v) { return (v > 0.0) - (v < 0.0); }

std::string kind_name(ResponseKind k) {
    switch (k) {
        case ResponseKind::one: return "one";
        case ResponseKind::y: return "y";
        case ResponseKind::y_squared: return "y2";
        case ResponseKind::cosine: return "cosine";
        case ResponseKind::sign_robust: return "sign_robust";
        case ResponseKind::residual: return "residual";
    }
    return "?";
}

ResponseKind parse_kind(const std::string& s) {
    for (auto k : {ResponseKind::one, ResponseKind::y, ResponseKind::y_squared, ResponseKind::cosine,
                   ResponseKind::sign_robust, ResponseKind::residual}) {
        if (kind_name(k) == s) return k;
    }
    throw ConfigError("unknown response weight kind '" + s + "'");
}

MomentDescriptor first_moment(ResponseWeight w, std::string group) {
    MomentDescriptor d;
    d.shape = MomentShape::first;
    d.weight = std::move(w);
    d.group = std::move(group);
    return d;
}

MomentDescriptor second_column(ResponseWeight w, Index axis, std::string group) {
    MomentDescriptor d;
    d.shape = MomentShape::second_column;
    d.weight = std::move(w);
    d.axis = axis;
    d.group = std::move(group);
    return d;
}

ResponseWeight weight_of(ResponseKind k) {
    ResponseWeight w;
    w.kind = k;
    return w;
}

/// p second-moment columns sharing one response weight.
std::vector<MomentDescriptor> stein_columns(Index p, const ResponseWeight& w,
                                            const std::string& group) {
    std::vector<MomentDescriptor> out;
    out.reserve(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) out.push_back(second_column(w, j, group));
    return out;
}

void require_dim(Index p) {
    if (p < 1) throw DimensionError("moment output dimension must be at least 1");
}

/// Least-squares fit of y on [1, x]; returns (intercept, slope).
std::pair<double, VectorXd> least_squares(const Dataset& data) {
    const Index n = data.n();
    const Index p = data.dim();
    MatrixXd design(n, p + 1);
    design.col(0).setOnes();
    design.rightCols(p) = data.x;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
    if (qr.rank() < p + 1) {
        throw DegenerateError("rank-deficient design in least-squares residualization");
    }
    const VectorXd coef = qr.solve(*data.y);
    return {coef(0), coef.tail(p)};
}

}  // namespace

// ---- ResponseWeight ------------------------------------------------------

bool ResponseWeight::needs_binding() const {
    return kind == ResponseKind::sign_robust || kind == ResponseKind::residual ||
           (kind == ResponseKind::cosine && std::isfinite(tau_quantile));
}

double ResponseWeight::operator()(const Eigen::Ref<const VectorXd>& x, double y) const {
    switch (kind) {
        case ResponseKind::one: return 1.0;
        case ResponseKind::y: return y;
        case ResponseKind::y_squared: return y * y;
        case ResponseKind::cosine: return std::cos(y / t + gamma);
        case ResponseKind::sign_robust: return sign(y) * sign(x.dot(direction));
        case ResponseKind::residual: return y - intercept - x.dot(direction);
    }
    return 0.0;
}

std::string MomentDescriptor::label() const {
    std::ostringstream s;
    switch (shape) {
        case MomentShape::first: s << "first[" << kind_name(weight.kind) << "]"; break;
        case MomentShape::second_column:
            s << "second[" << kind_name(weight.kind) << "](";
            if (column.size() > 0) {
                s << "a";
            } else {
                s << "e" << (axis + 1);
            }
            s << ")";
            break;
        case MomentShape::custom: s << "custom:" << custom.name; break;
    }
    return s.str();
}

// ---- MomentFunctionSet ---------------------------------------------------

MomentFunctionSet::MomentFunctionSet(Index p, std::vector<MomentDescriptor> descriptors)
    : p_(p), descriptors_(std::move(descriptors)) {
    require_dim(p);
    for (const auto& d : descriptors_) {
        if (d.shape == MomentShape::second_column) {
            if (d.column.size() == 0 && (d.axis < 0 || d.axis >= p)) {
                throw DimensionError("second-moment axis out of range");
            }
            if (d.column.size() != 0 && d.column.size() != p) {
                throw DimensionError("second-moment direction has wrong length");
            }
        }
        if (d.shape == MomentShape::custom && !d.custom.eval) {
            throw ParameterError("custom moment '" + d.custom.name + "' has no evaluation rule");
        }
        if (d.weight.kind == ResponseKind::cosine && !std::isfinite(d.weight.tau_quantile) &&
            !(d.weight.t > 0.0)) {
            throw ParameterError("cosine scale t must be positive");
        }
    }
}

bool MomentFunctionSet::needs_response() const {
    return std::any_of(descriptors_.begin(), descriptors_.end(), [](const auto& d) {
        return d.shape == MomentShape::custom ? d.custom.needs_response : d.weight.needs_response();
    });
}

bool MomentFunctionSet::is_bound() const {
    return std::all_of(descriptors_.begin(), descriptors_.end(),
                       [](const auto& d) { return !d.weight.needs_binding() || d.weight.bound; });
}

bool MomentFunctionSet::is_pure() const {
    return std::all_of(descriptors_.begin(), descriptors_.end(), [](const auto& d) {
        return d.shape != MomentShape::custom || d.custom.pure;
    });
}

MomentFunctionSet MomentFunctionSet::bind(const Dataset& data) const {
    if (descriptors_.empty()) {
        throw ParameterError("moment set is empty");
    }
    data.validate();
    if (needs_response() && !data.has_response()) {
        throw ParameterError("moment set requires a response but the dataset has none");
    }
    const bool builtin = std::any_of(descriptors_.begin(), descriptors_.end(),
                                     [](const auto& d) { return d.shape != MomentShape::custom; });
    if (builtin && data.dim() != p_) {
        std::ostringstream msg;
        msg << "moment set has dimension " << p_ << " but the dataset has " << data.dim()
            << " covariates";
        throw DimensionError(msg.str());
    }

    std::optional<VectorXd> v1;
    std::optional<std::pair<double, VectorXd>> ols;
    std::map<double, double> tau_cache;

    MomentFunctionSet out = *this;
    for (auto& d : out.descriptors_) {
        ResponseWeight& w = d.weight;
        if (!w.needs_binding()) {
            continue;
        }
        switch (w.kind) {
            case ResponseKind::sign_robust:
                if (!v1) {
                    VectorXd acc = VectorXd::Zero(data.dim());
                    for (Index i = 0; i < data.n(); ++i) {
                        acc += sign((*data.y)(i)) * data.x.row(i).transpose();
                    }
                    acc /= static_cast<double>(data.n());
                    if (acc.norm() == 0.0) {
                        throw DegenerateError("sign-robust pilot vector mean(sign(y) x) is zero");
                    }
                    v1 = std::move(acc);
                }
                w.direction = *v1;
                break;
            case ResponseKind::residual:
                if (!ols) ols = least_squares(data);
                w.intercept = ols->first;
                w.direction = ols->second;
                break;
            case ResponseKind::cosine: {
                auto it = tau_cache.find(w.tau_quantile);
                if (it == tau_cache.end()) {
                    std::vector<double> abs_y(static_cast<std::size_t>(data.n()));
                    for (Index i = 0; i < data.n(); ++i) {
                        abs_y[static_cast<std::size_t>(i)] = std::abs((*data.y)(i));
                    }
                    it = tau_cache.emplace(w.tau_quantile, sample_quantile(abs_y, w.tau_quantile))
                             .first;
                }
                if (!(it->second > 0.0)) {
                    throw DegenerateError("cosine scale quantile of |y| is zero");
                }
                w.t = 2.0 * it->second / std::numbers::pi;
                break;
            }
            default: break;
        }
        w.bound = true;
    }
    return out;
}

void MomentFunctionSet::evaluate(const Dataset& data, Index i, Eigen::Ref<MatrixXd> F) const {
    const Index p = data.dim();
    const Eigen::Map<const VectorXd> x(data.x.row(i).data(), p);
    const double y = data.y ? (*data.y)(i) : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t l = 0; l < descriptors_.size(); ++l) {
        const MomentDescriptor& d = descriptors_[l];
        auto col = F.col(static_cast<Index>(l));
        switch (d.shape) {
            case MomentShape::first: col = d.weight(x, y) * x; break;
            case MomentShape::second_column: {
                const double h = d.weight(x, y);
                const double c = d.centering == Centering::stein ? h : d.shift;
                if (d.column.size() == 0) {
                    col = (h * x(d.axis)) * x;
                    col(d.axis) -= c;
                } else {
                    col = (h * x.dot(d.column)) * x - c * d.column;
                }
                break;
            }
            case MomentShape::custom: {
                std::optional<double> yo;
                if (data.y) yo = y;
                d.custom.eval(x, yo, col);
                break;
            }
        }
    }
}

MomentFunctionSet MomentFunctionSet::subset(const std::vector<Index>& columns) const {
    std::vector<MomentDescriptor> picked;
    picked.reserve(columns.size());
    for (Index c : columns) {
        if (c < 0 || c >= m()) throw DimensionError("moment column index out of range");
        picked.push_back(descriptors_[static_cast<std::size_t>(c)]);
    }
    return MomentFunctionSet(p_, std::move(picked));
}

std::vector<Index> MomentFunctionSet::columns_in_groups(const std::vector<std::string>& groups) const {
    std::vector<Index> cols;
    for (Index l = 0; l < m(); ++l) {
        const auto& g = descriptors_[static_cast<std::size_t>(l)].group;
        if (std::find(groups.begin(), groups.end(), g) != groups.end()) cols.push_back(l);
    }
    return cols;
}

MomentFunctionSet MomentFunctionSet::with_group(const std::string& group) const {
    MomentFunctionSet out = *this;
    for (auto& d : out.descriptors_) d.group = group;
    return out;
}

// ---- builders --------------------------------------------------------------

MomentFunctionSet factor_moments(Index p, double sigma) {
    require_dim(p);
    if (sigma < 0.0) throw ParameterError("noise scale sigma must be nonnegative");
    std::vector<MomentDescriptor> d;
    d.push_back(first_moment(weight_of(ResponseKind::one), "first"));
    for (Index l = 0; l < p; ++l) {
        auto s = second_column(weight_of(ResponseKind::one), l, "second");
        s.centering = Centering::constant;
        s.shift = sigma * sigma;
        d.push_back(std::move(s));
    }
    return MomentFunctionSet(p, std::move(d));
}

MixtureKind parse_mixture_kind(const std::string& s) {
    if (s == "y-first") return MixtureKind::y_first;
    if (s == "y2-second") return MixtureKind::y2_second;
    if (s == "y-second") return MixtureKind::y_second;
    throw ConfigError("unknown mixture moment kind '" + s + "'");
}

MomentFunctionSet mixture_moments(Index p, MixtureKind kind, const std::optional<MatrixXd>& basis) {
    require_dim(p);
    if (kind == MixtureKind::y_first) {
        return MomentFunctionSet(p, {first_moment(weight_of(ResponseKind::y), "y-first")});
    }
    const ResponseWeight w =
        weight_of(kind == MixtureKind::y2_second ? ResponseKind::y_squared : ResponseKind::y);
    const std::string group = kind == MixtureKind::y2_second ? "y2-second" : "y-second";
    auto cols = stein_columns(p, w, group);
    if (basis) {
        if (basis->rows() != p || basis->cols() != p) {
            throw DimensionError("replacement basis must be p x p");
        }
        Eigen::JacobiSVD<MatrixXd> svd(*basis);
        const VectorXd& sv = svd.singularValues();
        if (!(sv(p - 1) > 0.0) || sv(0) / sv(p - 1) > 1e12) {
            throw ParameterError("replacement basis is singular (condition estimate > 1e12)");
        }
        for (Index j = 0; j < p; ++j) {
            cols[static_cast<std::size_t>(j)].axis = -1;
            cols[static_cast<std::size_t>(j)].column = basis->col(j);
        }
    }
    return MomentFunctionSet(p, std::move(cols));
}

MomentFunctionSet cosine_moments(Index p, MomentOrder order, const std::vector<CosineScale>& scales) {
    require_dim(p);
    if (scales.empty()) throw ParameterError("cosine moments need at least one scale");
    std::vector<MomentDescriptor> d;
    for (const auto& s : scales) {
        if (!(s.t > 0.0)) throw ParameterError("cosine scale t must be positive");
        ResponseWeight w = weight_of(ResponseKind::cosine);
        w.t = s.t;
        w.gamma = s.gamma;
        if (order == MomentOrder::first) {
            d.push_back(first_moment(w, "cosine"));
        } else {
            auto cols = stein_columns(p, w, "cosine");
            d.insert(d.end(), cols.begin(), cols.end());
        }
    }
    return MomentFunctionSet(p, std::move(d));
}

MomentFunctionSet quantile_cosine_moments(Index p, MomentOrder order, double quantile, int count) {
    require_dim(p);
    if (!(quantile >= 0.0 && quantile <= 1.0)) {
        throw ParameterError("cosine scale quantile must lie in [0, 1]");
    }
    if (count < 1) throw ParameterError("cosine moment count must be positive");
    std::vector<MomentDescriptor> d;
    for (int j = 0; j < count; ++j) {
        ResponseWeight w = weight_of(ResponseKind::cosine);
        w.tau_quantile = quantile;
        w.gamma = j * std::numbers::pi / 4.0;
        if (order == MomentOrder::first) {
            d.push_back(first_moment(w, "cosine"));
        } else {
            auto cols = stein_columns(p, w, "cosine");
            d.insert(d.end(), cols.begin(), cols.end());
        }
    }
    return MomentFunctionSet(p, std::move(d));
}

MomentFunctionSet sign_robust_moments(Index p) {
    require_dim(p);
    return MomentFunctionSet(p, stein_columns(p, weight_of(ResponseKind::sign_robust), "sign-robust"));
}

MomentFunctionSet phd_moments(Index p, bool residualize) {
    require_dim(p);
    if (residualize) {
        return MomentFunctionSet(p, stein_columns(p, weight_of(ResponseKind::residual), "phd-residual"));
    }
    return MomentFunctionSet(p, stein_columns(p, weight_of(ResponseKind::y), "phd-y"));
}

MomentFunctionSet concat(const std::vector<MomentFunctionSet>& sets) {
    if (sets.empty()) throw ParameterError("concat needs at least one moment set");
    const Index p = sets.front().p();
    std::vector<MomentDescriptor> all;
    for (const auto& s : sets) {
        if (s.p() != p) throw DimensionError("concatenated moment sets differ in dimension p");
        all.insert(all.end(), s.descriptors().begin(), s.descriptors().end());
    }
    return MomentFunctionSet(p, std::move(all));
}

MomentFunctionSet custom_moments(Index p, std::vector<CustomMoment> fns) {
    std::vector<MomentDescriptor> d;
    for (auto& f : fns) {
        MomentDescriptor md;
        md.shape = MomentShape::custom;
        md.group = f.name;
        md.custom = std::move(f);
        d.push_back(std::move(md));
    }
    return MomentFunctionSet(p, std::move(d));
}

MomentFunctionSet block_design_moments(const BlockDesign& design) {
    const Index p = design.p;
    const Index m = design.m();
    std::vector<CustomMoment> fns;
    for (Index l = 0; l < m; ++l) {
        CustomMoment f;
        f.name = "block" + std::to_string(l + 1);
        const VectorXd mu = design.mu.col(l);
        const VectorXd coef = design.L.row(l).transpose();
        f.eval = [p, m, mu, coef](const Eigen::Ref<const VectorXd>& x, std::optional<double>,
                                  Eigen::Ref<VectorXd> out) {
            if (x.size() != m * p) {
                throw DimensionError("block design moments need m p stacked covariates");
            }
            out = mu;
            for (Index k = 0; k < m; ++k) out += coef(k) * x.segment(k * p, p);
        };
        fns.push_back(std::move(f));
    }
    return custom_moments(p, std::move(fns));
}

double sample_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw EmptyDatasetError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

// ---- JSON --------------------------------------------------------------------

nlohmann::json to_json(const MomentFunctionSet& set) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["p"] = set.p();
    auto& list = doc["descriptors"] = nlohmann::json::array();
    for (const auto& d : set.descriptors()) {
        nlohmann::json j;
        j["group"] = d.group;
        if (d.shape == MomentShape::custom) {
            j["shape"] = "custom";
            j["name"] = d.custom.name;
            list.push_back(std::move(j));
            continue;
        }
        j["shape"] = d.shape == MomentShape::first ? "first" : "second_column";
        nlohmann::json w{{"kind", kind_name(d.weight.kind)}};
        if (d.weight.kind == ResponseKind::cosine) {
            if (std::isfinite(d.weight.tau_quantile)) {
                w["tau_quantile"] = d.weight.tau_quantile;
            } else {
                w["t"] = d.weight.t;
            }
            w["gamma"] = d.weight.gamma;
        }
        j["weight"] = std::move(w);
        if (d.shape == MomentShape::second_column) {
            if (d.column.size() > 0) {
                j["direction"] = std::vector<double>(d.column.data(), d.column.data() + d.column.size());
            } else {
                j["axis"] = d.axis;
            }
            j["centering"] = d.centering == Centering::stein ? "stein" : "constant";
            if (d.centering == Centering::constant) j["shift"] = d.shift;
        }
        list.push_back(std::move(j));
    }
    return doc;
}

MomentFunctionSet moment_set_from_json(const nlohmann::json& doc) {
    try {
        if (doc.value("version", 0) != 1) {
            throw ConfigError("unsupported moment-set document version");
        }
        const Index p = doc.at("p").get<Index>();
        std::vector<MomentDescriptor> out;
        for (const auto& j : doc.at("descriptors")) {
            const std::string shape = j.at("shape").get<std::string>();
            if (shape == "custom") {
                throw ConfigError("custom moment '" + j.value("name", std::string{}) +
                                  "' cannot be reconstructed from JSON");
            }
            MomentDescriptor d;
            d.group = j.value("group", std::string{});
            const auto& w = j.at("weight");
            d.weight.kind = parse_kind(w.at("kind").get<std::string>());
            if (d.weight.kind == ResponseKind::cosine) {
                if (w.contains("tau_quantile")) {
                    d.weight.tau_quantile = w.at("tau_quantile").get<double>();
                } else {
                    d.weight.t = w.at("t").get<double>();
                }
                d.weight.gamma = w.value("gamma", 0.0);
            }
            if (shape == "first") {
                d.shape = MomentShape::first;
            } else if (shape == "second_column") {
                d.shape = MomentShape::second_column;
                if (j.contains("direction")) {
                    const auto v = j.at("direction").get<std::vector<double>>();
                    d.column = Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
                } else {
                    d.axis = j.at("axis").get<Index>();
                }
                const std::string c = j.value("centering", std::string("stein"));
                if (c == "stein") {
                    d.centering = Centering::stein;
                } else if (c == "constant") {
                    d.centering = Centering::constant;
                    d.shift = j.value("shift", 0.0);
                } else {
                    throw ConfigError("unknown centering '" + c + "'");
                }
            } else {
                throw ConfigError("unknown moment shape '" + shape + "'");
            }
            out.push_back(std::move(d));
        }
        return MomentFunctionSet(p, std::move(out));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed moment-set document: ") + e.what());
    }
}

MomentFunctionSet moment_set_from_builders(const nlohmann::json& builders, Index p) {
    if (!builders.is_array() || builders.empty()) {
        throw ConfigError("moment builders must be a non-empty array");
    }
    std::vector<MomentFunctionSet> sets;
    try {
        for (const auto& b : builders) {
            const std::string name = b.at("builder").get<std::string>();
            MomentFunctionSet s;
            if (name == "factor") {
                s = factor_moments(p, b.at("sigma").get<double>());
            } else if (name == "mixture") {
                s = mixture_moments(p, parse_mixture_kind(b.at("kind").get<std::string>()));
            } else if (name == "cosine") {
                const std::string ord = b.value("order", std::string("first"));
                if (ord != "first" && ord != "second") {
                    throw ConfigError("cosine order must be 'first' or 'second'");
                }
                const MomentOrder order = ord == "first" ? MomentOrder::first : MomentOrder::second;
                if (b.contains("scales")) {
                    std::vector<CosineScale> scales;
                    for (const auto& sc : b.at("scales")) {
                        scales.push_back({sc.at(0).get<double>(), sc.at(1).get<double>()});
                    }
                    s = cosine_moments(p, order, scales);
                } else {
                    s = quantile_cosine_moments(p, order, b.value("tau_quantile", 0.8),
                                                b.value("count", 4));
                }
            } else if (name == "sign_robust") {
                s = sign_robust_moments(p);
            } else if (name == "phd") {
                s = phd_moments(p, b.value("residualize", false));
            } else {
                throw ConfigError("unknown moment builder '" + name + "'");
            }
            if (b.contains("group")) s = s.with_group(b.at("group").get<std::string>());
            sets.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed moment builder list: ") + e.what());
    }
    return concat(sets);
}

// ---- materialization -----------------------------------------------------------

MomentMatrix MomentMatrix::from_values(MatrixXd V, Index n) {
    MomentMatrix mm;
    mm.V_ = std::move(V);
    mm.n_ = n;
    return mm;
}

void MomentMatrix::sample(Index i, Eigen::Ref<MatrixXd> F) const {
    if (cache_) {
        F = cache_->middleCols(i * m(), m());
    } else if (data_) {
        set_.evaluate(*data_, i, F);
    } else {
        throw Error("moment matrix has no per-sample evaluator");
    }
}

MomentMatrix materialize(std::shared_ptr<const Dataset> data, const MomentFunctionSet& set,
                         Storage storage) {
    if (!data) throw EmptyDatasetError("no dataset");
    MomentMatrix mm;
    mm.set_ = set.bind(*data);
    mm.data_ = std::move(data);
    mm.n_ = mm.data_->n();
    mm.V_ = MatrixXd::Zero(set.p(), set.m());  // shape for the evaluator

    const bool fits = mm.n_ * set.p() * set.m() <= kCacheLimit;
    if (storage == Storage::streaming && !set.is_pure()) {
        throw ParameterError("streaming storage requires pure moment functions");
    }
    const bool cache = storage == Storage::cached ||
                       (storage == Storage::automatic && (fits || !set.is_pure()));
    try {
        if (cache) {
            mm.cache_ = std::make_shared<const MatrixXd>(kernels::parallel::evaluation_stack(mm));
        }
        mm.V_ = kernels::parallel::moment_mean(mm);
    } catch (const kernels::NonFiniteEvaluation& e) {
        std::ostringstream msg;
        msg << "non-finite moment at sample " << e.sample << ", descriptor " << e.column << " ("
            << mm.set_.descriptors()[static_cast<std::size_t>(e.column)].label() << ")";
        throw NumericalError(msg.str());
    }
    return mm;
}

MomentMatrix materialize(const Dataset& data, const MomentFunctionSet& set, Storage storage) {
    return materialize(std::make_shared<const Dataset>(data), set, storage);
}

}  // namespace sgmm
