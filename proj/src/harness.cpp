#include "sgmm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <set>
#include <sstream>

#include "sgmm/csv.hpp"
#include "sgmm/error.hpp"
#include "sgmm/rng.hpp"

namespace sgmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

MatrixXd columns(const MatrixXd& V, const std::vector<Index>& cols) {
    MatrixXd out(V.rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = V.col(cols[j]);
    return out;
}

std::vector<Index> group_columns(const MomentFunctionSet& set, const std::vector<std::string>& groups) {
    if (groups.empty()) {
        std::vector<Index> all(static_cast<std::size_t>(set.m()));
        for (Index l = 0; l < set.m(); ++l) all[static_cast<std::size_t>(l)] = l;
        return all;
    }
    auto cols = set.columns_in_groups(groups);
    if (cols.empty()) {
        std::string names;
        for (const auto& g : groups) names += (names.empty() ? "" : "+") + g;
        throw ConfigError("no moments in group(s) '" + names + "'");
    }
    return cols;
}

SubspaceEstimate identity_weighted(const MatrixXd& V, const MethodInput& in) {
    return weighted_eigen(V, WeightMatrix::identity(V.cols()), in.r);
}

MethodOutput two_step(const MomentMatrix& mm, WeightShape shape, const MethodInput& in) {
    TwoStepOptions opts;
    if (!in.auto_rank) opts.r = in.r;
    opts.delta = in.delta;
    opts.shape = shape;
    opts.iterations = in.iterations;
    opts.eta_quantile = in.eta_quantile;
    TwoStepResult res = two_step_gmm(mm, opts);
    return MethodOutput{std::move(res.estimate), std::move(res.rank)};
}

std::string variant_label(double v) {
    const int code = static_cast<int>(v);
    return code == 0 ? "A" : code == 1 ? "B" : "C";
}

std::string value_label(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

struct GridPoint {
    std::string label;
    double value = 0.0;
    ExperimentConfig cfg;
};

ExperimentConfig with_parameter(ExperimentConfig cfg, const std::string& param, double v) {
    if (param == "mu") {
        cfg.mu = v;
    } else if (param == "n") {
        cfg.n = static_cast<Index>(v);
    } else if (param == "r") {
        cfg.r = static_cast<Index>(v);
    } else if (param == "variant") {
        cfg.variant = static_cast<IndexVariant>(static_cast<int>(v));
    }
    if (cfg.n_per_r) cfg.n = *cfg.n_per_r * cfg.r;
    return cfg;
}

std::vector<GridPoint> grid_of(const ExperimentConfig& config) {
    std::vector<GridPoint> out;
    if (!config.sweep) {
        out.push_back({"default", 0.0, with_parameter(config, "", 0.0)});
        return out;
    }
    for (double v : config.sweep->values) {
        const std::string& param = config.sweep->parameter;
        const std::string shown = param == "variant" ? variant_label(v) : value_label(v);
        out.push_back({param + "=" + shown, v, with_parameter(config, param, v)});
    }
    return out;
}

bool is_factor(const ExperimentConfig& c) {
    const auto kind = parse_experiment_kind(c.name);
    return kind == ExperimentKind::example1 || kind == ExperimentKind::dimest ||
           (kind == ExperimentKind::custom && c.model == "factor");
}

bool is_two_step(MethodKind k) {
    return k == MethodKind::gmm_full || k == MethodKind::gmm_diagonal ||
           k == MethodKind::gmm_subset || k == MethodKind::augmented;
}

/// The moment set of an experiment; structure only, so it can be built
/// before any data exists.
MomentFunctionSet experiment_moments(const ExperimentConfig& c) {
    const Index p = c.p;
    switch (parse_experiment_kind(c.name)) {
        case ExperimentKind::example1:
        case ExperimentKind::dimest: return factor_moments(p, c.sigma);
        case ExperimentKind::example2:
            return concat({mixture_moments(p, MixtureKind::y_first).with_group("a"),
                           mixture_moments(p, MixtureKind::y2_second).with_group("b"),
                           quantile_cosine_moments(p, MomentOrder::first).with_group("c"),
                           sign_robust_moments(p).with_group("d")});
        case ExperimentKind::example3:
            return concat({mixture_moments(p, MixtureKind::y_first).with_group("a"),
                           quantile_cosine_moments(p, MomentOrder::first).with_group("c"),
                           phd_moments(p, false).with_group("phd-y"),
                           phd_moments(p, true).with_group("phd-residual")});
        case ExperimentKind::custom: return moment_set_from_builders(c.moments, p);
    }
    throw ConfigError("unknown experiment");
}

Index true_dimension(const ExperimentConfig& c) {
    switch (parse_experiment_kind(c.name)) {
        case ExperimentKind::example2: return c.K;
        case ExperimentKind::example3: return 2;
        case ExperimentKind::custom:
            if (c.model == "mixed_linear" || c.model == "mixed_logistic") return c.K;
            if (c.model == "index") return 2;
            return c.r;
        default: return c.r;
    }
}

VectorXd alternating_mean(Index r, double mu) {
    VectorXd m(r);
    for (Index k = 0; k < r; ++k) m(k) = k % 2 == 0 ? mu : -mu;
    return m;
}

Simulation simulate(const ExperimentConfig& c, std::uint64_t master, std::uint64_t replicate_seed) {
    if (is_factor(c)) {
        const MatrixXd B = draw_loadings(
            c.p, c.r,
            derive_seed(master, {static_cast<std::uint64_t>(Stage::parameters),
                                 static_cast<std::uint64_t>(c.r)}));
        return sample_factor(B, c.n, alternating_mean(c.r, c.mu), c.sigma, replicate_seed);
    }
    const auto kind = parse_experiment_kind(c.name);
    if (kind == ExperimentKind::example3 ||
        (kind == ExperimentKind::custom && c.model == "index")) {
        Simulation sim = gen_index_model({c.n, c.p, c.variant, c.noise_scale}, replicate_seed);
        if (kind == ExperimentKind::example3) sim.data = center(sim.data);
        return sim;
    }
    const MixtureParams mp{c.n, c.p, c.K, c.beta_radius, c.sigma, 1.0};
    if (kind == ExperimentKind::custom && c.model == "mixed_logistic") {
        return gen_mixed_logistic(mp, replicate_seed);
    }
    return gen_mixed_linear(mp, replicate_seed);
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "version", "name", "n", "p", "r", "K", "mu", "sigma", "variant", "beta_radius",
        "noise_scale", "n_per_r", "methods", "replicates", "seed", "delta", "eta_quantile",
        "iterations", "sweep", "record_runtime", "model", "moments"};
    return keys;
}

double sweep_value(const nlohmann::json& v) {
    if (v.is_string()) return static_cast<double>(static_cast<int>(parse_index_variant(v.get<std::string>())));
    return v.get<double>();
}

}  // namespace

// ---- methods -------------------------------------------------------------------------

MethodSpec parse_method(const std::string& tag) {
    MethodSpec m;
    m.tag = tag;
    if (tag == "standard") {
        m.kind = MethodKind::standard;
    } else if (tag == "identity") {
        m.kind = MethodKind::identity;
    } else if (tag == "gmm-full") {
        m.kind = MethodKind::gmm_full;
    } else if (tag == "gmm-diagonal") {
        m.kind = MethodKind::gmm_diagonal;
    } else if (tag == "gmm-full-2") {
        m.kind = MethodKind::gmm_subset;
        m.groups = {"a", "b", "d"};
    } else if (tag == "gmm-full-3") {
        m.kind = MethodKind::gmm_subset;
        m.groups = {"a", "b"};
    } else if (tag.rfind("gmm-subset:", 0) == 0) {
        m.kind = MethodKind::gmm_subset;
        m.groups = split(tag.substr(11), '+');
        for (const auto& g : m.groups) {
            if (g.empty()) throw ConfigError("empty group name in method '" + tag + "'");
        }
    } else if (tag == "phd-y") {
        m.kind = MethodKind::phd_y;
    } else if (tag == "phd-residual") {
        m.kind = MethodKind::phd_residual;
    } else if (tag == "robustified") {
        m.kind = MethodKind::robustified;
    } else if (tag.rfind("augmented:", 0) == 0) {
        m.kind = MethodKind::augmented;
        const std::string num = tag.substr(10);
        char* end = nullptr;
        m.kappa = std::strtod(num.c_str(), &end);
        if (num.empty() || *end != '\0' || !(m.kappa >= 0.0)) {
            throw ConfigError("augmented method needs a nonnegative kappa, got '" + num + "'");
        }
    } else {
        throw ConfigError("unknown method tag '" + tag + "'");
    }
    return m;
}

SubspaceEstimate pca_subspace(const Dataset& data, Index r) {
    const MatrixXd X = data.x;
    const MatrixXd Xc = X.rowwise() - X.colwise().mean();
    const MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(data.n());
    if (r < 1 || r > cov.rows()) throw DimensionError("subspace dimension r must lie in [1, p]");
    return top_eigen(cov, r);
}

MethodOutput run_method(const MethodSpec& method, const MethodInput& in) {
    if (!in.data || !in.moments) throw ParameterError("method input is incomplete");
    const MomentMatrix& mm = *in.moments;
    const MomentFunctionSet& set = mm.moments();
    switch (method.kind) {
        case MethodKind::standard:
            if (in.standard_is_pca) return {pca_subspace(*in.data, in.r), std::nullopt};
            return {identity_weighted(columns(mm.V(), group_columns(set, in.standard_groups)), in),
                    std::nullopt};
        case MethodKind::identity: return {identity_weighted(mm.V(), in), std::nullopt};
        case MethodKind::gmm_full: return two_step(mm, WeightShape::full, in);
        case MethodKind::gmm_diagonal: return two_step(mm, WeightShape::diagonal, in);
        case MethodKind::gmm_subset: {
            const auto cols = group_columns(set, method.groups);
            const MomentMatrix sub = materialize(mm.data(), set.subset(cols));
            return two_step(sub, WeightShape::full, in);
        }
        case MethodKind::phd_y:
            return {identity_weighted(columns(mm.V(), group_columns(set, {"phd-y"})), in), std::nullopt};
        case MethodKind::phd_residual:
            return {identity_weighted(columns(mm.V(), group_columns(set, {"phd-residual"})), in),
                    std::nullopt};
        case MethodKind::robustified:
            return {identity_weighted(columns(mm.V(), group_columns(set, {"d"})), in), std::nullopt};
        case MethodKind::augmented: {
            TwoStepOptions opts;
            opts.r = in.r;
            opts.delta = in.delta;
            opts.iterations = in.iterations;
            const TwoStepResult res = two_step_gmm(mm, opts);
            const MatrixXd X = in.data->x;
            const MatrixXd M = X.transpose() * X / static_cast<double>(in.data->n());
            return {augmented_eigen(method.kappa, M, mm.V(), res.weight, in.r), std::nullopt};
        }
    }
    throw ConfigError("unhandled method '" + method.tag + "'");
}

// ---- configuration ----------------------------------------------------------------------

ExperimentKind parse_experiment_kind(const std::string& name) {
    if (name == "example1") return ExperimentKind::example1;
    if (name == "example2") return ExperimentKind::example2;
    if (name == "example3") return ExperimentKind::example3;
    if (name == "dimest") return ExperimentKind::dimest;
    if (name == "custom") return ExperimentKind::custom;
    throw ConfigError("unknown experiment '" + name + "'");
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::example1: return "example1";
        case ExperimentKind::example2: return "example2";
        case ExperimentKind::example3: return "example3";
        case ExperimentKind::dimest: return "dimest";
        case ExperimentKind::custom: return "custom";
    }
    return "?";
}

ExperimentConfig default_config(const std::string& name) {
    ExperimentConfig c;
    c.name = name;
    switch (parse_experiment_kind(name)) {
        case ExperimentKind::example1:
            c.n = 500;
            c.sigma = 2.0;
            c.methods = {"standard", "gmm-full", "gmm-diagonal"};
            c.sweep = Sweep{"mu", {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0}};
            break;
        case ExperimentKind::example2:
            c.n = 800;
            c.sigma = 1.0;
            c.methods = {"standard", "robustified", "gmm-full", "gmm-diagonal", "gmm-full-2",
                         "gmm-full-3"};
            c.sweep = Sweep{"n", {200, 400, 800, 1600, 3200}};
            break;
        case ExperimentKind::example3:
            c.n = 400;
            c.methods = {"phd-y", "phd-residual", "gmm-diagonal", "gmm-full"};
            c.sweep = Sweep{"variant", {0, 1, 2}};
            break;
        case ExperimentKind::dimest:
            c.mu = 2.0;
            c.sigma = 2.0;
            c.n_per_r = 250;
            c.methods = {"gmm-full"};
            c.sweep = Sweep{"r", {2, 4}};
            break;
        case ExperimentKind::custom:
            c.methods = {"identity", "gmm-full"};
            c.moments = nlohmann::json::array({{{"builder", "factor"}, {"sigma", 2.0}}});
            break;
    }
    return c;
}

void validate(const ExperimentConfig& c) {
    const auto kind = parse_experiment_kind(c.name);
    if (c.replicates < 1) throw ConfigError("replicates must be at least 1");
    if (!c.seed) throw ConfigError("experiments need an explicit seed");
    if (c.p < 2) throw ConfigError("p must be at least 2");
    if (c.n < 1) throw ConfigError("n must be at least 1");
    if (!(c.delta >= 0.0)) throw ConfigError("delta must be nonnegative");
    if (!(c.eta_quantile > 0.0 && c.eta_quantile < 1.0)) {
        throw ConfigError("eta_quantile must lie in (0, 1)");
    }
    if (c.iterations < 1) throw ConfigError("iterations must be at least 1");
    if (c.sigma < 0.0 || c.noise_scale < 0.0 || c.beta_radius < 0.0) {
        throw ConfigError("sigma, noise_scale and beta_radius must be nonnegative");
    }
    if (kind == ExperimentKind::custom) {
        static const std::set<std::string> models{"factor", "mixed_linear", "mixed_logistic", "index"};
        if (!models.count(c.model)) throw ConfigError("unknown model '" + c.model + "'");
    }
    if (c.sweep) {
        static const std::set<std::string> params{"mu", "n", "r", "variant"};
        if (!params.count(c.sweep->parameter)) {
            throw ConfigError("unknown sweep parameter '" + c.sweep->parameter + "'");
        }
        if (c.sweep->values.empty()) throw ConfigError("sweep has no values");
        for (double v : c.sweep->values) {
            if (c.sweep->parameter == "variant" && v != 0.0 && v != 1.0 && v != 2.0) {
                throw ConfigError("variant sweep values must be A, B or C");
            }
            if ((c.sweep->parameter == "n" || c.sweep->parameter == "r") &&
                (v < 1.0 || v != std::floor(v))) {
                throw ConfigError("sweep values for n and r must be positive integers");
            }
        }
    }
    if (c.methods.empty()) throw ConfigError("no methods configured");

    for (const auto& point : grid_of(c)) {
        const ExperimentConfig& g = point.cfg;
        if (g.n < 1) throw ConfigError("n must be at least 1");
        if (is_factor(g) && (g.r < 1 || g.r >= g.p)) {
            throw ConfigError("factor designs need 1 <= r < p");
        }
        if (!is_factor(g) && kind != ExperimentKind::example3 && (g.K < 1 || g.K > g.p)) {
            throw ConfigError("mixture designs need 1 <= K <= p");
        }
    }

    MomentFunctionSet set;
    try {
        set = experiment_moments(c);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("invalid moment configuration: ") + e.what());
    }
    std::set<std::string> groups;
    for (const auto& d : set.descriptors()) groups.insert(d.group);
    auto need = [&](const std::string& tag, const std::string& g) {
        if (!groups.count(g)) {
            throw ConfigError("method '" + tag + "' needs moment group '" + g + "', which " +
                              c.name + " does not provide");
        }
    };
    for (const auto& tag : c.methods) {
        const MethodSpec m = parse_method(tag);
        switch (m.kind) {
            case MethodKind::standard:
                if (kind == ExperimentKind::example3) {
                    throw ConfigError("method 'standard' is not defined for example3");
                }
                if (kind == ExperimentKind::example2) need(tag, "b");
                break;
            case MethodKind::gmm_subset:
                for (const auto& g : m.groups) need(tag, g);
                break;
            case MethodKind::phd_y: need(tag, "phd-y"); break;
            case MethodKind::phd_residual: need(tag, "phd-residual"); break;
            case MethodKind::robustified: need(tag, "d"); break;
            default: break;
        }
    }
}

ExperimentConfig config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    try {
        if (doc.value("version", 1) != 1) throw ConfigError("unsupported config version");
        ExperimentConfig c = default_config(doc.value("name", std::string("custom")));
        if (doc.contains("n")) c.n = doc["n"].get<Index>();
        if (doc.contains("p")) c.p = doc["p"].get<Index>();
        if (doc.contains("r")) c.r = doc["r"].get<Index>();
        if (doc.contains("K")) c.K = doc["K"].get<Index>();
        if (doc.contains("mu")) c.mu = doc["mu"].get<double>();
        if (doc.contains("sigma")) c.sigma = doc["sigma"].get<double>();
        if (doc.contains("variant")) c.variant = parse_index_variant(doc["variant"].get<std::string>());
        if (doc.contains("beta_radius")) c.beta_radius = doc["beta_radius"].get<double>();
        if (doc.contains("noise_scale")) c.noise_scale = doc["noise_scale"].get<double>();
        if (doc.contains("n_per_r")) {
            if (doc["n_per_r"].is_null()) {
                c.n_per_r.reset();
            } else {
                c.n_per_r = doc["n_per_r"].get<Index>();
            }
        }
        if (doc.contains("methods")) c.methods = doc["methods"].get<std::vector<std::string>>();
        if (doc.contains("replicates")) c.replicates = doc["replicates"].get<int>();
        if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("delta")) c.delta = doc["delta"].get<double>();
        if (doc.contains("eta_quantile")) c.eta_quantile = doc["eta_quantile"].get<double>();
        if (doc.contains("iterations")) c.iterations = doc["iterations"].get<int>();
        if (doc.contains("record_runtime")) c.record_runtime = doc["record_runtime"].get<bool>();
        if (doc.contains("model")) c.model = doc["model"].get<std::string>();
        if (doc.contains("moments")) c.moments = doc["moments"];
        if (doc.contains("sweep")) {
            if (doc["sweep"].is_null()) {
                c.sweep.reset();
            } else {
                Sweep s;
                s.parameter = doc["sweep"].at("parameter").get<std::string>();
                for (const auto& v : doc["sweep"].at("values")) s.values.push_back(sweep_value(v));
                c.sweep = std::move(s);
            }
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
}

nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json doc{{"version", 1},
                       {"name", c.name},
                       {"n", c.n},
                       {"p", c.p},
                       {"r", c.r},
                       {"K", c.K},
                       {"mu", c.mu},
                       {"sigma", c.sigma},
                       {"variant", to_string(c.variant)},
                       {"beta_radius", c.beta_radius},
                       {"noise_scale", c.noise_scale},
                       {"methods", c.methods},
                       {"replicates", c.replicates},
                       {"delta", c.delta},
                       {"eta_quantile", c.eta_quantile},
                       {"iterations", c.iterations},
                       {"record_runtime", c.record_runtime},
                       {"model", c.model}};
    doc["n_per_r"] = c.n_per_r ? nlohmann::json(*c.n_per_r) : nlohmann::json(nullptr);
    doc["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
    doc["moments"] = c.moments.is_null() ? nlohmann::json::array() : c.moments;
    if (c.sweep) {
        doc["sweep"] = {{"parameter", c.sweep->parameter}, {"values", c.sweep->values}};
    } else {
        doc["sweep"] = nullptr;
    }
    return doc;
}

// ---- running ---------------------------------------------------------------------------

ExperimentResult run_experiment(const ExperimentConfig& config) {
    validate(config);
    const auto kind = parse_experiment_kind(config.name);
    const std::uint64_t master = *config.seed;
    const std::vector<GridPoint> grid = grid_of(config);
    std::vector<MethodSpec> methods;
    for (const auto& tag : config.methods) methods.push_back(parse_method(tag));
    const MomentFunctionSet set = experiment_moments(config);
    const bool rank_study = kind == ExperimentKind::dimest;

    const auto reps = static_cast<Index>(config.replicates);
    const auto tasks = static_cast<Index>(grid.size()) * reps;
    // slots[task][method]
    std::vector<std::vector<ResultRow>> slots(static_cast<std::size_t>(tasks));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(tasks));

#pragma omp parallel for schedule(dynamic)
    for (Index t = 0; t < tasks; ++t) {
        try {
            const Index g = t / reps;
            const Index b = t % reps;
            const GridPoint& point = grid[static_cast<std::size_t>(g)];
            const ExperimentConfig& cfg = point.cfg;
            const std::uint64_t seed =
                derive_seed(master, {static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(b)});
            const Simulation sim = simulate(cfg, master, seed);
            const auto data = std::make_shared<const Dataset>(sim.data);
            const MomentFunctionSet grid_set =
                cfg.p == config.p ? set : experiment_moments(cfg);
            const MomentMatrix mm = materialize(data, grid_set);

            MethodInput in;
            in.data = data.get();
            in.moments = &mm;
            in.r = true_dimension(cfg);
            in.delta = cfg.delta;
            in.eta_quantile = cfg.eta_quantile;
            in.iterations = cfg.iterations;
            in.standard_is_pca = is_factor(cfg);
            if (kind == ExperimentKind::example2) in.standard_groups = {"b"};

            auto& out = slots[static_cast<std::size_t>(t)];
            for (const auto& method : methods) {
                const auto start = std::chrono::steady_clock::now();
                const MethodOutput res = run_method(method, in);
                const auto stop = std::chrono::steady_clock::now();

                ResultRow row;
                row.grid_index = g;
                row.grid_label = point.label;
                row.grid_value = point.value;
                row.method = method.tag;
                row.replicate = static_cast<int>(b);
                row.true_r = in.r;
                const SubspaceMetrics metrics = subspace_metrics(res.estimate.U, sim.truth.basis);
                row.distance = metrics.distance;
                row.distance_sq = metrics.distance * metrics.distance;
                row.spectral = metrics.spectral;
                row.spectral_sq = metrics.spectral * metrics.spectral;
                if (rank_study && is_two_step(method.kind)) {
                    MethodInput auto_in = in;
                    auto_in.auto_rank = true;
                    const MethodOutput ranked = run_method(method, auto_in);
                    if (ranked.rank) {
                        row.r_tau = ranked.rank->r_tau;
                        row.r_eta = ranked.rank->r_eta;
                    }
                }
                if (config.record_runtime) {
                    row.runtime_ms = std::chrono::duration<double, std::milli>(stop - start).count();
                }
                out.push_back(std::move(row));
            }
        } catch (...) {
            errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    ExperimentResult result;
    result.config = config;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        for (std::size_t k = 0; k < methods.size(); ++k) {
            for (Index b = 0; b < reps; ++b) {
                result.rows.push_back(slots[g * static_cast<std::size_t>(reps) + static_cast<std::size_t>(b)][k]);
            }
        }
    }
    result.summary = summarize(result.rows);
    return result;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
    std::vector<SummaryRow> out;
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        while (j < rows.size() && rows[j].grid_index == rows[i].grid_index &&
               rows[j].method == rows[i].method) {
            ++j;
        }
        const double count = static_cast<double>(j - i);
        auto mean_se = [&](auto field, double& mean, double& se) {
            double sum = 0.0;
            for (std::size_t k = i; k < j; ++k) sum += field(rows[k]);
            mean = sum / count;
            if (j - i < 2) {
                se = kNaN;
                return;
            }
            double ss = 0.0;
            for (std::size_t k = i; k < j; ++k) ss += (field(rows[k]) - mean) * (field(rows[k]) - mean);
            se = std::sqrt(ss / (count - 1.0)) / std::sqrt(count);
        };
        SummaryRow s;
        s.grid_index = rows[i].grid_index;
        s.grid_label = rows[i].grid_label;
        s.grid_value = rows[i].grid_value;
        s.method = rows[i].method;
        s.replicates = static_cast<int>(j - i);
        mean_se([](const ResultRow& r) { return r.distance; }, s.mean_distance, s.se_distance);
        mean_se([](const ResultRow& r) { return r.distance_sq; }, s.mean_distance_sq, s.se_distance_sq);
        mean_se([](const ResultRow& r) { return r.spectral; }, s.mean_spectral, s.se_spectral);
        mean_se([](const ResultRow& r) { return r.spectral_sq; }, s.mean_spectral_sq, s.se_spectral_sq);
        std::vector<double> d;
        for (std::size_t k = i; k < j; ++k) d.push_back(rows[k].distance);
        s.median_distance = sample_quantile(d, 0.5);
        if (rows[i].r_tau) {
            double tau_hits = 0.0;
            double eta_hits = 0.0;
            for (std::size_t k = i; k < j; ++k) {
                const Index r = rows[k].true_r;
                if (rows[k].r_tau && *rows[k].r_tau == r) tau_hits += 1.0;
                if (rows[k].r_eta && (*rows[k].r_eta == r || *rows[k].r_eta == r - 1)) eta_hits += 1.0;
            }
            s.frac_r_tau_correct = tau_hits / count;
            s.frac_r_eta_within = eta_hits / count;
        }
        out.push_back(std::move(s));
        i = j;
    }
    return out;
}

const SummaryRow& find_summary(const ExperimentResult& result, Index grid_index,
                               const std::string& method) {
    for (const auto& s : result.summary) {
        if (s.grid_index == grid_index && s.method == method) return s;
    }
    throw ParameterError("no summary for method '" + method + "' at grid index " +
                         std::to_string(grid_index));
}

double pooled_se(const SummaryRow& a, const SummaryRow& b) {
    return std::sqrt(a.se_distance * a.se_distance + b.se_distance * b.se_distance);
}

}  // namespace sgmm
