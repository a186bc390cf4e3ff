// Command-line front end: simulate, estimate, rank, experiment, distributed,
// bootstrap and r2 subcommands.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "sgmm/distributed.hpp"
#include "sgmm/error.hpp"
#include "sgmm/harness.hpp"
#include "sgmm/rng.hpp"

namespace fs = std::filesystem;
using namespace sgmm;

namespace {

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

/// A moment-set document, a builder list, or {"builders": [...]}.
MomentFunctionSet load_moments(const std::string& path, Index p) {
    const nlohmann::json doc = read_json(path);
    if (doc.is_array()) return moment_set_from_builders(doc, p);
    if (doc.contains("builders")) return moment_set_from_builders(doc.at("builders"), p);
    return moment_set_from_json(doc);
}

std::optional<std::string> opt_string(const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

std::optional<Index> parse_rank(const std::string& s) {
    if (s == "auto") return std::nullopt;
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return static_cast<Index>(v);
    } catch (const std::exception&) {
        throw ConfigError("--r must be a positive integer or 'auto'");
    }
}

struct DataArgs {
    std::string path;
    std::string response;
    std::string moments;
};

void add_data_args(CLI::App* cmd, DataArgs& a, bool need_moments = true) {
    cmd->add_option("--data", a.path, "Input CSV file")->required();
    cmd->add_option("--response", a.response, "Name of the response column");
    if (need_moments) {
        cmd->add_option("--moments", a.moments, "Moment-set JSON (document or builder list)")
            ->required();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subspace estimation from overidentifying moment vectors"};
    app.require_subcommand(1);

    // simulate ----------------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset as CSV");
    std::string sim_model = "factor";
    std::string sim_out;
    std::string sim_truth;
    std::string sim_variant = "A";
    std::uint64_t sim_seed = 0;
    Index sim_n = 500, sim_p = 10, sim_r = 2, sim_K = 2;
    double sim_mu = 0.0, sim_sigma = 2.0, sim_radius = 4.0, sim_noise = 0.5;
    sim->add_option("--model", sim_model, "factor | mixed_linear | mixed_logistic | index")
        ->check(CLI::IsMember({"factor", "mixed_linear", "mixed_logistic", "index"}));
    sim->add_option("--n", sim_n, "Sample count");
    sim->add_option("--p", sim_p, "Covariate dimension");
    sim->add_option("--r", sim_r, "Factor count (factor model)");
    sim->add_option("--K", sim_K, "Mixture components");
    sim->add_option("--mu", sim_mu, "Factor mean scale: mu_z = (mu, -mu, ...)");
    sim->add_option("--sigma", sim_sigma, "Noise scale");
    sim->add_option("--beta-radius", sim_radius, "Regression-vector radius");
    sim->add_option("--variant", sim_variant, "Index-model variant A | B | C");
    sim->add_option("--noise-scale", sim_noise, "Index-model noise scale");
    sim->add_option("--seed", sim_seed, "Random seed")->required();
    sim->add_option("--out", sim_out, "Output CSV")->required();
    sim->add_option("--truth", sim_truth, "Optional JSON file for the true basis");

    // estimate ------------------------------------------------------------------
    auto* est = app.add_subcommand("estimate", "Two-step estimate of the subspace");
    DataArgs est_data;
    std::string est_r = "auto";
    std::string est_shape = "full";
    std::string est_out;
    double est_delta = 0.01;
    double est_eta = 0.95;
    int est_iter = 1;
    add_data_args(est, est_data);
    est->add_option("--r", est_r, "Subspace dimension or 'auto'");
    est->add_option("--delta", est_delta, "Threshold for the pseudoinverse");
    est->add_option("--shape", est_shape, "full | diagonal")->check(CLI::IsMember({"full", "diagonal"}));
    est->add_option("--iterations", est_iter, "Weight-update iterations");
    est->add_option("--eta-quantile", est_eta, "Chi-squared quantile for rank selection");
    est->add_option("--out", est_out, "Output JSON (stdout when omitted)");

    // rank ----------------------------------------------------------------------
    auto* rank = app.add_subcommand("rank", "Rank statistics table");
    DataArgs rank_data;
    double rank_delta = 0.01;
    double rank_eta = 0.95;
    std::optional<double> rank_tau;
    std::string rank_out;
    add_data_args(rank, rank_data);
    rank->add_option("--delta", rank_delta, "Threshold for the pilot pseudoinverse");
    rank->add_option("--eta-quantile", rank_eta, "Chi-squared quantile");
    rank->add_option("--tau", rank_tau, "Eigenvalue threshold (default n^-1/2 tr/p)");
    rank->add_option("--out", rank_out, "Output CSV (stdout when omitted)");

    // experiment ----------------------------------------------------------------
    auto* exp = app.add_subcommand("experiment", "Run a Monte Carlo experiment");
    std::string exp_name;
    std::string exp_config;
    std::string exp_format = "csv";
    std::string exp_out;
    std::uint64_t exp_seed = 0;
    std::optional<int> exp_reps;
    std::optional<double> exp_delta;
    std::optional<double> exp_eta;
    std::optional<int> exp_threads;
    bool exp_timing = false;
    auto* name_opt = exp->add_option("--name", exp_name, "example1 | example2 | example3 | dimest");
    exp->add_option("--config", exp_config, "Experiment config JSON")->excludes(name_opt);
    exp->add_option("--seed", exp_seed, "Master seed")->required();
    exp->add_option("--replicates", exp_reps, "Replicates per grid point (default 100)");
    exp->add_option("--delta", exp_delta, "Threshold (default 0.01)");
    exp->add_option("--eta-quantile", exp_eta, "Chi-squared quantile (default 0.95)");
    exp->add_option("--format", exp_format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    exp->add_option("--out", exp_out, "Output prefix (csv) or file (json)")->required();
    exp->add_option("--threads", exp_threads, "OpenMP worker count");
    exp->add_flag("--timing", exp_timing, "Record per-method runtime");

    // distributed -----------------------------------------------------------------
    auto* dist = app.add_subcommand("distributed", "Aggregate shard summaries");
    std::string dist_dir;
    std::string dist_response;
    std::string dist_moments;
    std::string dist_r = "auto";
    std::string dist_out;
    double dist_delta = 0.01;
    dist->add_option("--shards", dist_dir, "Directory of shard CSV files")->required();
    dist->add_option("--response", dist_response, "Name of the response column");
    dist->add_option("--moments", dist_moments, "Moment-set JSON applied to every shard")->required();
    dist->add_option("--r", dist_r, "Subspace dimension or 'auto'");
    dist->add_option("--delta", dist_delta, "Threshold for the local pseudoinverses");
    dist->add_option("--out", dist_out, "Output JSON (stdout when omitted)");

    // bootstrap -------------------------------------------------------------------
    auto* boot = app.add_subcommand("bootstrap", "Nonparametric bootstrap of a method");
    DataArgs boot_data;
    BootstrapOptions boot_opts;
    std::string boot_truth;
    std::string boot_out;
    add_data_args(boot, boot_data);
    boot->add_option("--method", boot_opts.method, "Method tag (default gmm-full)");
    boot->add_option("--r", boot_opts.r, "Subspace dimension")->required();
    boot->add_option("--delta", boot_opts.delta, "Threshold");
    boot->add_option("--resamples", boot_opts.resamples, "Number of resamples (default 100)");
    boot->add_option("--seed", boot_opts.seed, "Random seed")->required();
    boot->add_option("--truth", boot_truth, "Subspace JSON to measure against");
    boot->add_flag("--identity-resample", boot_opts.identity_resample, "Reuse the original rows");
    boot->add_option("--out", boot_out, "Output CSV (stdout when omitted)");

    // r2 ----------------------------------------------------------------------------
    auto* r2 = app.add_subcommand("r2", "R^2 of a regression on projected covariates");
    DataArgs r2_data;
    std::string r2_dirs;
    int r2_degree = 2;
    bool r2_whiten = false;
    add_data_args(r2, r2_data, false);
    r2->add_option("--directions", r2_dirs, "Subspace JSON with the directions")->required();
    r2->add_option("--degree", r2_degree, "1 or 2 (quadratic with cross terms)")
        ->check(CLI::IsMember({1, 2}));
    r2->add_flag("--whiten", r2_whiten, "Whiten the covariates first");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            Simulation s;
            VectorXd mu_z(sim_r);
            for (Index k = 0; k < sim_r; ++k) mu_z(k) = k % 2 == 0 ? sim_mu : -sim_mu;
            if (sim_model == "factor") {
                s = gen_factor({sim_n, sim_p, sim_r, mu_z, sim_sigma}, sim_seed);
            } else if (sim_model == "mixed_linear") {
                s = gen_mixed_linear({sim_n, sim_p, sim_K, sim_radius, sim_sigma, 1.0}, sim_seed);
            } else if (sim_model == "mixed_logistic") {
                s = gen_mixed_logistic({sim_n, sim_p, sim_K, sim_radius, sim_sigma, 1.0}, sim_seed);
            } else {
                s = gen_index_model({sim_n, sim_p, parse_index_variant(sim_variant), sim_noise},
                                    sim_seed);
            }
            write_csv(sim_out, s.data);
            for (const auto& note : s.notes) std::cerr << "note: " << note << '\n';
            if (!sim_truth.empty()) {
                SubspaceEstimate t;
                t.U = s.truth.basis;
                t.r = s.truth.r();
                t.eigenvalues = VectorXd::Zero(s.truth.p());
                write_output(sim_truth, to_json(t).dump(2) + "\n");
            }
        } else if (*est) {
            const Dataset data = load_csv(est_data.path, opt_string(est_data.response));
            const MomentFunctionSet set = load_moments(est_data.moments, data.dim());
            const MomentMatrix mm = materialize(data, set);
            TwoStepOptions opts;
            opts.r = parse_rank(est_r);
            opts.delta = est_delta;
            opts.shape = est_shape == "full" ? WeightShape::full : WeightShape::diagonal;
            opts.iterations = est_iter;
            opts.eta_quantile = est_eta;
            const TwoStepResult res = two_step_gmm(mm, opts);
            for (const auto& w : res.estimate.warnings) std::cerr << "warning: " << w << '\n';
            write_output(est_out, to_json(res.estimate).dump(2) + "\n");
        } else if (*rank) {
            const Dataset data = load_csv(rank_data.path, opt_string(rank_data.response));
            const MomentFunctionSet set = load_moments(rank_data.moments, data.dim());
            const MomentMatrix mm = materialize(data, set);
            TwoStepOptions opts;
            opts.delta = rank_delta;
            opts.eta_quantile = rank_eta;
            opts.tau = rank_tau;
            const TwoStepResult res = two_step_gmm(mm, opts);
            for (const auto& w : res.estimate.warnings) std::cerr << "warning: " << w << '\n';
            std::cerr << "r_tau = " << res.rank->r_tau << ", r_eta = " << res.rank->r_eta << '\n';
            write_output(rank_out, rank_table_csv(*res.rank));
        } else if (*exp) {
            ExperimentConfig cfg;
            if (!exp_config.empty()) {
                cfg = config_from_json(read_json(exp_config));
            } else if (!exp_name.empty()) {
                cfg = default_config(exp_name);
            } else {
                throw ConfigError("experiment needs --name or --config");
            }
            cfg.seed = exp_seed;
            if (exp_reps) cfg.replicates = *exp_reps;
            if (exp_delta) cfg.delta = *exp_delta;
            if (exp_eta) cfg.eta_quantile = *exp_eta;
            cfg.record_runtime = cfg.record_runtime || exp_timing;
#ifdef _OPENMP
            if (exp_threads) omp_set_num_threads(*exp_threads);
#endif
            const ExperimentResult result = run_experiment(cfg);
            emit(result, exp_format == "csv" ? OutputFormat::csv : OutputFormat::json, exp_out);
            for (const auto& s : result.summary) {
                std::cerr << s.grid_label << '\t' << s.method << "\tmean " << s.mean_distance
                          << "\tse " << s.se_distance << '\n';
            }
        } else if (*dist) {
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(dist_dir)) {
                if (entry.path().extension() == ".csv") files.push_back(entry.path());
            }
            std::sort(files.begin(), files.end());
            if (files.empty()) throw IoError("no .csv shards in '" + dist_dir + "'");
            std::vector<Dataset> shards;
            std::vector<std::string> ids;
            for (const auto& f : files) {
                shards.push_back(load_csv(f.string(), opt_string(dist_response)));
                ids.push_back(f.stem().string());
            }
            const MomentFunctionSet set = load_moments(dist_moments, shards.front().dim());
            std::vector<MomentFunctionSet> sets(shards.size(), set);
            DistributedOptions opts;
            opts.r = parse_rank(dist_r);
            opts.delta = dist_delta;
            InProcessTransport transport;
            const DistributedResult res = distributed_pipeline(shards, sets, opts, &transport, ids);
            for (const auto& [round, per_shard] : transport.bytes()) {
                for (const auto& [id, b] : per_shard) {
                    std::cerr << "round " << round << " shard " << id << ": " << b << " bytes\n";
                }
            }
            for (const auto& w : res.estimate.warnings) std::cerr << "warning: " << w << '\n';
            write_output(dist_out, to_json(res.estimate).dump(2) + "\n");
        } else if (*boot) {
            const Dataset data = load_csv(boot_data.path, opt_string(boot_data.response));
            const MomentFunctionSet set = load_moments(boot_data.moments, data.dim());
            if (!boot_truth.empty()) {
                boot_opts.truth = subspace_estimate_from_json(read_json(boot_truth)).U;
            }
            const BootstrapResult res = bootstrap(data, set, boot_opts);
            std::cerr << "mean distance " << res.mean_distance << ", sd " << res.sd_distance << '\n';
            write_output(boot_out, bootstrap_csv(res));
        } else if (*r2) {
            Dataset data = load_csv(r2_data.path, opt_string(r2_data.response));
            if (r2_whiten) data = whiten(data);
            const SubspaceEstimate dirs = subspace_estimate_from_json(read_json(r2_dirs));
            std::cout << evaluate_projection_r2(data, dirs.U, r2_degree) << '\n';
        }
    } catch (const sgmm::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
