#include "sgmm/distributed.hpp"

#include <algorithm>
#include <exception>
#include <set>
#include <sstream>

#include "sgmm/error.hpp"

namespace sgmm {

namespace {

constexpr int kMaxPilotRounds = 3;

std::vector<double> flatten(const MatrixXd& A) {
    return std::vector<double>(A.data(), A.data() + A.size());
}

std::vector<double> upper_triangle(const MatrixXd& S) {
    std::vector<double> out;
    for (Index i = 0; i < S.rows(); ++i) {
        for (Index j = i; j < S.cols(); ++j) out.push_back(S(i, j));
    }
    return out;
}

MatrixXd from_upper_triangle(const std::vector<double>& v, Index k) {
    if (static_cast<Index>(v.size()) != k * (k + 1) / 2) {
        throw ParseError("Sigma_ll triangle has the wrong length");
    }
    MatrixXd S(k, k);
    std::size_t at = 0;
    for (Index i = 0; i < k; ++i) {
        for (Index j = i; j < k; ++j) {
            S(i, j) = v[at];
            S(j, i) = v[at];
            ++at;
        }
    }
    return S;
}

MatrixXd unflatten(const std::vector<double>& v, Index rows, Index cols) {
    if (static_cast<Index>(v.size()) != rows * cols) {
        throw ParseError("matrix array does not match its declared shape");
    }
    return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

void check_version(const nlohmann::json& doc) {
    if (doc.value("version", 0) != kSummaryWireVersion) {
        throw ParseError("unsupported summary wire version");
    }
}

/// Runs `fn(l)` for every shard, possibly concurrently, and rethrows the
/// failure of the lowest-numbered shard tagged with its id.
template <typename Fn>
void for_each_shard(const std::vector<std::string>& ids, Fn fn) {
    const auto count = static_cast<Index>(ids.size());
    std::vector<std::exception_ptr> errors(ids.size());
#pragma omp parallel for schedule(dynamic)
    for (Index l = 0; l < count; ++l) {
        try {
            fn(static_cast<std::size_t>(l));
        } catch (...) {
            errors[static_cast<std::size_t>(l)] = std::current_exception();
        }
    }
    for (std::size_t l = 0; l < errors.size(); ++l) {
        if (!errors[l]) continue;
        try {
            std::rethrow_exception(errors[l]);
        } catch (const ShardError&) {
            throw;
        } catch (const std::exception& e) {
            throw ShardError(ids[l], e.what());
        }
    }
}

/// Summed weighted matrix plus the concatenated system used for rank statistics.
struct Aggregated {
    MatrixXd A;
    MatrixXd V;
    WeightMatrix W;
    bool degenerate = true;
};

Aggregated aggregate_blocks(const std::vector<LocalSummary>& summaries, double delta) {
    if (summaries.empty()) throw ParameterError("aggregate needs at least one summary");
    const Index p = summaries.front().V_l.rows();
    std::set<std::string> ids;
    Index m = 0;
    for (const auto& s : summaries) {
        if (s.V_l.rows() != p) throw DimensionError("summaries differ in dimension p");
        if (s.Sigma_ll.rows() != s.V_l.cols() || s.Sigma_ll.cols() != s.V_l.cols()) {
            throw DimensionError("shard '" + s.shard_id + "': Sigma_ll does not match V_l");
        }
        if (!ids.insert(s.shard_id).second) {
            throw ParameterError("duplicate shard id '" + s.shard_id + "'");
        }
        m += s.V_l.cols();
    }
    Aggregated out;
    out.A = MatrixXd::Zero(p, p);
    out.V.resize(p, m);
    std::vector<MatrixXd> blocks;
    Index at = 0;
    for (const auto& s : summaries) {
        const WeightMatrix W = thresholded_pinv(s.Sigma_ll, delta);
        out.degenerate = out.degenerate && W.degenerate;
        out.A += s.V_l * W.W * s.V_l.transpose();
        out.V.middleCols(at, s.V_l.cols()) = s.V_l;
        at += s.V_l.cols();
        blocks.push_back(W.W);
    }
    if (out.degenerate) {
        out.W = WeightMatrix::identity(m);
        out.A = out.V * out.V.transpose();
    } else {
        out.W = WeightMatrix{MatrixXd::Zero(m, m), WeightKind::block_diagonal, {}, false};
        at = 0;
        for (const auto& b : blocks) {
            out.W.W.block(at, at, b.rows(), b.cols()) = b;
            out.W.blocks.push_back(b.rows());
            at += b.rows();
        }
    }
    return out;
}

SubspaceEstimate finish(const Aggregated& agg, Index r) {
    if (r < 1 || r > agg.A.rows()) throw DimensionError("subspace dimension r must lie in [1, p]");
    SubspaceEstimate e = top_eigen(agg.A, r);
    if (agg.degenerate) {
        e.warnings.insert(e.warnings.begin(),
                          "every local Sigma_ll thresholded to zero; falling back to W = I");
    }
    return e;
}

}  // namespace

// ---- wire forms ------------------------------------------------------------------

nlohmann::json to_json(const LocalSummary& s) {
    return nlohmann::json{{"version", kSummaryWireVersion},
                          {"shard_id", s.shard_id},
                          {"n_l", s.n_l},
                          {"n_total", s.n_total},
                          {"p", s.V_l.rows()},
                          {"K", s.V_l.cols()},
                          {"V_l", flatten(s.V_l)},
                          {"Sigma_ll", upper_triangle(s.Sigma_ll)}};
}

LocalSummary local_summary_from_json(const nlohmann::json& doc) {
    try {
        check_version(doc);
        LocalSummary s;
        s.shard_id = doc.at("shard_id").get<std::string>();
        s.n_l = doc.at("n_l").get<Index>();
        s.n_total = doc.at("n_total").get<Index>();
        const Index p = doc.at("p").get<Index>();
        const Index k = doc.at("K").get<Index>();
        s.V_l = unflatten(doc.at("V_l").get<std::vector<double>>(), p, k);
        s.Sigma_ll = from_upper_triangle(doc.at("Sigma_ll").get<std::vector<double>>(), k);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed local summary: ") + e.what());
    }
}

nlohmann::json to_json(const LocalMoments& s) {
    return nlohmann::json{{"version", kSummaryWireVersion},
                          {"shard_id", s.shard_id},
                          {"n_l", s.n_l},
                          {"p", s.V.rows()},
                          {"K", s.V.cols()},
                          {"V", flatten(s.V)}};
}

LocalMoments local_moments_from_json(const nlohmann::json& doc) {
    try {
        check_version(doc);
        LocalMoments s;
        s.shard_id = doc.at("shard_id").get<std::string>();
        s.n_l = doc.at("n_l").get<Index>();
        s.V = unflatten(doc.at("V").get<std::vector<double>>(), doc.at("p").get<Index>(),
                        doc.at("K").get<Index>());
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed local moments: ") + e.what());
    }
}

// ---- shard side -------------------------------------------------------------------

LocalMoments local_moments(const std::string& shard_id, const Dataset& shard,
                           const MomentFunctionSet& set) {
    if (shard.n() < 1) throw EmptyDatasetError("shard '" + shard_id + "' is empty");
    const MomentMatrix mm = materialize(shard, set);
    return LocalMoments{shard_id, shard.n(), mm.V()};
}

LocalSummary local_summarize(const std::string& shard_id, const Dataset& shard,
                             const MomentFunctionSet& set, const MatrixXd& pilot, Index n_total) {
    if (shard.n() < 1) throw EmptyDatasetError("shard '" + shard_id + "' is empty");
    if (n_total < shard.n()) {
        throw ParameterError("n_total is smaller than the shard's sample count");
    }
    const MomentMatrix mm = materialize(shard, set);
    LocalSummary s;
    s.shard_id = shard_id;
    s.n_l = shard.n();
    s.n_total = n_total;
    const double w = s.weight();
    s.V_l = w * mm.V();
    s.Sigma_ll = w * estimate_sigma(mm, pilot).Sigma;
    return s;
}

// ---- coordinator -------------------------------------------------------------------

SubspaceEstimate aggregate(const std::vector<LocalSummary>& summaries, Index r, double delta) {
    return finish(aggregate_blocks(summaries, delta), r);
}

std::string InProcessTransport::send(const std::string& shard_id, int round,
                                     const nlohmann::json& message) {
    std::string wire = message.dump();
    bytes_[round][shard_id] += wire.size();
    return wire;
}

std::size_t InProcessTransport::total_bytes() const {
    std::size_t total = 0;
    for (const auto& [round, shards] : bytes_) {
        for (const auto& [id, b] : shards) total += b;
    }
    return total;
}

DistributedResult distributed_pipeline(const std::vector<Dataset>& shards,
                                       const std::vector<MomentFunctionSet>& sets,
                                       const DistributedOptions& options,
                                       InProcessTransport* transport,
                                       const std::vector<std::string>& shard_ids) {
    if (shards.empty()) throw ParameterError("distributed pipeline needs at least one shard");
    if (sets.size() != shards.size()) {
        throw ParameterError("need exactly one moment set per shard");
    }
    std::vector<std::string> ids = shard_ids;
    if (ids.empty()) {
        for (std::size_t l = 0; l < shards.size(); ++l) ids.push_back("shard" + std::to_string(l));
    }
    if (ids.size() != shards.size()) throw ParameterError("need exactly one id per shard");

    InProcessTransport local_transport;
    InProcessTransport& wire = transport ? *transport : local_transport;
    // Round 1: unscaled local moments.
    std::vector<std::string> messages(shards.size());
    Index n_total = 0;
    for (const auto& s : shards) n_total += s.n();
    for_each_shard(ids, [&](std::size_t l) {
        messages[l] = to_json(local_moments(ids[l], shards[l], sets[l])).dump();
    });
    std::vector<LocalMoments> first;
    for (std::size_t l = 0; l < shards.size(); ++l) {
        first.push_back(local_moments_from_json(nlohmann::json::parse(
            wire.send(ids[l], 1, nlohmann::json::parse(messages[l])))));
    }
    const Index p = first.front().V.rows();
    Index m = 0;
    for (const auto& f : first) {
        if (f.V.rows() != p) throw DimensionError("shards differ in dimension p");
        m += f.V.cols();
    }
    MatrixXd concat_V(p, m);
    Index at = 0;
    for (const auto& f : first) {
        concat_V.middleCols(at, f.V.cols()) = f.V;
        at += f.V.cols();
    }
    const WeightMatrix I = WeightMatrix::identity(m);

    Index r = 0;
    if (options.r) {
        r = *options.r;
    } else {
        r = std::clamp<Index>(estimate_rank(concat_V, I, n_total, std::nullopt, options.eta_quantile).r_tau,
                              1, std::min(p, m));
    }

    DistributedResult out;
    for (int round = 2; round < 2 + kMaxPilotRounds; ++round) {
        out.pilot = weighted_eigen(concat_V, I, r);
        for_each_shard(ids, [&](std::size_t l) {
            messages[l] =
                to_json(local_summarize(ids[l], shards[l], sets[l], out.pilot.U, n_total)).dump();
        });
        out.summaries.clear();
        for (std::size_t l = 0; l < shards.size(); ++l) {
            out.summaries.push_back(local_summary_from_json(nlohmann::json::parse(
                wire.send(ids[l], round, nlohmann::json::parse(messages[l])))));
        }
        const Aggregated agg = aggregate_blocks(out.summaries, options.delta);
        if (options.r) {
            out.estimate = finish(agg, r);
            return out;
        }
        out.rank = estimate_rank(agg.V, agg.W, n_total, options.tau, options.eta_quantile);
        const Index next = std::max<Index>(1, out.rank->r_tau);
        if (next == r || round + 1 == 2 + kMaxPilotRounds) {
            out.estimate = finish(agg, next);
            if (next != r) out.estimate.warnings.push_back("rank selection did not settle");
            return out;
        }
        r = next;
    }
    return out;
}

}  // namespace sgmm
