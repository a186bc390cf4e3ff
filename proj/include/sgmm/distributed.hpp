#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgmm/estimator.hpp"

namespace sgmm {

inline constexpr int kSummaryWireVersion = 1;

/// A failure inside one shard, tagged with its id.
class ShardError : public Error {
public:
    ShardError(std::string shard, const std::string& what)
        : Error("shard '" + shard + "': " + what), shard_id(std::move(shard)) {}
    std::string shard_id;
};

/// What one shard sends to the coordinator in the second round.
struct LocalSummary {
    std::string shard_id;
    Index n_l = 0;
    Index n_total = 0;
    MatrixXd V_l;       // p x K_l, already scaled by n_l / n_total
    MatrixXd Sigma_ll;  // K_l x K_l, also scaled by n_l / n_total

    double weight() const { return static_cast<double>(n_l) / static_cast<double>(n_total); }
};

/// First-round message: the unscaled local moment averages.
struct LocalMoments {
    std::string shard_id;
    Index n_l = 0;
    MatrixXd V;  // p x K_l
};

/// Wire forms. Matrices travel as flat arrays: V column-major, Sigma_ll as
/// its row-major upper triangle.
nlohmann::json to_json(const LocalSummary& s);
LocalSummary local_summary_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const LocalMoments& s);
LocalMoments local_moments_from_json(const nlohmann::json& doc);

LocalMoments local_moments(const std::string& shard_id, const Dataset& shard,
                           const MomentFunctionSet& set);

LocalSummary local_summarize(const std::string& shard_id, const Dataset& shard,
                             const MomentFunctionSet& set, const MatrixXd& pilot, Index n_total);

/// Top-r eigenvectors of sum_l V_l pinv_delta(Sigma_ll) V_l^T.
SubspaceEstimate aggregate(const std::vector<LocalSummary>& summaries, Index r, double delta);

/// Serializes every message crossing the shard boundary and counts its bytes.
class InProcessTransport {
public:
    std::string send(const std::string& shard_id, int round, const nlohmann::json& message);

    /// bytes()[round][shard_id]
    const std::map<int, std::map<std::string, std::size_t>>& bytes() const { return bytes_; }
    std::size_t total_bytes() const;

private:
    std::map<int, std::map<std::string, std::size_t>> bytes_;
};

struct DistributedResult {
    SubspaceEstimate estimate;
    SubspaceEstimate pilot;
    std::vector<LocalSummary> summaries;  // as decoded by the coordinator
    std::optional<RankEstimate> rank;
};

struct DistributedOptions {
    std::optional<Index> r;  // nullopt selects r from the aggregated spectrum
    double delta = 0.01;
    std::optional<double> tau;
    double eta_quantile = 0.95;
};

/// Round 1: shards send unscaled V_l; the coordinator forms the pilot with
/// W = I on the concatenation. Round 2: shards send LocalSummary for that pilot.
DistributedResult distributed_pipeline(const std::vector<Dataset>& shards,
                                       const std::vector<MomentFunctionSet>& sets,
                                       const DistributedOptions& options,
                                       InProcessTransport* transport = nullptr,
                                       const std::vector<std::string>& shard_ids = {});

}  // namespace sgmm
