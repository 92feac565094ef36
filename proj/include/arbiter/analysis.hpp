#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arbiter/domain.hpp"

namespace arbiter::analysis {

/// Per-cluster statistics of the two-arm (local vs merged remote) problem.
struct ClusterStats {
    OutcomeTable table{0.0, 0.0, 0.0, 1.0};
    double mean_penalized_latency_remote = 0.0;  // tau
    double mean_cost_remote = 0.0;               // c
    double weight = 1.0;                         // data proportion w
    // Only the first-principles form uses these; the closed forms treat the local arm as free.
    double mean_penalized_latency_local = 0.0;
    double mean_cost_local = 0.0;
};

struct PolicyValue {
    int action = 0;  // 0 = local, 1 = remote
    double value = 0.0;
};

enum class Regime { AllLocal, AllRemote, Mixed };
std::string to_string(Regime r);

/// Converged choice of a selector that ignores context. Remote iff (1 - q_fs) < q_fs - a_tau tau - a_c c,
/// value = max of the two sides. Weight is ignored.
PolicyValue noncontextual_policy_value(const ClusterStats& overall, const RewardWeights& weights);

/// Same comparison restricted to one cluster.
PolicyValue cluster_policy_value(const ClusterStats& cluster, const RewardWeights& weights);

/// sum_i w_i * value_i. Weights must sum to one within 1e-9.
double contextual_value(std::span<const ClusterStats> clusters, const RewardWeights& weights);

/// Data-weighted average of every statistic, with weight 1.
ClusterStats pooled_stats(std::span<const ClusterStats> clusters);

/// contextual_value - noncontextual value of the pooled statistics. Non-negative by convexity of max.
double superiority_gap(std::span<const ClusterStats> clusters, const RewardWeights& weights);

Regime classify_regime(std::span<const ClusterStats> clusters, const RewardWeights& weights);

/// Collapses independent remotes into one arm that succeeds if any remote does.
OutcomeTable merge_remote_arms(double local_p, std::span<const double> remote_ps);

/// Exact expectation of the reward for arm 0 or 1 under the joint table.
double expected_reward_first_principles(const ClusterStats& cluster, int arm, const RewardWeights& weights);

struct ClusterReport {
    PolicyValue literal;
    double first_principles_local = 0.0;
    double first_principles_remote = 0.0;
    int first_principles_action = 0;
};

struct AnalysisReport {
    std::vector<ClusterReport> clusters;
    PolicyValue noncontextual_literal;
    double contextual_literal = 0.0;
    double gap_literal = 0.0;
    int noncontextual_first_principles_action = 0;
    double noncontextual_first_principles = 0.0;
    double contextual_first_principles = 0.0;
    Regime regime = Regime::Mixed;
    // clusters whose literal and first-principles actions disagree
    std::vector<std::size_t> disagreements;
};

AnalysisReport analyze(std::span<const ClusterStats> clusters, const RewardWeights& weights);

struct AnalysisInput {
    RewardWeights weights;
    std::vector<ClusterStats> clusters;
};

AnalysisInput analysis_input_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnalysisReport& report);

}  // namespace arbiter::analysis
