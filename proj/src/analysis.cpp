#include "arbiter/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace arbiter::analysis {

namespace {

double local_branch(const ClusterStats& s) { return 1.0 - s.table.q_fs(); }

double remote_branch(const ClusterStats& s, const RewardWeights& w) {
    return s.table.q_fs() - w.alpha_tau * s.mean_penalized_latency_remote - w.alpha_cost * s.mean_cost_remote;
}

double weight_sum(std::span<const ClusterStats> clusters) {
    double sum = 0.0;
    for (const auto& c : clusters) sum += c.weight;
    return sum;
}

void require_weights(std::span<const ClusterStats> clusters) {
    if (clusters.empty()) throw InvalidInput("at least one cluster is required");
    for (const auto& c : clusters)
        if (!(c.weight >= 0.0 && c.weight <= 1.0)) throw InvalidInput("cluster weight outside [0, 1]");
    if (std::abs(weight_sum(clusters) - 1.0) > 1e-9) throw InvalidInput("cluster weights must sum to 1");
}

}  // namespace

std::string to_string(Regime r) {
    switch (r) {
        case Regime::AllLocal: return "all_local";
        case Regime::AllRemote: return "all_remote";
        case Regime::Mixed: return "mixed";
    }
    return "unknown";
}

PolicyValue noncontextual_policy_value(const ClusterStats& overall, const RewardWeights& weights) {
    const double local = local_branch(overall);
    const double remote = remote_branch(overall, weights);
    // strict: ties stay local
    return local < remote ? PolicyValue{1, remote} : PolicyValue{0, local};
}

PolicyValue cluster_policy_value(const ClusterStats& cluster, const RewardWeights& weights) {
    return noncontextual_policy_value(cluster, weights);
}

double contextual_value(std::span<const ClusterStats> clusters, const RewardWeights& weights) {
    require_weights(clusters);
    double total = 0.0;
    for (const auto& c : clusters) total += c.weight * cluster_policy_value(c, weights).value;
    return total;
}

ClusterStats pooled_stats(std::span<const ClusterStats> clusters) {
    require_weights(clusters);
    const double norm = weight_sum(clusters);
    double ss = 0, sf = 0, fs = 0, ff = 0;
    ClusterStats out;
    out.mean_penalized_latency_remote = 0.0;
    out.mean_cost_remote = 0.0;
    for (const auto& c : clusters) {
        const double w = c.weight / norm;
        ss += w * c.table.q_ss();
        sf += w * c.table.q_sf();
        fs += w * c.table.q_fs();
        ff += w * c.table.q_ff();
        out.mean_penalized_latency_remote += w * c.mean_penalized_latency_remote;
        out.mean_cost_remote += w * c.mean_cost_remote;
        out.mean_penalized_latency_local += w * c.mean_penalized_latency_local;
        out.mean_cost_local += w * c.mean_cost_local;
    }
    // absorb rounding so the pooled table passes the 1e-12 sum check
    const double s = ss + sf + fs + ff;
    out.table = OutcomeTable(ss / s, sf / s, fs / s, ff / s);
    out.weight = 1.0;
    return out;
}

double superiority_gap(std::span<const ClusterStats> clusters, const RewardWeights& weights) {
    return contextual_value(clusters, weights) - noncontextual_policy_value(pooled_stats(clusters), weights).value;
}

Regime classify_regime(std::span<const ClusterStats> clusters, const RewardWeights& weights) {
    bool all_local = true;
    bool all_remote = true;
    for (const auto& c : clusters) {
        const double local = local_branch(c);
        const double remote = remote_branch(c, weights);
        all_local = all_local && local >= remote;
        all_remote = all_remote && local <= remote;
    }
    if (all_local) return Regime::AllLocal;
    if (all_remote) return Regime::AllRemote;
    return Regime::Mixed;
}

OutcomeTable merge_remote_arms(double local_p, std::span<const double> remote_ps) {
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(local_p) || !std::all_of(remote_ps.begin(), remote_ps.end(), in_unit))
        throw InvalidInput("success probabilities must lie in [0, 1]");
    double all_fail = 1.0;
    for (double p : remote_ps) all_fail *= 1.0 - p;
    const double remote = 1.0 - all_fail;
    return OutcomeTable(local_p * remote, local_p * (1.0 - remote), (1.0 - local_p) * remote,
                        (1.0 - local_p) * (1.0 - remote));
}

double expected_reward_first_principles(const ClusterStats& cluster, int arm, const RewardWeights& weights) {
    const auto& q = cluster.table;
    if (arm == 0)
        return q.q_ss() + q.q_sf() - weights.alpha_tau * cluster.mean_penalized_latency_local -
               weights.alpha_cost * cluster.mean_cost_local;
    if (arm == 1)
        return q.q_ss() + q.q_fs() - weights.alpha_tau * cluster.mean_penalized_latency_remote -
               weights.alpha_cost * cluster.mean_cost_remote;
    throw InvalidInput("two-arm analysis: arm must be 0 or 1");
}

AnalysisReport analyze(std::span<const ClusterStats> clusters, const RewardWeights& weights) {
    AnalysisReport r;
    double pooled_local = 0.0;
    double pooled_remote = 0.0;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        const auto& c = clusters[i];
        ClusterReport cr;
        cr.literal = cluster_policy_value(c, weights);
        cr.first_principles_local = expected_reward_first_principles(c, 0, weights);
        cr.first_principles_remote = expected_reward_first_principles(c, 1, weights);
        cr.first_principles_action = cr.first_principles_local < cr.first_principles_remote ? 1 : 0;
        if (cr.first_principles_action != cr.literal.action) r.disagreements.push_back(i);
        r.contextual_first_principles += c.weight * std::max(cr.first_principles_local, cr.first_principles_remote);
        pooled_local += c.weight * cr.first_principles_local;
        pooled_remote += c.weight * cr.first_principles_remote;
        r.clusters.push_back(cr);
    }
    r.noncontextual_first_principles_action = pooled_local < pooled_remote ? 1 : 0;
    r.noncontextual_first_principles = std::max(pooled_local, pooled_remote);
    r.noncontextual_literal = noncontextual_policy_value(pooled_stats(clusters), weights);
    r.contextual_literal = contextual_value(clusters, weights);
    r.gap_literal = r.contextual_literal - r.noncontextual_literal.value;
    r.regime = classify_regime(clusters, weights);
    return r;
}

AnalysisInput analysis_input_from_json(const nlohmann::json& j) {
    AnalysisInput in;
    try {
        if (j.contains("reward_weights")) in.weights = j.at("reward_weights").get<RewardWeights>();
        for (const auto& cj : j.at("clusters")) {
            ClusterStats c;
            c.table = outcome_table_from_json(cj.at("table"));
            c.mean_penalized_latency_remote = cj.value("mean_penalized_latency_remote", 0.0);
            c.mean_cost_remote = cj.value("mean_cost_remote", 0.0);
            c.weight = cj.value("weight", 1.0);
            c.mean_penalized_latency_local = cj.value("mean_penalized_latency_local", 0.0);
            c.mean_cost_local = cj.value("mean_cost_local", 0.0);
            in.clusters.push_back(c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed cluster stats JSON: ") + e.what());
    }
    if (in.weights.alpha_tau < 0.0 || in.weights.alpha_cost < 0.0)
        throw InvalidInput("reward weights must be non-negative");
    require_weights(in.clusters);
    return in;
}

nlohmann::json to_json(const AnalysisReport& r) {
    nlohmann::json j;
    auto& clusters = j["clusters"] = nlohmann::json::array();
    for (const auto& c : r.clusters) {
        clusters.push_back({{"literal_action", c.literal.action},
                            {"literal_value", c.literal.value},
                            {"first_principles_local", c.first_principles_local},
                            {"first_principles_remote", c.first_principles_remote},
                            {"first_principles_action", c.first_principles_action}});
    }
    j["noncontextual"] = {{"literal_action", r.noncontextual_literal.action},
                          {"literal_value", r.noncontextual_literal.value},
                          {"first_principles_action", r.noncontextual_first_principles_action},
                          {"first_principles_value", r.noncontextual_first_principles}};
    j["contextual"] = {{"literal_value", r.contextual_literal}, {"first_principles_value", r.contextual_first_principles}};
    j["superiority_gap"] = r.gap_literal;
    j["regime"] = to_string(r.regime);
    j["disagreements"] = r.disagreements;
    return j;
}

}  // namespace arbiter::analysis
