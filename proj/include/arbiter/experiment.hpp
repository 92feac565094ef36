#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "arbiter/domain.hpp"
#include "arbiter/env.hpp"
#include "arbiter/metrics.hpp"
#include "arbiter/policies.hpp"

namespace arbiter {

/// Reward weights used for the four benchmark domains.
const std::map<std::string, RewardWeights>& reward_presets();
RewardWeights preset_weights(const std::string& name);

struct ExperimentConfig {
    // exactly one of these two
    std::optional<EnvironmentConfig> environment;
    std::optional<std::string> replay_path;

    PolicySpec policy;
    PpoAgentConfig ppo;
    std::uint64_t steps = 1000;
    std::optional<std::uint64_t> seed;  // defaults to the environment's rng_seed
    std::string out_dir;                // empty: no files written
    std::optional<std::string> preset;
    std::optional<RewardWeights> weights_override;
    std::optional<LatencyMode> latency_mode_override;
    bool record_probs = false;
};

struct RunResult {
    metrics::RunTrace trace;
    metrics::Summary summary;
    metrics::TradeoffPoint tradeoff;
    RewardWeights weights;
    LatencyMode latency_mode = LatencyMode::raw_seconds;
    std::uint64_t ppo_updates = 0;
};

/// Validates an experiment config; throws ConfigError listing every problem.
void validate_experiment(const ExperimentConfig& cfg);

/// sample -> decide -> observe -> learn for cfg.steps iterations. Writes trace.csv, curve.csv,
/// summary.csv and tradeoff.csv into cfg.out_dir when it is set.
RunResult run_experiment(const ExperimentConfig& cfg);

struct SweepConfig {
    ExperimentConfig base;
    std::vector<double> alpha_taus;
    std::vector<double> alpha_costs;
    std::vector<std::uint64_t> seeds;
    unsigned threads = 0;  // 0: hardware concurrency
};

struct SweepRow {
    double alpha_tau = 0.0;
    double alpha_cost = 0.0;
    metrics::Summary summary;
};

/// One independent run per (alpha_tau, alpha_cost, seed) cell, in grid order.
std::vector<SweepRow> run_sweep(const SweepConfig& cfg);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

/// Reads an optional "ppo" block: hidden, learning_rate, clip_ratio, value_coef, entropy_coef,
/// epochs, target_kl, kl_stop_factor, normalize_advantage, max_grad_norm, buffer_size, policy_init_gain.
PpoAgentConfig ppo_config_from_json(const nlohmann::json& j);

/// FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace arbiter
