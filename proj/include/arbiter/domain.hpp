#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace arbiter {

/// Raised for non-finite or out-of-domain arguments to numerical routines.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised by validate_config; carries every violated invariant, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> issues);
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    std::vector<std::string> issues_;
};

/// Encoder output for one input. Entries are finite and the length is fixed per environment.
class Context {
public:
    Context() = default;
    explicit Context(std::vector<double> values);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    friend bool operator==(const Context&, const Context&) = default;

private:
    std::vector<double> values_;
};

/// Index into the model set; 0 is always the local model.
struct ArmIndex {
    std::size_t value = 0;

    constexpr bool is_local() const noexcept { return value == 0; }
    friend constexpr auto operator<=>(ArmIndex, ArmIndex) = default;
};

struct RewardWeights {
    double alpha_tau = 0.0;
    double alpha_cost = 0.0;
};

enum class LatencyMode { raw_seconds, log10_seconds };

LatencyMode parse_latency_mode(const std::string& text);
std::string to_string(LatencyMode mode);

/// One evaluated reward: total == performance - alpha_tau * penalized_latency - alpha_cost * cost.
struct RewardBreakdown {
    double performance = 0.0;
    double raw_latency_seconds = 0.0;
    double penalized_latency = 0.0;
    double cost = 0.0;
    double total = 0.0;
};

double reward_total(double performance, double penalized_latency, double cost,
                    const RewardWeights& weights);

/// Joint (local, merged-remote) outcome probabilities. First letter is the local outcome.
class OutcomeTable {
public:
    static constexpr double kSumTolerance = 1e-12;

    OutcomeTable(double q_ss, double q_sf, double q_fs, double q_ff);

    double q_ss() const noexcept { return q_ss_; }
    double q_sf() const noexcept { return q_sf_; }
    double q_fs() const noexcept { return q_fs_; }
    double q_ff() const noexcept { return q_ff_; }

    /// Probabilities in (SS, SF, FS, FF) order.
    std::vector<double> as_vector() const { return {q_ss_, q_sf_, q_fs_, q_ff_}; }

private:
    double q_ss_;
    double q_sf_;
    double q_fs_;
    double q_ff_;
};

struct ArmSpec {
    std::string name;
    bool local = false;
};

struct ClusterSpec {
    double weight = 0.0;
    std::vector<double> context_mean;
    double context_std = 0.0;
    // Exactly one of these two is populated.
    std::optional<std::vector<double>> per_arm_success;
    std::optional<OutcomeTable> joint_table;
    // Phase medians in seconds: one entry for the local arm, upload/inference/download for remotes.
    std::vector<std::vector<double>> per_arm_latency;
    std::vector<double> per_arm_cost;
};

struct EnvironmentConfig {
    std::size_t context_dim = 0;
    std::vector<ClusterSpec> clusters;
    std::vector<ArmSpec> arms;
    RewardWeights reward_weights;
    LatencyMode latency_mode = LatencyMode::raw_seconds;
    std::uint64_t rng_seed = 0;
};

/// Checks every invariant of the configuration and returns a normalized copy.
/// Cluster weights within 1e-6 of summing to one are renormalized; otherwise the config is rejected.
EnvironmentConfig validate_config(const EnvironmentConfig& cfg);

void to_json(nlohmann::json& j, const RewardWeights& w);
void from_json(const nlohmann::json& j, RewardWeights& w);
void to_json(nlohmann::json& j, const OutcomeTable& t);
OutcomeTable outcome_table_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const EnvironmentConfig& cfg);
EnvironmentConfig environment_config_from_json(const nlohmann::json& j);
EnvironmentConfig load_environment_config(const std::string& path);

}  // namespace arbiter
