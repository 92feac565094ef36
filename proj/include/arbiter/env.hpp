#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "arbiter/domain.hpp"
#include "arbiter/rng.hpp"

namespace arbiter {

/// Everything the world knows about one input: the context plus the realized outcome of every arm.
/// Only evaluation code (oracle, full reward vector) may look past the chosen arm.
struct StepSample {
    std::uint64_t t = 0;
    std::optional<std::size_t> cluster_id;  // unknown for replayed logs
    Context context;
    std::vector<double> per_arm_performance;
    std::vector<double> per_arm_raw_latency_seconds;
    std::vector<double> per_arm_cost;

    std::size_t arm_count() const noexcept { return per_arm_performance.size(); }
};

/// What a learner is shown after acting: the chosen arm's reward and nothing else.
struct Observation {
    std::uint64_t t = 0;
    ArmIndex action;
    RewardBreakdown breakdown;
};

inline constexpr double kLatencyFloorSeconds = 1e-6;
inline constexpr double kLatencyDispersion = 1.3;

double latency_penalty(double raw_seconds, LatencyMode mode);

Observation observe(const StepSample& step, ArmIndex action, const RewardWeights& weights,
                    LatencyMode mode);

/// Reward every arm would have earned on this step. Evaluation only.
std::vector<double> full_reward_vector(const StepSample& step, const RewardWeights& weights,
                                       LatencyMode mode);

/// Synthetic clustered data stream. Single owner; the generator never sees actions.
class Environment {
public:
    explicit Environment(const EnvironmentConfig& cfg);

    StepSample sample_step();

    const EnvironmentConfig& config() const noexcept { return cfg_; }
    std::size_t arm_count() const noexcept { return cfg_.arms.size(); }
    std::uint64_t steps_drawn() const noexcept { return t_; }

private:
    EnvironmentConfig cfg_;
    Rng rng_;
    std::discrete_distribution<std::size_t> cluster_dist_;
    std::uint64_t t_ = 0;
};

class ReplayError : public std::runtime_error {
public:
    ReplayError(std::size_t line, const std::string& message);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Reads a newline-delimited JSON log:
///   {"context": [...], "arms": [{"performance": p, "latency_s": s, "cost": c}, ...]}
/// Blank lines are skipped. Records keep file order and are numbered from t = 0.
std::vector<StepSample> replay_stream(const std::string& path);
std::vector<StepSample> parse_replay(std::istream& in);

void write_replay_record(std::ostream& out, const StepSample& step);

}  // namespace arbiter
