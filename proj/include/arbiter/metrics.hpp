#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arbiter/domain.hpp"

namespace arbiter::metrics {

struct DecisionRecord {
    std::uint64_t t = 0;
    std::optional<std::size_t> cluster_id;
    ArmIndex action;
    RewardBreakdown breakdown;
    std::optional<std::vector<double>> probs;
};

struct TraceMetadata {
    std::string policy;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::size_t arm_count = 0;
};

/// Append-only record of one policy's run. Step indices strictly increase.
class RunTrace {
public:
    RunTrace() = default;
    explicit RunTrace(TraceMetadata meta) : meta_(std::move(meta)) {}

    void append(DecisionRecord record);

    const TraceMetadata& metadata() const noexcept { return meta_; }
    const std::vector<DecisionRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    void note_arm_added() { ++meta_.arm_count; }

    std::vector<double> rewards() const;

private:
    TraceMetadata meta_;
    std::vector<DecisionRecord> records_;
};

struct CurvePoint {
    std::uint64_t t = 0;  // 1-based number of steps so far
    double r_cum = 0.0;
};

/// R_cum(T) = (1/T) * sum_{t<=T} r_t for every prefix.
std::vector<CurvePoint> cumulative_mean(std::span<const double> rewards);
std::vector<CurvePoint> cumulative_mean(const RunTrace& trace);

struct Summary {
    std::string policy;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double mean_reward = 0.0;
    // fraction with performance >= 0.5 for binary outcomes, otherwise the mean performance score
    double success_rate = 0.0;
    bool binary_performance = true;
    double mean_raw_latency = 0.0;
    double mean_cost = 0.0;
    std::vector<std::uint64_t> pulls;
};

inline constexpr double kSuccessThreshold = 0.5;

Summary summarize(const RunTrace& trace);

struct TradeoffPoint {
    double accuracy = 0.0;
    double weighted_latency_cost = 0.0;
};

TradeoffPoint tradeoff_point(const RunTrace& trace, const RewardWeights& weights);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double x);

void write_curve_csv(const std::string& path, std::span<const CurvePoint> curve);
std::vector<CurvePoint> read_curve_csv(const std::string& path);
void write_summary_csv(const std::string& path, std::span<const Summary> rows);
void write_tradeoff_csv(const std::string& path, std::span<const std::pair<std::string, TradeoffPoint>> rows);
void write_trace_csv(const std::string& path, const RunTrace& trace);

}  // namespace arbiter::metrics
