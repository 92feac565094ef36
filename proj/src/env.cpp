#include "arbiter/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace arbiter {

double latency_penalty(double raw_seconds, LatencyMode mode) {
    if (!std::isfinite(raw_seconds)) throw InvalidInput("latency must be finite");
    if (mode == LatencyMode::raw_seconds) {
        if (raw_seconds < 0.0) throw InvalidInput("latency must be non-negative");
        return raw_seconds;
    }
    if (raw_seconds <= 0.0) throw InvalidInput("log10 latency penalty requires positive seconds");
    return std::log10(std::max(raw_seconds, kLatencyFloorSeconds));
}

Observation observe(const StepSample& step, ArmIndex action, const RewardWeights& weights,
                    LatencyMode mode) {
    if (action.value >= step.arm_count())
        throw InvalidInput("arm " + std::to_string(action.value) + " out of range for " +
                           std::to_string(step.arm_count()) + " arms");
    const std::size_t a = action.value;
    RewardBreakdown b;
    b.performance = step.per_arm_performance[a];
    b.raw_latency_seconds = step.per_arm_raw_latency_seconds[a];
    b.penalized_latency = latency_penalty(b.raw_latency_seconds, mode);
    b.cost = step.per_arm_cost[a];
    b.total = reward_total(b.performance, b.penalized_latency, b.cost, weights);
    return {step.t, action, b};
}

std::vector<double> full_reward_vector(const StepSample& step, const RewardWeights& weights,
                                       LatencyMode mode) {
    std::vector<double> out(step.arm_count());
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = observe(step, ArmIndex{a}, weights, mode).breakdown.total;
    return out;
}

namespace {

std::discrete_distribution<std::size_t> cluster_distribution(const EnvironmentConfig& cfg) {
    std::vector<double> w;
    for (const auto& c : cfg.clusters) w.push_back(c.weight);
    return {w.begin(), w.end()};
}

}  // namespace

Environment::Environment(const EnvironmentConfig& cfg)
    : cfg_(validate_config(cfg)),
      rng_(make_rng(cfg_.rng_seed, Stream::environment)),
      cluster_dist_(cluster_distribution(cfg_)) {}

StepSample Environment::sample_step() {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t k = cfg_.arms.size();

    StepSample s;
    s.t = t_++;
    const std::size_t ci = cluster_dist_(rng_);
    s.cluster_id = ci;
    const auto& cluster = cfg_.clusters[ci];

    std::vector<double> ctx(cfg_.context_dim);
    for (std::size_t d = 0; d < ctx.size(); ++d) {
        const double z = normal(rng_);
        ctx[d] = cluster.context_mean[d] + cluster.context_std * z;
    }
    s.context = Context(std::move(ctx));

    s.per_arm_performance.assign(k, 0.0);
    if (cluster.joint_table) {
        const auto& q = *cluster.joint_table;
        const double u = unit(rng_);
        // (local, remote) in SS, SF, FS, FF order
        if (u < q.q_ss()) {
            s.per_arm_performance = {1.0, 1.0};
        } else if (u < q.q_ss() + q.q_sf()) {
            s.per_arm_performance = {1.0, 0.0};
        } else if (u < q.q_ss() + q.q_sf() + q.q_fs()) {
            s.per_arm_performance = {0.0, 1.0};
        } else {
            s.per_arm_performance = {0.0, 0.0};
        }
    } else {
        for (std::size_t a = 0; a < k; ++a)
            s.per_arm_performance[a] = unit(rng_) < (*cluster.per_arm_success)[a] ? 1.0 : 0.0;
    }

    const double log_dispersion = std::log(kLatencyDispersion);
    s.per_arm_raw_latency_seconds.assign(k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
        double total = 0.0;
        for (double median : cluster.per_arm_latency[a]) total += median * std::exp(log_dispersion * normal(rng_));
        s.per_arm_raw_latency_seconds[a] = std::max(total, kLatencyFloorSeconds);
    }
    s.per_arm_cost = cluster.per_arm_cost;
    return s;
}

ReplayError::ReplayError(std::size_t line, const std::string& message)
    : std::runtime_error("replay line " + std::to_string(line) + ": " + message), line_(line) {}

namespace {

double field(const nlohmann::json& arm, const char* name, std::size_t line, std::size_t a) {
    const std::string where = "arms[" + std::to_string(a) + "]." + name;
    if (!arm.contains(name)) throw ReplayError(line, "missing field " + where);
    const auto& v = arm.at(name);
    if (!v.is_number()) throw ReplayError(line, "field " + where + " is not a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ReplayError(line, "field " + where + " is not finite");
    return x;
}

}  // namespace

std::vector<StepSample> parse_replay(std::istream& in) {
    std::vector<StepSample> out;
    std::string text;
    std::size_t line = 0;
    std::optional<std::size_t> dim;
    std::optional<std::size_t> arms;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ReplayError(line, std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) throw ReplayError(line, "record must be a JSON object");
        if (!j.contains("context") || !j["context"].is_array())
            throw ReplayError(line, "missing field context");
        if (!j.contains("arms") || !j["arms"].is_array()) throw ReplayError(line, "missing field arms");

        std::vector<double> ctx;
        for (const auto& v : j["context"]) {
            if (!v.is_number()) throw ReplayError(line, "context entries must be numbers");
            ctx.push_back(v.get<double>());
        }
        if (!dim) dim = ctx.size();
        if (ctx.size() != *dim)
            throw ReplayError(line, "context has dimension " + std::to_string(ctx.size()) + ", expected " +
                                        std::to_string(*dim));
        const auto& arm_list = j["arms"];
        if (!arms) arms = arm_list.size();
        if (arm_list.size() != *arms || *arms < 2)
            throw ReplayError(line, "record has " + std::to_string(arm_list.size()) + " arms, expected " +
                                        std::to_string(std::max<std::size_t>(*arms, 2)));

        StepSample s;
        s.t = out.size();
        try {
            s.context = Context(std::move(ctx));
        } catch (const InvalidInput& e) {
            throw ReplayError(line, e.what());
        }
        for (std::size_t a = 0; a < arm_list.size(); ++a) {
            const auto& arm = arm_list[a];
            if (!arm.is_object()) throw ReplayError(line, "arms[" + std::to_string(a) + "] must be an object");
            const double perf = field(arm, "performance", line, a);
            const double lat = field(arm, "latency_s", line, a);
            const double cost = field(arm, "cost", line, a);
            if (lat <= 0.0) throw ReplayError(line, "field arms[" + std::to_string(a) + "].latency_s must be positive");
            if (cost < 0.0) throw ReplayError(line, "field arms[" + std::to_string(a) + "].cost must be non-negative");
            s.per_arm_performance.push_back(perf);
            s.per_arm_raw_latency_seconds.push_back(lat);
            s.per_arm_cost.push_back(cost);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<StepSample> replay_stream(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ReplayError(0, "cannot open " + path);
    return parse_replay(in);
}

void write_replay_record(std::ostream& out, const StepSample& step) {
    nlohmann::json j;
    j["context"] = std::vector<double>(step.context.values().begin(), step.context.values().end());
    auto& arms = j["arms"] = nlohmann::json::array();
    for (std::size_t a = 0; a < step.arm_count(); ++a) {
        arms.push_back({{"performance", step.per_arm_performance[a]},
                        {"latency_s", step.per_arm_raw_latency_seconds[a]},
                        {"cost", step.per_arm_cost[a]}});
    }
    out << j.dump() << '\n';
}

}  // namespace arbiter
