#include "arbiter/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace arbiter::metrics {

void RunTrace::append(DecisionRecord record) {
    if (!records_.empty() && record.t <= records_.back().t)
        throw InvalidInput("trace step indices must strictly increase");
    meta_.arm_count = std::max(meta_.arm_count, record.action.value + 1);
    records_.push_back(std::move(record));
}

std::vector<double> RunTrace::rewards() const {
    std::vector<double> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.breakdown.total);
    return out;
}

std::vector<CurvePoint> cumulative_mean(std::span<const double> rewards) {
    if (rewards.empty()) throw InvalidInput("cumulative_mean of an empty trace");
    std::vector<CurvePoint> out;
    out.reserve(rewards.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        sum += rewards[i];
        out.push_back({i + 1, sum / static_cast<double>(i + 1)});
    }
    return out;
}

std::vector<CurvePoint> cumulative_mean(const RunTrace& trace) { return cumulative_mean(trace.rewards()); }

Summary summarize(const RunTrace& trace) {
    if (trace.empty()) throw InvalidInput("summarize of an empty trace");
    Summary s;
    s.policy = trace.metadata().policy;
    s.seed = trace.metadata().seed;
    s.steps = trace.size();
    s.pulls.assign(trace.metadata().arm_count, 0);
    double reward = 0, perf = 0, latency = 0, cost = 0;
    std::size_t successes = 0;
    for (const auto& r : trace.records()) {
        const auto& b = r.breakdown;
        reward += b.total;
        perf += b.performance;
        latency += b.raw_latency_seconds;
        cost += b.cost;
        if (b.performance != 0.0 && b.performance != 1.0) s.binary_performance = false;
        if (b.performance >= kSuccessThreshold) ++successes;
        ++s.pulls[r.action.value];
    }
    const double n = static_cast<double>(trace.size());
    s.mean_reward = reward / n;
    s.success_rate = s.binary_performance ? static_cast<double>(successes) / n : perf / n;
    s.mean_raw_latency = latency / n;
    s.mean_cost = cost / n;
    return s;
}

TradeoffPoint tradeoff_point(const RunTrace& trace, const RewardWeights& weights) {
    if (trace.empty()) throw InvalidInput("tradeoff_point of an empty trace");
    TradeoffPoint p;
    for (const auto& r : trace.records()) {
        p.accuracy += r.breakdown.performance;
        p.weighted_latency_cost += weights.alpha_tau * r.breakdown.penalized_latency + weights.alpha_cost * r.breakdown.cost;
    }
    const double n = static_cast<double>(trace.size());
    p.accuracy /= n;
    p.weighted_latency_cost /= n;
    return p;
}

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_csv(const std::string& path) {
    if (path.empty()) throw std::runtime_error("CSV path is empty");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + path);
}

double parse_double(const std::string& text) {
    double x = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), x);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw std::runtime_error("bad number '" + text + "' in CSV");
    return x;
}

}  // namespace

void write_curve_csv(const std::string& path, std::span<const CurvePoint> curve) {
    auto out = open_csv(path);
    out << "t,r_cum\n";
    for (const auto& p : curve) out << p.t << ',' << format_double(p.r_cum) << '\n';
    finish(out, path);
}

std::vector<CurvePoint> read_curve_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "t,r_cum") throw std::runtime_error(path + ": missing t,r_cum header");
    std::vector<CurvePoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error(path + ": malformed row '" + line + "'");
        out.push_back({std::stoull(line.substr(0, comma)), parse_double(line.substr(comma + 1))});
    }
    return out;
}

void write_summary_csv(const std::string& path, std::span<const Summary> rows) {
    auto out = open_csv(path);
    std::size_t arms = 0;
    for (const auto& r : rows) arms = std::max(arms, r.pulls.size());
    out << "policy,seed,mean_reward,success_rate,mean_latency_s,mean_cost";
    for (std::size_t a = 0; a < arms; ++a) out << ",arm_" << a;
    out << '\n';
    for (const auto& r : rows) {
        out << r.policy << ',' << r.seed << ',' << format_double(r.mean_reward) << ',' << format_double(r.success_rate)
            << ',' << format_double(r.mean_raw_latency) << ',' << format_double(r.mean_cost);
        for (std::size_t a = 0; a < arms; ++a) out << ',' << (a < r.pulls.size() ? r.pulls[a] : 0);
        out << '\n';
    }
    finish(out, path);
}

void write_tradeoff_csv(const std::string& path, std::span<const std::pair<std::string, TradeoffPoint>> rows) {
    auto out = open_csv(path);
    out << "policy,accuracy,weighted_latency_cost\n";
    for (const auto& [policy, p] : rows)
        out << policy << ',' << format_double(p.accuracy) << ',' << format_double(p.weighted_latency_cost) << '\n';
    finish(out, path);
}

void write_trace_csv(const std::string& path, const RunTrace& trace) {
    auto out = open_csv(path);
    out << "t,cluster_id,action,performance,latency_s,penalized_latency,cost,reward,probs\n";
    for (const auto& r : trace.records()) {
        const auto& b = r.breakdown;
        out << r.t << ',' << (r.cluster_id ? std::to_string(*r.cluster_id) : std::string()) << ',' << r.action.value
            << ',' << format_double(b.performance) << ',' << format_double(b.raw_latency_seconds) << ','
            << format_double(b.penalized_latency) << ',' << format_double(b.cost) << ',' << format_double(b.total)
            << ',';
        if (r.probs) {
            for (std::size_t i = 0; i < r.probs->size(); ++i) out << (i ? ";" : "") << format_double((*r.probs)[i]);
        }
        out << '\n';
    }
    finish(out, path);
}

}  // namespace arbiter::metrics
