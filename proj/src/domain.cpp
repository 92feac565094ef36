#include "arbiter/domain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace arbiter {

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
    std::ostringstream os;
    os << "invalid environment config";
    for (const auto& issue : issues) os << "\n  - " << issue;
    return os.str();
}

bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : std::runtime_error(join_issues(issues)), issues_(std::move(issues)) {}

Context::Context(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidInput("context must have at least one entry");
    if (!all_finite(values_)) throw InvalidInput("context entries must be finite");
}

LatencyMode parse_latency_mode(const std::string& text) {
    if (text == "raw_seconds" || text == "raw") return LatencyMode::raw_seconds;
    if (text == "log10_seconds" || text == "log10") return LatencyMode::log10_seconds;
    throw InvalidInput("unknown latency mode '" + text + "' (expected raw_seconds or log10_seconds)");
}

std::string to_string(LatencyMode mode) {
    return mode == LatencyMode::raw_seconds ? "raw_seconds" : "log10_seconds";
}

double reward_total(double performance, double penalized_latency, double cost,
                    const RewardWeights& weights) {
    if (!std::isfinite(performance) || !std::isfinite(penalized_latency) || !std::isfinite(cost) ||
        !std::isfinite(weights.alpha_tau) || !std::isfinite(weights.alpha_cost)) {
        throw InvalidInput("reward_total: inputs must be finite");
    }
    return performance - weights.alpha_tau * penalized_latency - weights.alpha_cost * cost;
}

OutcomeTable::OutcomeTable(double q_ss, double q_sf, double q_fs, double q_ff)
    : q_ss_(q_ss), q_sf_(q_sf), q_fs_(q_fs), q_ff_(q_ff) {
    for (double q : {q_ss, q_sf, q_fs, q_ff}) {
        if (!(q >= 0.0 && q <= 1.0)) throw InvalidInput("outcome rate outside [0, 1]");
    }
    const double sum = q_ss + q_sf + q_fs + q_ff;
    if (std::abs(sum - 1.0) > kSumTolerance) {
        std::ostringstream os;
        os.precision(17);
        os << "outcome rates sum to " << sum << ", expected 1";
        throw InvalidInput(os.str());
    }
}

EnvironmentConfig validate_config(const EnvironmentConfig& cfg) {
    std::vector<std::string> issues;
    auto issue = [&](std::string msg) { issues.push_back(std::move(msg)); };

    if (cfg.context_dim == 0) issue("context_dim must be positive");
    if (cfg.clusters.empty()) issue("at least one cluster is required");
    if (cfg.arms.size() < 2) issue("at least two arms are required");
    if (!cfg.arms.empty() && !cfg.arms.front().local) issue("arm 0 must be the local arm");
    for (std::size_t a = 1; a < cfg.arms.size(); ++a) {
        if (cfg.arms[a].local) issue("arm " + std::to_string(a) + " is marked local; only arm 0 may be local");
    }
    if (!(cfg.reward_weights.alpha_tau >= 0.0) || !std::isfinite(cfg.reward_weights.alpha_tau))
        issue("reward_weights.alpha_tau must be finite and non-negative");
    if (!(cfg.reward_weights.alpha_cost >= 0.0) || !std::isfinite(cfg.reward_weights.alpha_cost))
        issue("reward_weights.alpha_cost must be finite and non-negative");

    const std::size_t k = cfg.arms.size();
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < cfg.clusters.size(); ++i) {
        const auto& c = cfg.clusters[i];
        const std::string at = "clusters[" + std::to_string(i) + "]";
        if (!(c.weight >= 0.0 && c.weight <= 1.0)) issue(at + ".weight must lie in [0, 1]");
        weight_sum += c.weight;
        if (c.context_mean.size() != cfg.context_dim)
            issue(at + ".context_mean has length " + std::to_string(c.context_mean.size()) +
                  ", expected context_dim " + std::to_string(cfg.context_dim));
        if (!all_finite(c.context_mean)) issue(at + ".context_mean must be finite");
        if (!(c.context_std >= 0.0) || !std::isfinite(c.context_std))
            issue(at + ".context_std must be finite and non-negative");

        if (c.per_arm_success.has_value() == c.joint_table.has_value()) {
            issue(at + ": exactly one of per_arm_success and joint_table must be given");
        } else if (c.per_arm_success) {
            if (c.per_arm_success->size() != k) issue(at + ".per_arm_success needs one entry per arm");
            for (double p : *c.per_arm_success) {
                if (!(p >= 0.0 && p <= 1.0)) {
                    issue(at + ".per_arm_success entries must lie in [0, 1]");
                    break;
                }
            }
        } else if (k != 2) {
            issue(at + ".joint_table is only supported with exactly two arms");
        }

        if (c.per_arm_latency.size() != k) {
            issue(at + ".per_arm_latency needs one entry per arm");
        } else {
            for (std::size_t a = 0; a < k; ++a) {
                const auto& phases = c.per_arm_latency[a];
                const std::size_t expected = a == 0 ? 1 : 3;
                if (phases.size() != expected)
                    issue(at + ".per_arm_latency[" + std::to_string(a) + "] needs " +
                          std::to_string(expected) + (a == 0 ? " phase" : " phases (upload, inference, download)"));
                for (double m : phases) {
                    if (!(m > 0.0) || !std::isfinite(m)) {
                        issue(at + ".per_arm_latency[" + std::to_string(a) + "] medians must be positive");
                        break;
                    }
                }
            }
        }
        if (c.per_arm_cost.size() != k) issue(at + ".per_arm_cost needs one entry per arm");
        for (double cost : c.per_arm_cost) {
            if (!(cost >= 0.0) || !std::isfinite(cost)) {
                issue(at + ".per_arm_cost entries must be finite and non-negative");
                break;
            }
        }
    }
    if (!cfg.clusters.empty() && std::abs(weight_sum - 1.0) > 1e-6) {
        std::ostringstream os;
        os.precision(17);
        os << "cluster weights sum to " << weight_sum << ", expected 1";
        issue(os.str());
    }

    if (!issues.empty()) throw ConfigError(std::move(issues));

    EnvironmentConfig out = cfg;
    for (auto& c : out.clusters) c.weight /= weight_sum;
    return out;
}

void to_json(nlohmann::json& j, const RewardWeights& w) {
    j = {{"alpha_tau", w.alpha_tau}, {"alpha_cost", w.alpha_cost}};
}

void from_json(const nlohmann::json& j, RewardWeights& w) {
    w.alpha_tau = j.value("alpha_tau", 0.0);
    w.alpha_cost = j.value("alpha_cost", 0.0);
}

void to_json(nlohmann::json& j, const OutcomeTable& t) {
    j = {{"q_ss", t.q_ss()}, {"q_sf", t.q_sf()}, {"q_fs", t.q_fs()}, {"q_ff", t.q_ff()}};
}

OutcomeTable outcome_table_from_json(const nlohmann::json& j) {
    return OutcomeTable(j.at("q_ss").get<double>(), j.at("q_sf").get<double>(),
                        j.at("q_fs").get<double>(), j.at("q_ff").get<double>());
}

void to_json(nlohmann::json& j, const EnvironmentConfig& cfg) {
    j = nlohmann::json::object();
    j["context_dim"] = cfg.context_dim;
    j["rng_seed"] = cfg.rng_seed;
    j["latency_mode"] = to_string(cfg.latency_mode);
    j["reward_weights"] = cfg.reward_weights;
    auto& arms = j["arms"] = nlohmann::json::array();
    for (const auto& a : cfg.arms) arms.push_back({{"name", a.name}, {"local", a.local}});
    auto& clusters = j["clusters"] = nlohmann::json::array();
    for (const auto& c : cfg.clusters) {
        nlohmann::json cj = {{"weight", c.weight},
                             {"context_mean", c.context_mean},
                             {"context_std", c.context_std},
                             {"per_arm_latency", c.per_arm_latency},
                             {"per_arm_cost", c.per_arm_cost}};
        if (c.per_arm_success) cj["per_arm_success"] = *c.per_arm_success;
        if (c.joint_table) cj["joint_table"] = *c.joint_table;
        clusters.push_back(std::move(cj));
    }
}

EnvironmentConfig environment_config_from_json(const nlohmann::json& j) {
    EnvironmentConfig cfg;
    try {
        cfg.context_dim = j.at("context_dim").get<std::size_t>();
        cfg.rng_seed = j.value("rng_seed", std::uint64_t{0});
        cfg.latency_mode = parse_latency_mode(j.value("latency_mode", std::string("raw_seconds")));
        if (j.contains("reward_weights")) cfg.reward_weights = j.at("reward_weights").get<RewardWeights>();
        for (const auto& a : j.at("arms")) {
            cfg.arms.push_back({a.at("name").get<std::string>(), a.value("local", false)});
        }
        for (const auto& cj : j.at("clusters")) {
            ClusterSpec c;
            c.weight = cj.at("weight").get<double>();
            c.context_mean = cj.at("context_mean").get<std::vector<double>>();
            c.context_std = cj.value("context_std", 0.0);
            if (cj.contains("per_arm_success"))
                c.per_arm_success = cj.at("per_arm_success").get<std::vector<double>>();
            if (cj.contains("joint_table")) c.joint_table = outcome_table_from_json(cj.at("joint_table"));
            c.per_arm_latency = cj.at("per_arm_latency").get<std::vector<std::vector<double>>>();
            c.per_arm_cost = cj.at("per_arm_cost").get<std::vector<double>>();
            cfg.clusters.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({std::string("malformed config JSON: ") + e.what()});
    } catch (const InvalidInput& e) {
        throw ConfigError({e.what()});
    }
    return validate_config(cfg);
}

EnvironmentConfig load_environment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file " + path});
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({path + ": " + e.what()});
    }
    return environment_config_from_json(j);
}

}  // namespace arbiter
