#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "arbiter/domain.hpp"

namespace arbiter::testing {

inline ClusterSpec bernoulli_cluster(double weight, std::vector<double> mean, double std_dev,
                                     std::vector<double> success, std::vector<double> costs = {}) {
    const std::size_t k = success.size();
    ClusterSpec c;
    c.weight = weight;
    c.context_mean = std::move(mean);
    c.context_std = std_dev;
    c.per_arm_success = std::move(success);
    c.per_arm_latency.push_back({0.2});
    for (std::size_t a = 1; a < k; ++a) c.per_arm_latency.push_back({0.1, 0.8, 0.05});
    if (costs.empty()) {
        costs.assign(k, 1.0);
        costs[0] = 0.0;
    }
    c.per_arm_cost = std::move(costs);
    return c;
}

inline std::vector<ArmSpec> arms(std::size_t k) {
    std::vector<ArmSpec> out{{"local", true}};
    for (std::size_t a = 1; a < k; ++a) out.push_back({"remote" + std::to_string(a), false});
    return out;
}

/// Two clusters whose best arm flips: local wins cluster 0, remote wins cluster 1.
inline EnvironmentConfig crossover_env(std::size_t dim = 8, std::uint64_t seed = 1) {
    EnvironmentConfig cfg;
    cfg.context_dim = dim;
    cfg.rng_seed = seed;
    cfg.arms = arms(2);
    std::vector<double> m0(dim, 0.0), m1(dim, 0.0);
    m0[0] = 1.0;
    m1[1 % dim] = 1.0;
    cfg.clusters.push_back(bernoulli_cluster(0.5, m0, 0.3, {0.9, 0.2}));
    cfg.clusters.push_back(bernoulli_cluster(0.5, m1, 0.3, {0.1, 0.95}));
    return cfg;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("arbiter_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace arbiter::testing
