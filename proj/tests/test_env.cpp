#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "arbiter/env.hpp"
#include "helpers.hpp"

using namespace arbiter;
using namespace arbiter::testing;

TEST_CASE("latency_penalty") {
    CHECK(latency_penalty(2.5, LatencyMode::raw_seconds) == 2.5);
    CHECK(latency_penalty(10, LatencyMode::log10_seconds) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(latency_penalty(0.1, LatencyMode::log10_seconds) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(latency_penalty(1e-9, LatencyMode::log10_seconds) == doctest::Approx(-6.0));
    CHECK_THROWS_AS(latency_penalty(0.0, LatencyMode::log10_seconds), InvalidInput);
    CHECK_THROWS_AS(latency_penalty(-1.0, LatencyMode::log10_seconds), InvalidInput);
}

namespace {

StepSample two_arm_step(std::vector<double> perf, std::vector<double> lat, std::vector<double> cost) {
    StepSample s;
    s.context = Context({0.0});
    s.per_arm_performance = std::move(perf);
    s.per_arm_raw_latency_seconds = std::move(lat);
    s.per_arm_cost = std::move(cost);
    return s;
}

}  // namespace

TEST_CASE("observe uses only the chosen arm") {
    const auto step = two_arm_step({1.0, 0.0}, {1.0, 3.0}, {1.0, 2.0});
    const auto obs = observe(step, ArmIndex{0}, {0.05, 0.005}, LatencyMode::raw_seconds);
    CHECK(obs.breakdown.total == doctest::Approx(0.945).epsilon(1e-15));
    CHECK(obs.breakdown.raw_latency_seconds == 1.0);
    const auto fail = observe(step, ArmIndex{1}, {0.2, 0.0}, LatencyMode::raw_seconds);
    CHECK(fail.breakdown.total == doctest::Approx(-0.6).epsilon(1e-15));
    CHECK_THROWS_AS(observe(step, ArmIndex{2}, {}, LatencyMode::raw_seconds), InvalidInput);
}

TEST_CASE("full_reward_vector is consistent with observe") {
    auto cfg = crossover_env(3, 5);
    cfg.reward_weights = {0.1, 0.01};
    Environment env(cfg);
    for (int i = 0; i < 200; ++i) {
        const auto s = env.sample_step();
        for (auto mode : {LatencyMode::raw_seconds, LatencyMode::log10_seconds}) {
            const auto v = full_reward_vector(s, cfg.reward_weights, mode);
            for (std::size_t a = 0; a < v.size(); ++a)
                CHECK(v[a] == observe(s, ArmIndex{a}, cfg.reward_weights, mode).breakdown.total);
        }
    }
    const auto failing = two_arm_step({0.0, 0.0}, {1.0, 1.0}, {0.0, 1.0});
    CHECK(full_reward_vector(failing, {}, LatencyMode::raw_seconds) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("zero spread contexts equal the cluster mean") {
    EnvironmentConfig cfg;
    cfg.context_dim = 3;
    cfg.arms = arms(2);
    cfg.clusters.push_back(bernoulli_cluster(1.0, {1.0, 0.0, 0.0}, 0.0, {0.5, 0.5}));
    Environment env(cfg);
    for (int i = 0; i < 10; ++i) CHECK(env.sample_step().context == Context({1.0, 0.0, 0.0}));
}

TEST_CASE("cluster frequencies match weights") {
    auto cfg = crossover_env(2, 11);
    cfg.clusters[0].weight = 0.7;
    cfg.clusters[1].weight = 0.3;
    Environment env(cfg);
    const int n = 100000;
    int c0 = 0;
    for (int i = 0; i < n; ++i) c0 += env.sample_step().cluster_id == 0u ? 1 : 0;
    CHECK(std::abs(c0 / double(n) - 0.7) < 0.01);
}

TEST_CASE("joint table outcomes") {
    auto cfg = crossover_env(2, 21);
    cfg.clusters.pop_back();
    cfg.clusters[0].weight = 1.0;
    cfg.clusters[0].per_arm_success.reset();

    SUBCASE("degenerate table: both succeed") {
        cfg.clusters[0].joint_table = OutcomeTable(1, 0, 0, 0);
        Environment env(cfg);
        for (int i = 0; i < 100; ++i) CHECK(env.sample_step().per_arm_performance == std::vector<double>{1, 1});
    }
    SUBCASE("frequencies within three standard errors") {
        const OutcomeTable q(0.59, 0.01, 0.27, 0.13);
        cfg.clusters[0].joint_table = q;
        Environment env(cfg);
        const int n = 100000;
        std::vector<int> counts(4, 0);
        for (int i = 0; i < n; ++i) {
            const auto p = env.sample_step().per_arm_performance;
            counts[(p[0] > 0.5 ? 0 : 2) + (p[1] > 0.5 ? 0 : 1)]++;
        }
        const auto probs = q.as_vector();
        for (int k = 0; k < 4; ++k) {
            const double se = std::sqrt(probs[k] * (1 - probs[k]) / n);
            CHECK(std::abs(counts[k] / double(n) - probs[k]) <= 3 * se + 1e-12);
        }
    }
}

TEST_CASE("latencies are positive and phase medians are respected") {
    auto cfg = crossover_env(2, 4);
    Environment env(cfg);
    std::vector<double> local, remote;
    for (int i = 0; i < 20001; ++i) {
        const auto s = env.sample_step();
        CHECK(s.per_arm_raw_latency_seconds[0] > 0);
        CHECK(s.per_arm_raw_latency_seconds[1] > 0);
        local.push_back(s.per_arm_raw_latency_seconds[0]);
        remote.push_back(s.per_arm_raw_latency_seconds[1]);
        CHECK(s.per_arm_cost == std::vector<double>{0.0, 1.0});
    }
    std::nth_element(local.begin(), local.begin() + 10000, local.end());
    CHECK(local[10000] == doctest::Approx(0.2).epsilon(0.01));
    // sum of three lognormals: mean = sum(median) * exp(ln(1.3)^2 / 2)
    double mean = 0;
    for (double x : remote) mean += x;
    mean /= remote.size();
    const double s = std::log(1.3);
    CHECK(mean == doctest::Approx(0.95 * std::exp(s * s / 2)).epsilon(0.01));
}

TEST_CASE("identical config gives identical samples") {
    Environment a(crossover_env(4, 77)), b(crossover_env(4, 77)), c(crossover_env(4, 78));
    bool differs = false;
    for (int i = 0; i < 500; ++i) {
        const auto x = a.sample_step(), y = b.sample_step(), z = c.sample_step();
        CHECK(x.context == y.context);
        CHECK(x.per_arm_performance == y.per_arm_performance);
        CHECK(x.per_arm_raw_latency_seconds == y.per_arm_raw_latency_seconds);
        differs |= !(x.context == z.context);
    }
    CHECK(differs);
}

TEST_CASE("replay parsing") {
    SUBCASE("empty input") {
        std::istringstream in("");
        CHECK(parse_replay(in).empty());
    }
    SUBCASE("one record") {
        std::istringstream in(R"({"context":[0.5,-1],"arms":[{"performance":1,"latency_s":0.2,"cost":0},{"performance":0,"latency_s":1.5,"cost":0.01}]})"
                              "\n\n");
        const auto v = parse_replay(in);
        REQUIRE(v.size() == 1);
        CHECK(v[0].context == Context({0.5, -1.0}));
        CHECK(v[0].per_arm_performance == std::vector<double>{1, 0});
        CHECK(v[0].per_arm_raw_latency_seconds == std::vector<double>{0.2, 1.5});
        CHECK(v[0].per_arm_cost == std::vector<double>{0, 0.01});
        CHECK_FALSE(v[0].cluster_id.has_value());
    }
    SUBCASE("missing latency names line and field") {
        std::istringstream in(
            R"({"context":[1],"arms":[{"performance":1,"latency_s":0.2,"cost":0},{"performance":1,"latency_s":0.2,"cost":0}]})"
            "\n"
            R"({"context":[1],"arms":[{"performance":1,"latency_s":0.2,"cost":0},{"performance":1,"cost":0}]})");
        try {
            parse_replay(in);
            FAIL("expected ReplayError");
        } catch (const ReplayError& e) {
            CHECK(e.line() == 2);
            CHECK(std::string(e.what()).find("arms[1].latency_s") != std::string::npos);
        }
    }
    SUBCASE("dimension mismatch against first record") {
        std::istringstream in(R"({"context":[1],"arms":[{"performance":1,"latency_s":0.2,"cost":0}]})"
                              "\n"
                              R"({"context":[1,2],"arms":[{"performance":1,"latency_s":0.2,"cost":0}]})");
        CHECK_THROWS_AS(parse_replay(in), ReplayError);
    }
    SUBCASE("write then parse round trips") {
        Environment env(crossover_env(3, 2));
        std::stringstream buf;
        std::vector<StepSample> orig;
        for (int i = 0; i < 20; ++i) {
            orig.push_back(env.sample_step());
            write_replay_record(buf, orig.back());
        }
        const auto back = parse_replay(buf);
        REQUIRE(back.size() == orig.size());
        for (std::size_t i = 0; i < orig.size(); ++i) {
            CHECK(back[i].context == orig[i].context);
            CHECK(back[i].per_arm_raw_latency_seconds == orig[i].per_arm_raw_latency_seconds);
        }
    }
}
