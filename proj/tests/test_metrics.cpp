#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "arbiter/metrics.hpp"
#include "arbiter/rng.hpp"
#include "helpers.hpp"

using namespace arbiter;
using namespace arbiter::metrics;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DecisionRecord record(std::uint64_t t, std::size_t arm, double perf, double lat, double cost, const RewardWeights& w) {
    DecisionRecord r;
    r.t = t;
    r.action = ArmIndex{arm};
    r.breakdown = {perf, lat, lat, cost, reward_total(perf, lat, cost, w)};
    return r;
}

}  // namespace

TEST_CASE("cumulative mean examples") {
    const std::vector<double> r{1, 0, 1};
    const auto c = cumulative_mean(r);
    REQUIRE(c.size() == 3);
    CHECK(c[0].t == 1);
    CHECK(c[0].r_cum == 1.0);
    CHECK(c[1].r_cum == 0.5);
    CHECK(c[2].r_cum == doctest::Approx(2.0 / 3).epsilon(1e-15));
    const std::vector<double> constant(50, -0.3);
    for (const auto& p : cumulative_mean(constant)) CHECK(p.r_cum == doctest::Approx(-0.3).epsilon(1e-14));
    CHECK_THROWS_AS(cumulative_mean(std::span<const double>{}), InvalidInput);
    CHECK_THROWS_AS(cumulative_mean(RunTrace{}), InvalidInput);
}

TEST_CASE("cumulative mean satisfies its recurrence on fuzzed sequences") {
    Rng rng(5);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> r(10000);
        for (double& x : r) x = n(rng);
        const auto c = cumulative_mean(r);
        double sum = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double T = double(i + 1);
            const double prev = i == 0 ? 0.0 : c[i - 1].r_cum;
            CHECK(std::abs(c[i].r_cum - (prev * (T - 1) / T + r[i] / T)) <= 1e-12);
            sum += r[i];
        }
        CHECK(c.back().r_cum == doctest::Approx(sum / r.size()).epsilon(1e-12));
    }
}

TEST_CASE("trace step indices strictly increase") {
    RunTrace tr({"p", 0, "", 2});
    tr.append(record(0, 0, 1, 0, 0, {}));
    CHECK_THROWS_AS(tr.append(record(0, 0, 1, 0, 0, {})), InvalidInput);
    tr.append(record(3, 1, 1, 0, 0, {}));
    CHECK(tr.size() == 2);
}

TEST_CASE("summarize") {
    const RewardWeights w{0.1, 1.0};
    RunTrace one({"p", 1, "", 2});
    one.append(record(0, 1, 1.0, 2.0, 0.1, w));
    const auto s = summarize(one);
    CHECK(s.mean_reward == doctest::Approx(1.0 - 0.2 - 0.1).epsilon(1e-15));
    CHECK(s.pulls == std::vector<std::uint64_t>{0, 1});
    CHECK(s.success_rate == 1.0);

    RunTrace fails({"p", 1, "", 3});
    for (int t = 0; t < 10; ++t) fails.append(record(t, t % 3, 0.0, 1.0, 0.0, w));
    const auto f = summarize(fails);
    CHECK(f.success_rate == 0.0);
    std::uint64_t total = 0;
    for (auto p : f.pulls) total += p;
    CHECK(total == 10);

    RunTrace scores({"p", 1, "", 1});
    scores.append(record(0, 0, -0.25, 1.0, 0.0, w));
    scores.append(record(1, 0, -0.75, 1.0, 0.0, w));
    const auto sc = summarize(scores);
    CHECK_FALSE(sc.binary_performance);
    CHECK(sc.success_rate == doctest::Approx(-0.5));
    CHECK_THROWS_AS(summarize(RunTrace{}), InvalidInput);
}

TEST_CASE("tradeoff point") {
    const RewardWeights w{0.2, 0.5};
    RunTrace tr({"p", 1, "", 2});
    tr.append(record(0, 0, 1.0, 1.0, 0.0, w));
    tr.append(record(1, 1, 0.0, 2.0, 1.0, w));
    const auto p = tradeoff_point(tr, w);
    CHECK(p.accuracy == 0.5);
    CHECK(p.weighted_latency_cost == doctest::Approx((0.2 + 0.4 + 0.5) / 2).epsilon(1e-15));
    const auto z = tradeoff_point(tr, {});
    CHECK(z.weighted_latency_cost == 0.0);

    RunTrace rev({"p", 1, "", 2});
    rev.append(record(0, 1, 0.0, 2.0, 1.0, w));
    rev.append(record(1, 0, 1.0, 1.0, 0.0, w));
    const auto q = tradeoff_point(rev, w);
    CHECK(q.accuracy == p.accuracy);
    CHECK(q.weighted_latency_cost == doctest::Approx(p.weighted_latency_cost).epsilon(1e-15));
}

TEST_CASE("curve CSV text and round trip") {
    const auto dir = arbiter::testing::temp_dir("metrics");
    const std::vector<double> r{1, 0};
    write_curve_csv((dir / "c.csv").string(), cumulative_mean(r));
    CHECK(slurp(dir / "c.csv") == "t,r_cum\n1,1\n2,0.5\n");
    CHECK_THROWS(write_curve_csv("", cumulative_mean(r)));
    CHECK_THROWS(write_curve_csv((dir / "missing" / "x.csv").string(), cumulative_mean(r)));

    Rng rng(6);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    std::vector<double> big(2000);
    for (double& x : big) x = u(rng) * std::pow(10.0, u(rng) / 2e5);
    const auto curve = cumulative_mean(big);
    write_curve_csv((dir / "big.csv").string(), curve);
    const auto back = read_curve_csv((dir / "big.csv").string());
    REQUIRE(back.size() == curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        CHECK(back[i].t == curve[i].t);
        CHECK(std::abs(back[i].r_cum - curve[i].r_cum) <= 1e-15 * std::max(1.0, std::abs(curve[i].r_cum)));
    }
}

TEST_CASE("format_double is shortest round trip") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(0.1 + 0.2) == "0.30000000000000004");
    Rng rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 1000; ++i) {
        const double x = u(rng) * std::pow(10.0, 40 * u(rng));
        CHECK(std::stod(format_double(x)) == x);
    }
}

TEST_CASE("summary, tradeoff and trace CSV layouts") {
    const auto dir = arbiter::testing::temp_dir("metrics_layout");
    RunTrace tr({"egreedy", 3, "abc", 2});
    auto r = record(0, 1, 1.0, 0.5, 0.25, {});
    r.cluster_id = 1;
    r.probs = std::vector<double>{0.25, 0.75};
    tr.append(r);
    const std::vector<Summary> rows{summarize(tr)};
    write_summary_csv((dir / "s.csv").string(), rows);
    CHECK(slurp(dir / "s.csv") == "policy,seed,mean_reward,success_rate,mean_latency_s,mean_cost,arm_0,arm_1\n"
                                  "egreedy,3,1,1,0.5,0.25,0,1\n");
    write_trace_csv((dir / "t.csv").string(), tr);
    const auto text = slurp(dir / "t.csv");
    CHECK(text.rfind("t,cluster_id,action,performance,latency_s,penalized_latency,cost,reward,probs\n", 0) == 0);
    CHECK(text.find("0,1,1,1,0.5,0.5,0.25,1,") != std::string::npos);
}
