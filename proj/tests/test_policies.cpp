#include <doctest.h>

#include <cmath>
#include <sstream>

#include "arbiter/policies.hpp"
#include "helpers.hpp"

using namespace arbiter;

namespace {

const Context kCtx({0.0, 1.0});

PpoAgentConfig small_ppo() {
    PpoAgentConfig cfg;
    cfg.hidden = {8, 4};
    return cfg;
}

}  // namespace

TEST_CASE("epsilon schedule") {
    CHECK(epsilon_schedule(0, 4) == 1.0);
    CHECK(epsilon_schedule(799, 4) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(epsilon_schedule(399, 4) == doctest::Approx(1.0).epsilon(1e-15));
    double prev = 1.0;
    for (std::uint64_t t = 0; t < 100000; t += 37) {
        const double e = epsilon_schedule(t, 3);
        CHECK(e <= prev);
        CHECK(e >= 0.0);
        prev = e;
    }
    CHECK(epsilon_schedule(100'000'000, 2) < 1e-5);
}

TEST_CASE("epsilon-greedy greedy choice and ties") {
    EpsilonGreedyPolicy p(2);
    p.force_epsilon(0.0);
    Rng rng(1);
    CHECK(p.decide(kCtx, rng).arm.value == 0);
    p.learn(kCtx, {ArmIndex{0}}, 0.2);
    p.learn(kCtx, {ArmIndex{1}}, 0.5);
    CHECK(p.decide(kCtx, rng).arm.value == 1);

    EpsilonGreedyPolicy tie(3);
    tie.force_epsilon(0.0);
    tie.learn(kCtx, {ArmIndex{1}}, 0.4);
    tie.learn(kCtx, {ArmIndex{2}}, 0.4);
    CHECK(tie.decide(kCtx, rng).arm.value == 1);
}

TEST_CASE("epsilon-greedy explores uniformly at epsilon one") {
    EpsilonGreedyPolicy p(4);
    p.force_epsilon(1.0);
    Rng rng(2);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 10000; ++i) counts[p.decide(kCtx, rng).arm.value]++;
    for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);
}

TEST_CASE("epsilon-greedy incremental mean") {
    EpsilonGreedyPolicy p(3);
    p.learn(kCtx, {ArmIndex{0}}, 0.5);
    CHECK(p.state().means[0] == 0.5);
    CHECK(p.state().counts[0] == 1);
    EpsilonGreedyPolicy q(2);
    q.learn(kCtx, {ArmIndex{0}}, 1.0);
    q.learn(kCtx, {ArmIndex{0}}, 0.0);
    CHECK(q.state().means[0] == 0.5);
    CHECK(q.state().means[1] == 0.0);
    CHECK(q.state().t == 2);

    Rng rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    EpsilonGreedyPolicy r(3);
    std::vector<double> sums(3, 0.0);
    for (int i = 0; i < 500; ++i) {
        const std::size_t a = i % 3;
        const double x = u(rng);
        sums[a] += x;
        r.learn(kCtx, {ArmIndex{a}}, x);
    }
    std::uint64_t total = 0;
    for (std::size_t a = 0; a < 3; ++a) {
        CHECK(r.state().means[a] == doctest::Approx(sums[a] / r.state().counts[a]).epsilon(1e-12));
        total += r.state().counts[a];
    }
    CHECK(r.state().t == total);
}

TEST_CASE("epsilon-greedy probabilities and add_arm") {
    EpsilonGreedyPolicy p(2);
    Rng rng(4);
    for (int i = 0; i < 300; ++i) {
        const auto d = p.decide(kCtx, rng);
        REQUIRE(d.probs);
        double s = 0;
        for (double x : *d.probs) s += x;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(d.log_prob == doctest::Approx(std::log((*d.probs)[d.arm.value])));
        p.learn(kCtx, d, d.arm.value == 1 ? 1.0 : 0.0);
    }
    p.add_arm();
    CHECK(p.arm_count() == 3);
    CHECK(p.state().counts[2] == 0);
    for (int i = 0; i < 100; ++i) CHECK(p.decide(kCtx, rng).arm.value < 3);
}

TEST_CASE("PPO sampling and learning cadence") {
    Rng init(5), rng(6);
    PpoPolicy p(2, 3, small_ppo(), init);
    const auto d = p.decide(kCtx, rng);
    REQUIRE(d.probs);
    CHECK(d.probs->size() == 3);
    CHECK(d.log_prob == doctest::Approx(std::log((*d.probs)[d.arm.value])).epsilon(1e-12));
    for (double x : *d.probs) CHECK(std::abs(x - 1.0 / 3) < 0.05);

    for (int i = 0; i < 4; ++i) CHECK_FALSE(p.learn(kCtx, p.decide(kCtx, rng), 1.0).has_value());
    CHECK(p.buffered() == 4);
    CHECK(p.updates() == 0);
    const auto diag = p.learn(kCtx, p.decide(kCtx, rng), 0.0);
    REQUIRE(diag.has_value());
    CHECK(diag->epochs_run >= 1);
    CHECK(diag->epochs_run <= 10);
    CHECK(p.buffered() == 0);
    CHECK(p.updates() == 1);
}

TEST_CASE("PPO zero head samples uniformly; deterministic mode takes argmax") {
    nn::DenseNet net(2, {4}, 2);
    PpoPolicy p(net, small_ppo());
    Rng rng(7);
    int ones = 0;
    for (int i = 0; i < 10000; ++i) ones += p.decide(kCtx, rng).arm.value == 1;
    CHECK(std::abs(ones / 10000.0 - 0.5) < 0.02);

    net.policy_head.bias(0) = 2.0;
    net.policy_head.bias(1) = -1.0;
    PpoPolicy q(net, small_ppo());
    q.set_deterministic(true);
    for (int i = 0; i < 10; ++i) CHECK(q.decide(kCtx, rng).arm.value == 0);
}

TEST_CASE("PPO add_arm preserves old ratios") {
    Rng init(8);
    PpoPolicy p(2, 2, small_ppo(), init);
    const auto before = p.probabilities(kCtx);
    p.add_arm();
    const auto after = p.probabilities(kCtx);
    REQUIRE(after.size() == 3);
    CHECK(after[0] / after[1] == doctest::Approx(before[0] / before[1]).epsilon(1e-12));
}

TEST_CASE("policy save and load") {
    Rng init(9), rng(10);
    PpoPolicy p(2, 2, small_ppo(), init);
    for (int i = 0; i < 7; ++i) p.learn(kCtx, p.decide(kCtx, rng), i % 2);
    std::stringstream buf;
    p.save(buf);
    Rng other(99);
    PpoPolicy q(2, 2, small_ppo(), other);
    q.load(buf);
    CHECK(q.probabilities(kCtx) == p.probabilities(kCtx));
    CHECK(q.buffered() == p.buffered());
    CHECK(q.updates() == p.updates());

    EpsilonGreedyPolicy e(2);
    std::stringstream wrong;
    p.save(wrong);
    CHECK_THROWS(e.load(wrong));
}

TEST_CASE("oracle picks the best realized reward, lowest index on ties") {
    StepSample s;
    s.context = kCtx;
    s.per_arm_performance = {0.2, 0.9, 0.9};
    s.per_arm_raw_latency_seconds = {1, 1, 1};
    s.per_arm_cost = {0, 0, 0};
    CHECK(oracle_decide(s, {}, LatencyMode::raw_seconds).value == 1);
    s.per_arm_performance = {0, 0, 0};
    CHECK(oracle_decide(s, {}, LatencyMode::raw_seconds).value == 0);
}

TEST_CASE("policy specs") {
    CHECK(parse_policy_spec("fixed:2").kind == PolicyKind::fixed);
    CHECK(parse_policy_spec("fixed:2").fixed_arm == 2);
    CHECK(parse_policy_spec("egreedy").kind == PolicyKind::egreedy);
    CHECK(parse_policy_spec("ppo").to_string() == "ppo");
    CHECK(parse_policy_spec("oracle").kind == PolicyKind::oracle);
    CHECK_THROWS_AS(parse_policy_spec("ucb"), InvalidInput);
    CHECK_THROWS_AS(parse_policy_spec("fixed:x"), InvalidInput);
    CHECK_THROWS(make_policy(parse_policy_spec("oracle"), 2, 2, {}, 0));
    CHECK_THROWS(make_policy(parse_policy_spec("fixed:5"), 2, 2, {}, 0));
    auto f = make_policy(parse_policy_spec("fixed:1"), 2, 3, {}, 0);
    Rng rng(0);
    CHECK(f->decide(kCtx, rng).arm.value == 1);
}

TEST_CASE("fixed arm mean converges to its expected reward") {
    auto cfg = arbiter::testing::crossover_env(2, 31);
    Environment env(cfg);
    FixedArmPolicy p(ArmIndex{1}, 2);
    Rng rng(0);
    const int n = 20000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto s = env.sample_step();
        sum += observe(s, p.decide(s.context, rng).arm, {}, LatencyMode::raw_seconds).breakdown.total;
    }
    const double expected = 0.5 * 0.2 + 0.5 * 0.95;
    const double se = std::sqrt(expected * (1 - expected) / n);
    CHECK(std::abs(sum / n - expected) <= 3 * se);
}
