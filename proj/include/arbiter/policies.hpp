#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "arbiter/domain.hpp"
#include "arbiter/env.hpp"
#include "arbiter/nn.hpp"
#include "arbiter/rng.hpp"

namespace arbiter {

struct Decision {
    ArmIndex arm;
    std::optional<std::vector<double>> probs;
    double log_prob = 0.0;
};

/// A model selector learning from bandit feedback. `learn` only ever receives the chosen
/// arm's reward; decide() is const so that read-only snapshots can serve concurrent requests.
class Policy {
public:
    virtual ~Policy() = default;

    virtual std::string name() const = 0;
    virtual std::size_t arm_count() const = 0;
    virtual Decision decide(const Context& ctx, Rng& rng) const = 0;
    virtual std::optional<nn::UpdateDiagnostics> learn(const Context& ctx, const Decision& decision,
                                                       double reward_total) = 0;
    virtual void add_arm() = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;

    virtual void save(std::ostream& out) const = 0;
    virtual void load(std::istream& in) = 0;
};

class FixedArmPolicy final : public Policy {
public:
    FixedArmPolicy(ArmIndex arm, std::size_t arm_count);

    std::string name() const override { return "fixed:" + std::to_string(arm_.value); }
    std::size_t arm_count() const override { return arm_count_; }
    Decision decide(const Context& ctx, Rng& rng) const override;
    std::optional<nn::UpdateDiagnostics> learn(const Context&, const Decision&, double) override { return std::nullopt; }
    void add_arm() override { ++arm_count_; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<FixedArmPolicy>(*this); }
    void save(std::ostream& out) const override;
    void load(std::istream& in) override;

private:
    ArmIndex arm_;
    std::size_t arm_count_;
};

inline constexpr double kDefaultOptimalityGap = 0.01;

/// eps = min{1, |F| / ((t + 1) * gap)}
double epsilon_schedule(std::uint64_t t, std::size_t arm_count, double gap = kDefaultOptimalityGap);

struct EpsilonGreedyState {
    std::vector<std::uint64_t> counts;
    std::vector<double> means;
    std::uint64_t t = 0;
};

class EpsilonGreedyPolicy final : public Policy {
public:
    explicit EpsilonGreedyPolicy(std::size_t arm_count, double optimality_gap = kDefaultOptimalityGap);

    std::string name() const override { return "egreedy"; }
    std::size_t arm_count() const override { return state_.counts.size(); }
    Decision decide(const Context& ctx, Rng& rng) const override;
    std::optional<nn::UpdateDiagnostics> learn(const Context& ctx, const Decision& decision, double reward) override;
    void add_arm() override;
    std::unique_ptr<Policy> clone() const override { return std::make_unique<EpsilonGreedyPolicy>(*this); }
    void save(std::ostream& out) const override;
    void load(std::istream& in) override;

    double current_epsilon() const;
    /// Pins exploration to a constant; used by tests and ablations.
    void force_epsilon(std::optional<double> eps) { forced_epsilon_ = eps; }
    const EpsilonGreedyState& state() const noexcept { return state_; }

private:
    EpsilonGreedyState state_;
    double gap_;
    std::optional<double> forced_epsilon_;
};

struct PpoAgentConfig {
    std::vector<std::size_t> hidden = nn::kDefaultHidden;
    nn::PpoConfig ppo;
    double policy_init_gain = 0.01;
};

/// Contextual actor-critic selector. Collects transitions and runs one PPO update each time
/// the buffer reaches ppo.buffer_size.
class PpoPolicy final : public Policy {
public:
    PpoPolicy(std::size_t input_dim, std::size_t arm_count, const PpoAgentConfig& cfg, Rng& init_rng);
    PpoPolicy(nn::DenseNet net, const PpoAgentConfig& cfg);

    std::string name() const override { return "ppo"; }
    std::size_t arm_count() const override { return net_.arm_count(); }
    Decision decide(const Context& ctx, Rng& rng) const override;
    std::optional<nn::UpdateDiagnostics> learn(const Context& ctx, const Decision& decision, double reward) override;
    void add_arm() override;
    std::unique_ptr<Policy> clone() const override { return std::make_unique<PpoPolicy>(*this); }
    void save(std::ostream& out) const override;
    void load(std::istream& in) override;

    /// Argmax instead of sampling. Learning always samples.
    void set_deterministic(bool on) { deterministic_ = on; }
    std::vector<double> probabilities(const Context& ctx) const;

    const nn::DenseNet& network() const noexcept { return net_; }
    const nn::AdamState& optimizer() const noexcept { return adam_; }
    std::size_t buffered() const noexcept { return buffer_.size(); }
    std::uint64_t updates() const noexcept { return updates_; }

private:
    nn::DenseNet net_;
    nn::AdamState adam_;
    PpoAgentConfig cfg_;
    std::vector<nn::Transition> buffer_;
    std::uint64_t updates_ = 0;
    bool deterministic_ = false;
};

/// Evaluation-only: argmax of the realized reward vector, ties to the lowest index.
ArmIndex oracle_decide(const StepSample& step, const RewardWeights& weights, LatencyMode mode);

enum class PolicyKind { fixed, egreedy, ppo, oracle };

struct PolicySpec {
    PolicyKind kind = PolicyKind::egreedy;
    std::size_t fixed_arm = 0;

    std::string to_string() const;
};

/// Parses fixed:<i> | egreedy | ppo | oracle.
PolicySpec parse_policy_spec(const std::string& text);

/// Builds a learning policy. Oracle has no learnable state and is rejected here.
std::unique_ptr<Policy> make_policy(const PolicySpec& spec, std::size_t context_dim, std::size_t arm_count,
                                    const PpoAgentConfig& ppo_cfg, std::uint64_t seed);

}  // namespace arbiter
