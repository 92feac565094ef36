#include "arbiter/policies.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "arbiter/binary_io.hpp"

namespace arbiter {

namespace {

constexpr std::uint32_t kPolicyFormat = 1;

void put_header(std::ostream& out, const std::string& kind) {
    io::put<std::uint32_t>(out, kPolicyFormat);
    io::put_string(out, kind);
}

void expect_header(std::istream& in, const std::string& kind) {
    const auto version = io::get<std::uint32_t>(in);
    if (version != kPolicyFormat) throw io::FormatError("unsupported policy checkpoint version");
    const auto found = io::get_string(in);
    if (found != kind) throw io::FormatError("checkpoint holds a '" + found + "' policy, expected '" + kind + "'");
}

std::size_t argmax_lowest(const std::vector<double>& xs) {
    return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

}  // namespace

FixedArmPolicy::FixedArmPolicy(ArmIndex arm, std::size_t arm_count) : arm_(arm), arm_count_(arm_count) {
    if (arm.value >= arm_count) throw InvalidInput("fixed arm " + std::to_string(arm.value) + " out of range");
}

Decision FixedArmPolicy::decide(const Context&, Rng&) const {
    std::vector<double> probs(arm_count_, 0.0);
    probs[arm_.value] = 1.0;
    return {arm_, std::move(probs), 0.0};
}

void FixedArmPolicy::save(std::ostream& out) const {
    put_header(out, "fixed");
    io::put<std::uint64_t>(out, arm_.value);
    io::put<std::uint64_t>(out, arm_count_);
}

void FixedArmPolicy::load(std::istream& in) {
    expect_header(in, "fixed");
    arm_ = ArmIndex{io::get<std::uint64_t>(in)};
    arm_count_ = io::get<std::uint64_t>(in);
}

double epsilon_schedule(std::uint64_t t, std::size_t arm_count, double gap) {
    return std::min(1.0, static_cast<double>(arm_count) / ((static_cast<double>(t) + 1.0) * gap));
}

EpsilonGreedyPolicy::EpsilonGreedyPolicy(std::size_t arm_count, double optimality_gap) : gap_(optimality_gap) {
    if (arm_count == 0) throw InvalidInput("epsilon-greedy needs at least one arm");
    state_.counts.assign(arm_count, 0);
    state_.means.assign(arm_count, 0.0);
}

double EpsilonGreedyPolicy::current_epsilon() const {
    return forced_epsilon_ ? *forced_epsilon_ : epsilon_schedule(state_.t, arm_count(), gap_);
}

Decision EpsilonGreedyPolicy::decide(const Context&, Rng& rng) const {
    const std::size_t k = arm_count();
    const double eps = current_epsilon();
    const std::size_t greedy = argmax_lowest(state_.means);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t arm = greedy;
    if (unit(rng) < eps) arm = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);

    std::vector<double> probs(k, eps / static_cast<double>(k));
    probs[greedy] += 1.0 - eps;
    const double log_prob = std::log(probs[arm]);
    return {ArmIndex{arm}, std::move(probs), log_prob};
}

std::optional<nn::UpdateDiagnostics> EpsilonGreedyPolicy::learn(const Context&, const Decision& decision,
                                                                double reward) {
    const std::size_t a = decision.arm.value;
    if (a >= arm_count()) throw InvalidInput("learn: arm out of range");
    if (!std::isfinite(reward)) throw InvalidInput("learn: reward must be finite");
    const double n = static_cast<double>(state_.counts[a]);
    state_.means[a] = (state_.means[a] * n + reward) / (n + 1.0);
    ++state_.counts[a];
    ++state_.t;
    return std::nullopt;
}

void EpsilonGreedyPolicy::add_arm() {
    state_.counts.push_back(0);
    state_.means.push_back(0.0);
}

void EpsilonGreedyPolicy::save(std::ostream& out) const {
    put_header(out, "egreedy");
    io::put<double>(out, gap_);
    io::put<std::uint64_t>(out, state_.t);
    io::put<std::uint64_t>(out, state_.counts.size());
    for (auto c : state_.counts) io::put<std::uint64_t>(out, c);
    io::put_doubles(out, state_.means);
}

void EpsilonGreedyPolicy::load(std::istream& in) {
    expect_header(in, "egreedy");
    gap_ = io::get<double>(in);
    EpsilonGreedyState s;
    s.t = io::get<std::uint64_t>(in);
    const auto k = io::get<std::uint64_t>(in);
    if (k > (1u << 20)) throw io::FormatError("corrupt arm count");
    for (std::uint64_t i = 0; i < k; ++i) s.counts.push_back(io::get<std::uint64_t>(in));
    s.means = io::get_doubles(in);
    if (s.means.size() != k) throw io::FormatError("epsilon-greedy checkpoint arm count mismatch");
    state_ = std::move(s);
}

PpoPolicy::PpoPolicy(std::size_t input_dim, std::size_t arm_count, const PpoAgentConfig& cfg, Rng& init_rng)
    : net_(input_dim, cfg.hidden, arm_count), cfg_(cfg) {
    nn::xavier_init(net_, init_rng, cfg.policy_init_gain);
    adam_ = nn::AdamState::for_net(net_);
}

PpoPolicy::PpoPolicy(nn::DenseNet net, const PpoAgentConfig& cfg)
    : net_(std::move(net)), adam_(nn::AdamState::for_net(net_)), cfg_(cfg) {
    cfg_.hidden = net_.hidden_dims();
}

std::vector<double> PpoPolicy::probabilities(const Context& ctx) const {
    return nn::softmax(net_.forward(ctx).logits);
}

Decision PpoPolicy::decide(const Context& ctx, Rng& rng) const {
    const auto out = net_.forward(ctx);
    std::vector<double> probs = nn::softmax(out.logits);
    std::size_t arm = 0;
    if (deterministic_) {
        arm = argmax_lowest(out.logits);
    } else {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double u = unit(rng);
        double acc = 0.0;
        arm = probs.size() - 1;
        for (std::size_t a = 0; a < probs.size(); ++a) {
            acc += probs[a];
            if (u < acc) {
                arm = a;
                break;
            }
        }
    }
    const double log_prob = nn::log_softmax_at(out.logits, arm);
    return {ArmIndex{arm}, std::move(probs), log_prob};
}

std::optional<nn::UpdateDiagnostics> PpoPolicy::learn(const Context& ctx, const Decision& decision, double reward) {
    if (decision.arm.value >= arm_count()) throw InvalidInput("learn: arm out of range");
    if (!std::isfinite(reward)) throw InvalidInput("learn: reward must be finite");
    buffer_.push_back({ctx, decision.arm, decision.log_prob, reward});
    if (buffer_.size() < cfg_.ppo.buffer_size) return std::nullopt;
    std::vector<nn::Transition> batch;
    batch.swap(buffer_);
    auto diag = nn::ppo_update(net_, adam_, batch, cfg_.ppo);
    ++updates_;
    return diag;
}

void PpoPolicy::add_arm() { nn::expand_head(net_, adam_); }

void PpoPolicy::save(std::ostream& out) const {
    put_header(out, "ppo");
    nn::save_network(out, net_, adam_);
    io::put<std::uint64_t>(out, updates_);
    io::put<std::uint64_t>(out, buffer_.size());
    for (const auto& tr : buffer_) {
        io::put_doubles(out, std::vector<double>(tr.context.values().begin(), tr.context.values().end()));
        io::put<std::uint64_t>(out, tr.action.value);
        io::put<double>(out, tr.old_log_prob);
        io::put<double>(out, tr.reward);
    }
}

void PpoPolicy::load(std::istream& in) {
    expect_header(in, "ppo");
    nn::DenseNet net;
    nn::AdamState adam;
    nn::load_network(in, net, adam);
    const auto updates = io::get<std::uint64_t>(in);
    const auto n = io::get<std::uint64_t>(in);
    if (n > 1'000'000) throw io::FormatError("corrupt transition buffer length");
    std::vector<nn::Transition> buffer;
    for (std::uint64_t i = 0; i < n; ++i) {
        nn::Transition tr;
        tr.context = Context(io::get_doubles(in));
        tr.action = ArmIndex{io::get<std::uint64_t>(in)};
        tr.old_log_prob = io::get<double>(in);
        tr.reward = io::get<double>(in);
        buffer.push_back(std::move(tr));
    }
    net_ = std::move(net);
    adam_ = std::move(adam);
    cfg_.hidden = net_.hidden_dims();
    updates_ = updates;
    buffer_ = std::move(buffer);
}

ArmIndex oracle_decide(const StepSample& step, const RewardWeights& weights, LatencyMode mode) {
    return ArmIndex{argmax_lowest(full_reward_vector(step, weights, mode))};
}

std::string PolicySpec::to_string() const {
    switch (kind) {
        case PolicyKind::fixed: return "fixed:" + std::to_string(fixed_arm);
        case PolicyKind::egreedy: return "egreedy";
        case PolicyKind::ppo: return "ppo";
        case PolicyKind::oracle: return "oracle";
    }
    return "unknown";
}

PolicySpec parse_policy_spec(const std::string& text) {
    if (text == "egreedy") return {PolicyKind::egreedy, 0};
    if (text == "ppo") return {PolicyKind::ppo, 0};
    if (text == "oracle") return {PolicyKind::oracle, 0};
    if (text.rfind("fixed:", 0) == 0) {
        const std::string idx = text.substr(6);
        if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos)
            throw InvalidInput("fixed policy needs a non-negative arm index, got '" + text + "'");
        return {PolicyKind::fixed, static_cast<std::size_t>(std::stoull(idx))};
    }
    throw InvalidInput("unknown policy '" + text + "' (expected fixed:<i>, egreedy, ppo or oracle)");
}

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, std::size_t context_dim, std::size_t arm_count,
                                    const PpoAgentConfig& ppo_cfg, std::uint64_t seed) {
    switch (spec.kind) {
        case PolicyKind::fixed: return std::make_unique<FixedArmPolicy>(ArmIndex{spec.fixed_arm}, arm_count);
        case PolicyKind::egreedy: return std::make_unique<EpsilonGreedyPolicy>(arm_count);
        case PolicyKind::ppo: {
            Rng init = make_rng(seed, Stream::init);
            return std::make_unique<PpoPolicy>(context_dim, arm_count, ppo_cfg, init);
        }
        case PolicyKind::oracle: break;
    }
    throw InvalidInput("the oracle is evaluation-only and has no learnable policy");
}

}  // namespace arbiter
