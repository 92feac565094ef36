#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "arbiter/domain.hpp"
#include "arbiter/rng.hpp"

namespace arbiter::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline const std::vector<std::size_t> kDefaultHidden{512, 128, 64, 16};
inline constexpr std::size_t kDefaultInputDim = 768;

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;
};

struct ForwardOutput {
    std::vector<double> logits;
    double value = 0.0;
};

/// Actor-critic MLP: tanh hidden stack shared by a softmax policy head and a scalar value head.
/// All parameters start at zero; use xavier_init() for a trainable network.
class DenseNet {
public:
    DenseNet() = default;
    DenseNet(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t arm_count);

    std::size_t input_dim() const noexcept { return input_dim_; }
    const std::vector<std::size_t>& hidden_dims() const noexcept { return hidden_; }
    std::size_t arm_count() const noexcept { return static_cast<std::size_t>(policy_head.weight.rows()); }
    std::size_t parameter_count() const;

    ForwardOutput forward(const Context& ctx) const;

    /// Parameter blocks in a fixed order: hidden (W, b)..., policy (W, b), value (W, b).
    std::vector<std::span<double>> parameter_blocks();
    std::vector<std::span<const double>> parameter_blocks() const;

    /// Same shapes, all zeros.
    DenseNet zeros_like() const;

    std::vector<DenseLayer> hidden;
    DenseLayer policy_head;
    DenseLayer value_head;

private:
    std::size_t input_dim_ = 0;
    std::vector<std::size_t> hidden_;
};

/// Uniform Xavier for every layer; the policy head is further scaled by `policy_gain`
/// so the initial policy is close to uniform. Biases start at zero.
void xavier_init(DenseNet& net, Rng& rng, double policy_gain = 0.01);

/// Numerically stable softmax (max-subtracted).
std::vector<double> softmax(std::span<const double> logits);
double log_softmax_at(std::span<const double> logits, std::size_t index);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    DenseNet first_moment;
    DenseNet second_moment;
    std::uint64_t step = 0;

    static AdamState for_net(const DenseNet& net) { return {net.zeros_like(), net.zeros_like(), 0}; }
};

void adam_step(DenseNet& net, AdamState& adam, const DenseNet& gradient, const AdamConfig& cfg);

struct PpoConfig {
    AdamConfig adam;
    double clip_ratio = 0.2;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    int epochs = 10;
    double target_kl = 0.003;
    double kl_stop_factor = 1.5;
    bool normalize_advantage = true;
    double max_grad_norm = 0.5;  // <= 0 disables clipping
    std::size_t buffer_size = 5;
};

struct Transition {
    Context context;
    ArmIndex action;
    double old_log_prob = 0.0;
    double reward = 0.0;
};

struct UpdateDiagnostics {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
    int epochs_run = 0;
};

/// Inputs of the clipped-surrogate objective with advantages and returns frozen
/// at the start of an update.
struct PpoBatch {
    Matrix contexts;  // input_dim x B
    std::vector<std::size_t> actions;
    std::vector<double> old_log_probs;
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// Advantage = reward - V(ctx) under the current network; the return is the immediate reward (no discounting).
PpoBatch make_ppo_batch(const DenseNet& net, std::span<const Transition> transitions, bool normalize_advantage);

struct PpoLoss {
    double total = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
};

/// Loss = -mean(min(rho A, clip(rho) A)) + value_coef * mean((R - V)^2) - entropy_coef * mean(H).
/// When `gradient` is non-null it receives dLoss/dparams (overwritten).
PpoLoss ppo_loss(const DenseNet& net, const PpoBatch& batch, const PpoConfig& cfg, DenseNet* gradient);

/// Runs up to cfg.epochs full-batch epochs. An epoch whose pre-step approx KL exceeds
/// kl_stop_factor * target_kl ends the update without stepping; it still counts in epochs_run.
/// A non-finite loss restores the network and optimizer and throws NumericalError.
UpdateDiagnostics ppo_update(DenseNet& net, AdamState& adam, std::span<const Transition> batch,
                             const PpoConfig& cfg);

/// 0.5 * logit_weight * sum (logit - target)^2 + 0.5 * value_weight * (value - target)^2, summed over contexts.
struct SquaredOutputLoss {
    std::vector<Context> contexts;
    std::vector<double> logit_targets;
    double value_target = 0.0;
    double logit_weight = 1.0;
    double value_weight = 1.0;
};

struct PpoObjective {
    PpoBatch batch;
    PpoConfig config;
};

using LossSpec = std::variant<SquaredOutputLoss, PpoObjective>;

double evaluate_loss(const DenseNet& net, const LossSpec& spec, DenseNet* gradient);

/// max |g_analytic - g_fd| / max(1, |g_fd|) over every parameter, central differences with step h.
double grad_check(const DenseNet& net, const LossSpec& spec, double h = 1e-5);

/// Appends one arm: a zero row in the policy head and zeroed optimizer moments for it.
void expand_head(DenseNet& net, AdamState& adam);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_network(std::ostream& out, const DenseNet& net, const AdamState& adam);
void load_network(std::istream& in, DenseNet& net, AdamState& adam);

}  // namespace arbiter::nn
