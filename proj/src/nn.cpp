#include "arbiter/nn.hpp"

#include "arbiter/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace arbiter::nn {

namespace {

DenseLayer zero_layer(std::size_t out, std::size_t in) {
    return {Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
            Vector::Zero(static_cast<Eigen::Index>(out))};
}

struct BatchCache {
    std::vector<Matrix> activations;  // activations[0] is the input
    Matrix logits;                    // K x B
    Eigen::RowVectorXd values;        // 1 x B
};

BatchCache forward_batch(const DenseNet& net, const Matrix& inputs) {
    BatchCache cache;
    cache.activations.reserve(net.hidden.size() + 1);
    cache.activations.push_back(inputs);
    for (const auto& layer : net.hidden) {
        Matrix z = layer.weight * cache.activations.back();
        z.colwise() += layer.bias;
        cache.activations.push_back(z.array().tanh().matrix());
    }
    const Matrix& last = cache.activations.back();
    cache.logits = net.policy_head.weight * last;
    cache.logits.colwise() += net.policy_head.bias;
    cache.values = net.value_head.weight * last;
    cache.values.array() += net.value_head.bias(0);
    return cache;
}

// Accumulates parameter gradients given dLoss/dlogits (K x B) and dLoss/dvalues (1 x B).
void backward(const DenseNet& net, const BatchCache& cache, const Matrix& d_logits,
              const Eigen::RowVectorXd& d_values, DenseNet& grad) {
    const Matrix& last = cache.activations.back();
    grad.policy_head.weight = d_logits * last.transpose();
    grad.policy_head.bias = d_logits.rowwise().sum();
    grad.value_head.weight = d_values * last.transpose();
    grad.value_head.bias(0) = d_values.sum();

    Matrix d_act = net.policy_head.weight.transpose() * d_logits + net.value_head.weight.transpose() * d_values;
    for (std::size_t l = net.hidden.size(); l-- > 0;) {
        const Matrix& out = cache.activations[l + 1];
        Matrix d_z = (d_act.array() * (1.0 - out.array().square())).matrix();
        grad.hidden[l].weight = d_z * cache.activations[l].transpose();
        grad.hidden[l].bias = d_z.rowwise().sum();
        if (l > 0) d_act = net.hidden[l].weight.transpose() * d_z;
    }
}

Matrix stack_contexts(std::span<const Context> contexts, std::size_t input_dim) {
    Matrix x(static_cast<Eigen::Index>(input_dim), static_cast<Eigen::Index>(contexts.size()));
    for (std::size_t j = 0; j < contexts.size(); ++j) {
        if (contexts[j].dim() != input_dim)
            throw InvalidInput("context dimension " + std::to_string(contexts[j].dim()) +
                               " does not match network input " + std::to_string(input_dim));
        for (std::size_t i = 0; i < input_dim; ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = contexts[j][i];
    }
    return x;
}

// Column-wise log-softmax.
Matrix log_softmax_columns(const Matrix& logits) {
    Matrix out = logits;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double m = logits.col(j).maxCoeff();
        const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
        out.col(j).array() -= lse;
    }
    return out;
}

Eigen::Map<const Eigen::ArrayXd> as_array(std::span<const double> block) {
    return {block.data(), static_cast<Eigen::Index>(block.size())};
}

double global_norm(const DenseNet& grad) {
    double sq = 0.0;
    for (auto block : grad.parameter_blocks()) sq += as_array(block).square().sum();
    return std::sqrt(sq);
}

void scale(DenseNet& grad, double factor) {
    for (auto block : grad.parameter_blocks())
        Eigen::Map<Eigen::ArrayXd>(block.data(), static_cast<Eigen::Index>(block.size())) *= factor;
}

bool finite(const DenseNet& net) {
    for (auto block : net.parameter_blocks())
        if (!as_array(block).isFinite().all()) return false;
    return true;
}

}  // namespace

DenseNet::DenseNet(std::size_t input_dim, std::vector<std::size_t> hidden_dims, std::size_t arm_count)
    : input_dim_(input_dim), hidden_(std::move(hidden_dims)) {
    if (input_dim == 0) throw InvalidInput("network input dimension must be positive");
    if (arm_count == 0) throw InvalidInput("network needs at least one arm");
    std::size_t prev = input_dim;
    for (std::size_t width : hidden_) {
        if (width == 0) throw InvalidInput("hidden layer width must be positive");
        hidden.push_back(zero_layer(width, prev));
        prev = width;
    }
    policy_head = zero_layer(arm_count, prev);
    value_head = zero_layer(1, prev);
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (auto block : parameter_blocks()) n += block.size();
    return n;
}

ForwardOutput DenseNet::forward(const Context& ctx) const {
    if (ctx.dim() != input_dim_)
        throw InvalidInput("context dimension " + std::to_string(ctx.dim()) + " does not match network input " +
                           std::to_string(input_dim_));
    Vector a = Eigen::Map<const Vector>(ctx.values().data(), static_cast<Eigen::Index>(ctx.dim()));
    for (const auto& layer : hidden) a = (layer.weight * a + layer.bias).array().tanh().matrix();
    Vector logits = policy_head.weight * a + policy_head.bias;
    ForwardOutput out;
    out.logits.assign(logits.data(), logits.data() + logits.size());
    out.value = value_head.weight.row(0).dot(a) + value_head.bias(0);
    return out;
}

std::vector<std::span<double>> DenseNet::parameter_blocks() {
    std::vector<std::span<double>> blocks;
    auto add = [&](DenseLayer& l) {
        blocks.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        blocks.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    };
    for (auto& l : hidden) add(l);
    add(policy_head);
    add(value_head);
    return blocks;
}

std::vector<std::span<const double>> DenseNet::parameter_blocks() const {
    std::vector<std::span<const double>> blocks;
    for (auto b : const_cast<DenseNet*>(this)->parameter_blocks()) blocks.emplace_back(b.data(), b.size());
    return blocks;
}

DenseNet DenseNet::zeros_like() const { return DenseNet(input_dim_, hidden_, arm_count()); }

void xavier_init(DenseNet& net, Rng& rng, double policy_gain) {
    auto init = [&](DenseLayer& layer, double gain) {
        const double fan_in = static_cast<double>(layer.weight.cols());
        const double fan_out = static_cast<double>(layer.weight.rows());
        const double bound = gain * std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        // column-major fill order is part of the reproducibility contract
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
        layer.bias.setZero();
    };
    for (auto& l : net.hidden) init(l, 1.0);
    init(net.policy_head, policy_gain);
    init(net.value_head, 1.0);
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - m));
    for (double& x : p) x /= sum;
    return p;
}

double log_softmax_at(std::span<const double> logits, std::size_t index) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - m);
    return logits[index] - m - std::log(sum);
}

void adam_step(DenseNet& net, AdamState& adam, const DenseNet& gradient, const AdamConfig& cfg) {
    ++adam.step;
    const double t = static_cast<double>(adam.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto params = net.parameter_blocks();
    auto grads = gradient.parameter_blocks();
    auto m = adam.first_moment.parameter_blocks();
    auto v = adam.second_moment.parameter_blocks();
    using Array = Eigen::ArrayXd;
    for (std::size_t b = 0; b < params.size(); ++b) {
        const auto n = static_cast<Eigen::Index>(params[b].size());
        Eigen::Map<Array> p(params[b].data(), n);
        Eigen::Map<const Array> g(grads[b].data(), n);
        Eigen::Map<Array> mb(m[b].data(), n);
        Eigen::Map<Array> vb(v[b].data(), n);
        mb = cfg.beta1 * mb + (1.0 - cfg.beta1) * g;
        vb = cfg.beta2 * vb + (1.0 - cfg.beta2) * g.square();
        p -= cfg.learning_rate * (mb / c1) / ((vb / c2).sqrt() + cfg.epsilon);
    }
}

PpoBatch make_ppo_batch(const DenseNet& net, std::span<const Transition> transitions, bool normalize_advantage) {
    if (transitions.empty()) throw InvalidInput("PPO batch must be non-empty");
    std::vector<Context> contexts;
    contexts.reserve(transitions.size());
    for (const auto& tr : transitions) contexts.push_back(tr.context);

    PpoBatch batch;
    batch.contexts = stack_contexts(contexts, net.input_dim());
    const BatchCache cache = forward_batch(net, batch.contexts);
    const std::size_t n = transitions.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& tr = transitions[i];
        if (tr.action.value >= net.arm_count()) throw InvalidInput("transition action out of range");
        batch.actions.push_back(tr.action.value);
        batch.old_log_probs.push_back(tr.old_log_prob);
        // discount factor is zero: the return is the immediate reward
        batch.returns.push_back(tr.reward);
        batch.advantages.push_back(tr.reward - cache.values(static_cast<Eigen::Index>(i)));
    }
    if (normalize_advantage && n > 1) {
        const double mean = std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0) / static_cast<double>(n);
        double var = 0.0;
        for (double a : batch.advantages) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / static_cast<double>(n));
        for (double& a : batch.advantages) a = (a - mean) / (sd + 1e-8);
    }
    return batch;
}

PpoLoss ppo_loss(const DenseNet& net, const PpoBatch& batch, const PpoConfig& cfg, DenseNet* gradient) {
    const BatchCache cache = forward_batch(net, batch.contexts);
    const Matrix logp = log_softmax_columns(cache.logits);
    const Eigen::Index n = cache.logits.cols();
    const double inv_n = 1.0 / static_cast<double>(n);

    Matrix d_logits = Matrix::Zero(cache.logits.rows(), n);
    Eigen::RowVectorXd d_values(n);
    PpoLoss loss;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto a = static_cast<Eigen::Index>(batch.actions[static_cast<std::size_t>(j)]);
        const double adv = batch.advantages[static_cast<std::size_t>(j)];
        const double log_ratio = logp(a, j) - batch.old_log_probs[static_cast<std::size_t>(j)];
        const double ratio = std::exp(log_ratio);
        const double unclipped = ratio * adv;
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv;
        loss.policy_loss -= std::min(unclipped, clipped) * inv_n;
        loss.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;

        const Eigen::ArrayXd p = logp.col(j).array().exp();
        const double h = -(p * logp.col(j).array()).sum();
        loss.entropy += h * inv_n;

        const double v = cache.values(j);
        const double r = batch.returns[static_cast<std::size_t>(j)];
        loss.value_loss += (r - v) * (r - v) * inv_n;

        if (gradient) {
            // d(-min)/d logp_a; zero when the clipped branch is active
            const double g_logp = unclipped <= clipped ? -ratio * adv * inv_n : 0.0;
            Eigen::ArrayXd col = -g_logp * p;
            col(a) += g_logp;
            // -entropy_coef * H: dH/dlogit_k = -p_k (log p_k + H)
            col += cfg.entropy_coef * inv_n * p * (logp.col(j).array() + h);
            d_logits.col(j) = col.matrix();
            d_values(j) = cfg.value_coef * 2.0 * (v - r) * inv_n;
        }
    }
    loss.total = loss.policy_loss + cfg.value_coef * loss.value_loss - cfg.entropy_coef * loss.entropy;
    if (gradient) {
        if (gradient->arm_count() != net.arm_count() || gradient->hidden.size() != net.hidden.size())
            *gradient = net.zeros_like();
        backward(net, cache, d_logits, d_values, *gradient);
    }
    return loss;
}

UpdateDiagnostics ppo_update(DenseNet& net, AdamState& adam, std::span<const Transition> transitions,
                             const PpoConfig& cfg) {
    const PpoBatch batch = make_ppo_batch(net, transitions, cfg.normalize_advantage);
    const DenseNet saved_net = net;
    const AdamState saved_adam = adam;
    DenseNet grad = net.zeros_like();
    UpdateDiagnostics diag;
    const double kl_limit = cfg.kl_stop_factor * cfg.target_kl;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const PpoLoss loss = ppo_loss(net, batch, cfg, &grad);
        diag = {loss.policy_loss, loss.value_loss, loss.entropy, loss.approx_kl, epoch};
        if (!std::isfinite(loss.total) || !std::isfinite(loss.approx_kl) || !finite(grad)) {
            net = saved_net;
            adam = saved_adam;
            throw NumericalError("non-finite PPO loss; update rolled back");
        }
        if (cfg.target_kl > 0.0 && loss.approx_kl > kl_limit) break;
        if (cfg.max_grad_norm > 0.0) {
            const double norm = global_norm(grad);
            if (norm > cfg.max_grad_norm) scale(grad, cfg.max_grad_norm / (norm + 1e-6));
        }
        adam_step(net, adam, grad, cfg.adam);
    }
    if (!finite(net)) {
        net = saved_net;
        adam = saved_adam;
        throw NumericalError("non-finite parameters after PPO update; update rolled back");
    }
    return diag;
}

double evaluate_loss(const DenseNet& net, const LossSpec& spec, DenseNet* gradient) {
    if (const auto* ppo = std::get_if<PpoObjective>(&spec)) return ppo_loss(net, ppo->batch, ppo->config, gradient).total;

    const auto& sq = std::get<SquaredOutputLoss>(spec);
    const Matrix x = stack_contexts(sq.contexts, net.input_dim());
    const BatchCache cache = forward_batch(net, x);
    if (sq.logit_targets.size() != net.arm_count()) throw InvalidInput("logit target length must equal arm count");
    const Eigen::Map<const Vector> target(sq.logit_targets.data(), static_cast<Eigen::Index>(sq.logit_targets.size()));
    const Matrix diff = cache.logits.colwise() - target;
    const Eigen::RowVectorXd vdiff = cache.values.array() - sq.value_target;
    const double loss = 0.5 * sq.logit_weight * diff.squaredNorm() + 0.5 * sq.value_weight * vdiff.squaredNorm();
    if (gradient) {
        if (gradient->arm_count() != net.arm_count() || gradient->hidden.size() != net.hidden.size())
            *gradient = net.zeros_like();
        backward(net, cache, sq.logit_weight * diff, sq.value_weight * vdiff, *gradient);
    }
    return loss;
}

double grad_check(const DenseNet& net, const LossSpec& spec, double h) {
    DenseNet analytic = net.zeros_like();
    evaluate_loss(net, spec, &analytic);
    DenseNet probe = net;
    auto params = probe.parameter_blocks();
    auto grads = analytic.parameter_blocks();
    double worst = 0.0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double original = params[b][i];
            params[b][i] = original + h;
            const double up = evaluate_loss(probe, spec, nullptr);
            params[b][i] = original - h;
            const double down = evaluate_loss(probe, spec, nullptr);
            params[b][i] = original;
            const double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, std::abs(grads[b][i] - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    return worst;
}

void expand_head(DenseNet& net, AdamState& adam) {
    auto grow = [](DenseLayer& layer) {
        const Eigen::Index rows = layer.weight.rows();
        layer.weight.conservativeResize(rows + 1, Eigen::NoChange);
        layer.weight.row(rows).setZero();
        layer.bias.conservativeResize(rows + 1);
        layer.bias(rows) = 0.0;
    };
    grow(net.policy_head);
    if (adam.first_moment.arm_count() + 1 == net.arm_count()) {
        grow(adam.first_moment.policy_head);
        grow(adam.second_moment.policy_head);
    } else {
        adam = AdamState::for_net(net);
    }
}

namespace {

constexpr char kMagic[8] = {'A', 'R', 'B', 'N', 'E', 'T', '0', '1'};

using io::get;
using io::put;

void put_blocks(std::ostream& out, const DenseNet& net) {
    for (auto block : net.parameter_blocks())
        out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size() * sizeof(double)));
}

void get_blocks(std::istream& in, DenseNet& net) {
    for (auto block : net.parameter_blocks()) {
        in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size() * sizeof(double)));
        if (!in) throw io::FormatError("truncated network checkpoint");
    }
}

}  // namespace

void save_network(std::ostream& out, const DenseNet& net, const AdamState& adam) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, net.input_dim());
    put<std::uint64_t>(out, net.hidden_dims().size());
    for (std::size_t w : net.hidden_dims()) put<std::uint64_t>(out, w);
    put<std::uint64_t>(out, net.arm_count());
    put_blocks(out, net);
    put<std::uint64_t>(out, adam.step);
    put_blocks(out, adam.first_moment);
    put_blocks(out, adam.second_moment);
    if (!out) throw std::runtime_error("failed to write network checkpoint");
}

void load_network(std::istream& in, DenseNet& net, AdamState& adam) {
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
        throw io::FormatError("not a network checkpoint");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw io::FormatError("unsupported network checkpoint version " + std::to_string(version));
    const auto input_dim = get<std::uint64_t>(in);
    const auto depth = get<std::uint64_t>(in);
    if (depth > 64) throw io::FormatError("corrupt network checkpoint");
    std::vector<std::size_t> hidden;
    for (std::uint64_t i = 0; i < depth; ++i) hidden.push_back(get<std::uint64_t>(in));
    const auto arms = get<std::uint64_t>(in);
    DenseNet loaded(input_dim, hidden, arms);
    get_blocks(in, loaded);
    AdamState loaded_adam = AdamState::for_net(loaded);
    loaded_adam.step = get<std::uint64_t>(in);
    get_blocks(in, loaded_adam.first_moment);
    get_blocks(in, loaded_adam.second_moment);
    net = std::move(loaded);
    adam = std::move(loaded_adam);
}

}  // namespace arbiter::nn
