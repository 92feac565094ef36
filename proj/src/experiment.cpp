#include "arbiter/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace arbiter {

const std::map<std::string, RewardWeights>& reward_presets() {
    static const std::map<std::string, RewardWeights> presets{
        {"mmlu", {0.03, 0.0008}},
        {"waymo", {0.2, 0.001}},
        {"alfred", {0.05, 0.005}},
        {"openx", {0.2, 0.01}},
    };
    return presets;
}

RewardWeights preset_weights(const std::string& name) {
    const auto& p = reward_presets();
    const auto it = p.find(name);
    if (it == p.end()) throw ConfigError({"unknown preset '" + name + "' (expected mmlu, waymo, alfred or openx)"});
    return it->second;
}

std::string config_hash(const nlohmann::json& j) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PpoAgentConfig ppo_config_from_json(const nlohmann::json& j) {
    PpoAgentConfig cfg;
    if (j.is_null()) return cfg;
    try {
        cfg.hidden = j.value("hidden", cfg.hidden);
        cfg.policy_init_gain = j.value("policy_init_gain", cfg.policy_init_gain);
        auto& p = cfg.ppo;
        p.adam.learning_rate = j.value("learning_rate", p.adam.learning_rate);
        p.clip_ratio = j.value("clip_ratio", p.clip_ratio);
        p.value_coef = j.value("value_coef", p.value_coef);
        p.entropy_coef = j.value("entropy_coef", p.entropy_coef);
        p.epochs = j.value("epochs", p.epochs);
        p.target_kl = j.value("target_kl", p.target_kl);
        p.kl_stop_factor = j.value("kl_stop_factor", p.kl_stop_factor);
        p.normalize_advantage = j.value("normalize_advantage", p.normalize_advantage);
        p.max_grad_norm = j.value("max_grad_norm", p.max_grad_norm);
        p.buffer_size = j.value("buffer_size", p.buffer_size);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({std::string("malformed ppo block: ") + e.what()});
    }
    return cfg;
}

void validate_experiment(const ExperimentConfig& cfg) {
    std::vector<std::string> issues;
    if (cfg.environment.has_value() == cfg.replay_path.has_value())
        issues.emplace_back("exactly one of an environment config and a replay log is required");
    if (cfg.steps < 1) issues.emplace_back("steps must be at least 1");
    if (cfg.preset && !reward_presets().contains(*cfg.preset)) issues.push_back("unknown preset '" + *cfg.preset + "'");
    if (cfg.preset && cfg.weights_override) issues.emplace_back("give either a preset or explicit weights, not both");
    if (cfg.weights_override && (cfg.weights_override->alpha_tau < 0.0 || cfg.weights_override->alpha_cost < 0.0))
        issues.emplace_back("reward weights must be non-negative");
    if (cfg.ppo.ppo.buffer_size < 1) issues.emplace_back("ppo buffer size must be at least 1");
    if (cfg.ppo.ppo.epochs < 1) issues.emplace_back("ppo epochs must be at least 1");
    if (!issues.empty()) throw ConfigError(std::move(issues));
}

namespace {

// Supplies steps from the generator or from a seeded shuffle of a replay log.
class StepSource {
public:
    StepSource(const ExperimentConfig& cfg, std::uint64_t seed) {
        if (cfg.environment) {
            EnvironmentConfig env_cfg = *cfg.environment;
            env_cfg.rng_seed = seed;
            env_.emplace(env_cfg);
            arms_ = env_->arm_count();
            dim_ = env_cfg.context_dim;
        } else {
            records_ = replay_stream(*cfg.replay_path);
            if (records_.empty()) throw ConfigError({"replay log " + *cfg.replay_path + " is empty"});
            // uniformly sampled without replacement
            Rng shuffle = make_rng(seed, Stream::shuffle);
            std::shuffle(records_.begin(), records_.end(), shuffle);
            arms_ = records_.front().arm_count();
            dim_ = records_.front().context.dim();
        }
    }

    std::uint64_t available(std::uint64_t wanted) const {
        return env_ ? wanted : std::min<std::uint64_t>(wanted, records_.size());
    }

    StepSample next(std::uint64_t t) {
        if (env_) return env_->sample_step();
        StepSample s = records_[next_++];
        s.t = t;
        return s;
    }

    std::size_t arm_count() const noexcept { return arms_; }
    std::size_t context_dim() const noexcept { return dim_; }

private:
    std::optional<Environment> env_;
    std::vector<StepSample> records_;
    std::size_t next_ = 0;
    std::size_t arms_ = 0;
    std::size_t dim_ = 0;
};

nlohmann::json describe(const ExperimentConfig& cfg, std::uint64_t seed, const RewardWeights& w, LatencyMode mode) {
    nlohmann::json j;
    if (cfg.environment) j["environment"] = *cfg.environment;
    if (cfg.replay_path) j["replay"] = *cfg.replay_path;
    j["policy"] = cfg.policy.to_string();
    j["steps"] = cfg.steps;
    j["seed"] = seed;
    j["reward_weights"] = w;
    j["latency_mode"] = to_string(mode);
    return j;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
    validate_experiment(cfg);
    const std::uint64_t seed = cfg.seed ? *cfg.seed : (cfg.environment ? cfg.environment->rng_seed : 0);

    RewardWeights weights = cfg.environment ? cfg.environment->reward_weights : RewardWeights{};
    if (cfg.preset) weights = preset_weights(*cfg.preset);
    if (cfg.weights_override) weights = *cfg.weights_override;
    LatencyMode mode = cfg.environment ? cfg.environment->latency_mode : LatencyMode::raw_seconds;
    if (cfg.latency_mode_override) mode = *cfg.latency_mode_override;

    StepSource source(cfg, seed);
    const std::size_t arms = source.arm_count();
    std::unique_ptr<Policy> policy;
    if (cfg.policy.kind != PolicyKind::oracle) policy = make_policy(cfg.policy, source.context_dim(), arms, cfg.ppo, seed);
    Rng policy_rng = make_rng(seed, Stream::policy);

    RunResult result;
    result.weights = weights;
    result.latency_mode = mode;
    result.trace = metrics::RunTrace({cfg.policy.to_string(), seed, config_hash(describe(cfg, seed, weights, mode)), arms});

    const std::uint64_t steps = source.available(cfg.steps);
    for (std::uint64_t t = 0; t < steps; ++t) {
        const StepSample step = source.next(t);
        Decision decision;
        if (policy) {
            decision = policy->decide(step.context, policy_rng);
        } else {
            decision.arm = oracle_decide(step, weights, mode);
        }
        const Observation obs = observe(step, decision.arm, weights, mode);
        if (policy) policy->learn(step.context, decision, obs.breakdown.total);

        metrics::DecisionRecord rec;
        rec.t = step.t;
        rec.cluster_id = step.cluster_id;
        rec.action = decision.arm;
        rec.breakdown = obs.breakdown;
        if (cfg.record_probs) rec.probs = decision.probs;
        result.trace.append(std::move(rec));
    }
    if (auto* ppo = dynamic_cast<PpoPolicy*>(policy.get())) result.ppo_updates = ppo->updates();

    result.summary = metrics::summarize(result.trace);
    result.tradeoff = metrics::tradeoff_point(result.trace, weights);

    if (!cfg.out_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path dir(cfg.out_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw std::runtime_error("cannot create output directory " + cfg.out_dir + ": " + ec.message());
        metrics::write_trace_csv((dir / "trace.csv").string(), result.trace);
        const auto curve = metrics::cumulative_mean(result.trace);
        metrics::write_curve_csv((dir / "curve.csv").string(), curve);
        const std::vector<metrics::Summary> rows{result.summary};
        metrics::write_summary_csv((dir / "summary.csv").string(), rows);
        const std::vector<std::pair<std::string, metrics::TradeoffPoint>> trade{{result.summary.policy, result.tradeoff}};
        metrics::write_tradeoff_csv((dir / "tradeoff.csv").string(), trade);
    }
    return result;
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg) {
    const std::vector<double> taus = cfg.alpha_taus.empty() ? std::vector<double>{0.0} : cfg.alpha_taus;
    const std::vector<double> costs = cfg.alpha_costs.empty() ? std::vector<double>{0.0} : cfg.alpha_costs;
    std::vector<std::uint64_t> seeds = cfg.seeds;
    if (seeds.empty()) seeds.push_back(cfg.base.seed ? *cfg.base.seed : (cfg.base.environment ? cfg.base.environment->rng_seed : 0));
    for (double a : taus)
        if (a < 0.0) throw ConfigError({"sweep alpha_tau values must be non-negative"});
    for (double a : costs)
        if (a < 0.0) throw ConfigError({"sweep alpha_cost values must be non-negative"});

    struct Cell {
        double tau, cost;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (double tau : taus)
        for (double cost : costs)
            for (auto seed : seeds) cells.push_back({tau, cost, seed});

    std::vector<SweepRow> rows(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                ExperimentConfig run = cfg.base;
                run.out_dir.clear();
                run.preset.reset();
                run.weights_override = RewardWeights{cells[i].tau, cells[i].cost};
                run.seed = cells[i].seed;
                rows[i] = {cells[i].tau, cells[i].cost, run_experiment(run).summary};
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    unsigned n = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<std::size_t>(n, cells.size()));
    std::vector<std::jthread> pool;
    for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    pool.clear();
    if (error) std::rethrow_exception(error);
    return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    if (path.empty()) throw std::runtime_error("CSV path is empty");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    std::size_t arms = 0;
    for (const auto& r : rows) arms = std::max(arms, r.summary.pulls.size());
    out << "alpha_tau,alpha_cost,policy,seed,mean_reward,success_rate,mean_latency_s,mean_cost";
    for (std::size_t a = 0; a < arms; ++a) out << ",arm_" << a;
    out << '\n';
    using metrics::format_double;
    for (const auto& r : rows) {
        const auto& s = r.summary;
        out << format_double(r.alpha_tau) << ',' << format_double(r.alpha_cost) << ',' << s.policy << ',' << s.seed << ','
            << format_double(s.mean_reward) << ',' << format_double(s.success_rate) << ','
            << format_double(s.mean_raw_latency) << ',' << format_double(s.mean_cost);
        for (std::size_t a = 0; a < arms; ++a) out << ',' << (a < s.pulls.size() ? s.pulls[a] : 0);
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace arbiter
