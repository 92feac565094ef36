// arbiter: experiment driver and routing daemon for online model selection.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "arbiter/analysis.hpp"
#include "arbiter/experiment.hpp"
#include "arbiter/nn.hpp"
#include "arbiter/service.hpp"

namespace {

using namespace arbiter;

struct RunFlags {
    std::string config;
    std::string preset;
    std::string policy = "egreedy";
    std::uint64_t steps = 1000;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string latency_mode;
    std::optional<double> alpha_tau;
    std::optional<double> alpha_cost;
    std::string hidden;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool config_required) {
    cmd->add_option("--config", f.config, "JSON config file")->required(config_required);
    cmd->add_option("--preset", f.preset, "reward weight preset: mmlu | waymo | alfred | openx");
    cmd->add_option("--policy", f.policy, "fixed:<i> | egreedy | ppo | oracle");
    cmd->add_option("--steps", f.steps, "number of steps")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "run seed (defaults to the config's rng_seed)");
    cmd->add_option("--out", f.out, "output directory for CSVs");
    cmd->add_option("--latency-mode", f.latency_mode, "raw | log10");
    cmd->add_option("--alpha-tau", f.alpha_tau, "latency weight (overrides config)");
    cmd->add_option("--alpha-cost", f.alpha_cost, "cost weight (overrides config)");
    cmd->add_option("--hidden", f.hidden, "comma-separated PPO hidden widths, e.g. 512,128,64,16");
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open " + path});
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({path + ": " + e.what()});
    }
}

template <class T>
std::vector<T> parse_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw ConfigError({"cannot parse list item '" + item + "'"});
        out.push_back(v);
    }
    return out;
}

ExperimentConfig build_experiment(const RunFlags& f, const nlohmann::json* config_json) {
    ExperimentConfig cfg;
    cfg.policy = parse_policy_spec(f.policy);
    cfg.steps = f.steps;
    cfg.seed = f.seed;
    cfg.out_dir = f.out;
    if (!f.preset.empty()) cfg.preset = f.preset;
    if (!f.latency_mode.empty()) cfg.latency_mode_override = parse_latency_mode(f.latency_mode);
    if (config_json && config_json->contains("ppo")) cfg.ppo = ppo_config_from_json(config_json->at("ppo"));
    if (!f.hidden.empty()) cfg.ppo.hidden = parse_list<std::size_t>(f.hidden);
    if (f.alpha_tau || f.alpha_cost) {
        RewardWeights w;
        if (cfg.preset) w = preset_weights(*cfg.preset);
        else if (config_json && config_json->contains("reward_weights")) w = config_json->at("reward_weights").get<RewardWeights>();
        if (f.alpha_tau) w.alpha_tau = *f.alpha_tau;
        if (f.alpha_cost) w.alpha_cost = *f.alpha_cost;
        cfg.preset.reset();
        cfg.weights_override = w;
    }
    return cfg;
}

void print_summary(const RunResult& r) {
    const auto& s = r.summary;
    std::cout << std::setprecision(6) << "policy        " << s.policy << "\n"
              << "seed          " << s.seed << "\n"
              << "steps         " << s.steps << "\n"
              << "mean_reward   " << s.mean_reward << "\n"
              << (s.binary_performance ? "success_rate  " : "mean_score    ") << s.success_rate << "\n"
              << "mean_latency  " << s.mean_raw_latency << " s\n"
              << "mean_cost     " << s.mean_cost << "\n"
              << "pulls        ";
    for (auto p : s.pulls) std::cout << ' ' << p;
    std::cout << "\n";
}

int cmd_simulate(const RunFlags& f) {
    const auto j = read_json(f.config);
    ExperimentConfig cfg = build_experiment(f, &j);
    cfg.environment = environment_config_from_json(j);
    print_summary(run_experiment(cfg));
    return 0;
}

int cmd_replay(const RunFlags& f, const std::string& log) {
    nlohmann::json j;
    if (!f.config.empty()) j = read_json(f.config);
    ExperimentConfig cfg = build_experiment(f, f.config.empty() ? nullptr : &j);
    cfg.replay_path = log;
    if (!cfg.preset && !cfg.weights_override && j.contains("reward_weights"))
        cfg.weights_override = j.at("reward_weights").get<RewardWeights>();
    if (!cfg.latency_mode_override && j.contains("latency_mode"))
        cfg.latency_mode_override = parse_latency_mode(j.at("latency_mode").get<std::string>());
    print_summary(run_experiment(cfg));
    return 0;
}

int cmd_analyze(const std::string& config, const std::string& csv, const std::string& preset) {
    auto input = analysis::analysis_input_from_json(read_json(config));
    if (!preset.empty()) input.weights = preset_weights(preset);
    const auto report = analysis::analyze(input.clusters, input.weights);
    std::cout << std::setprecision(6);
    std::cout << "cluster  weight  literal(action,value)  first-principles(local,remote,action)\n";
    for (std::size_t i = 0; i < report.clusters.size(); ++i) {
        const auto& c = report.clusters[i];
        std::cout << std::setw(7) << i << "  " << std::setw(6) << input.clusters[i].weight << "  (" << c.literal.action
                  << ", " << c.literal.value << ")  (" << c.first_principles_local << ", " << c.first_principles_remote
                  << ", " << c.first_principles_action << ")\n";
    }
    std::cout << "non-contextual literal   action " << report.noncontextual_literal.action << " value "
              << report.noncontextual_literal.value << "\n"
              << "non-contextual expected  action " << report.noncontextual_first_principles_action << " value "
              << report.noncontextual_first_principles << "\n"
              << "contextual literal       " << report.contextual_literal << "\n"
              << "contextual expected      " << report.contextual_first_principles << "\n"
              << "superiority gap          " << report.gap_literal << "\n"
              << "regime                   " << analysis::to_string(report.regime) << "\n";
    if (!report.disagreements.empty()) {
        std::cout << "literal and expected-reward actions disagree on clusters:";
        for (auto i : report.disagreements) std::cout << ' ' << i;
        std::cout << "\n";
    }
    if (!csv.empty()) {
        std::ofstream out(csv);
        if (!out) throw std::runtime_error("cannot open " + csv);
        out << "cluster,weight,literal_action,literal_value,expected_local,expected_remote,expected_action\n";
        for (std::size_t i = 0; i < report.clusters.size(); ++i) {
            const auto& c = report.clusters[i];
            using metrics::format_double;
            out << i << ',' << format_double(input.clusters[i].weight) << ',' << c.literal.action << ','
                << format_double(c.literal.value) << ',' << format_double(c.first_principles_local) << ','
                << format_double(c.first_principles_remote) << ',' << c.first_principles_action << '\n';
        }
    }
    return 0;
}

int cmd_sweep(const RunFlags& f, const std::string& taus, const std::string& costs, const std::string& seeds,
              unsigned threads) {
    const auto j = read_json(f.config);
    SweepConfig sweep;
    sweep.base = build_experiment(f, &j);
    sweep.base.out_dir.clear();
    sweep.base.environment = environment_config_from_json(j);
    sweep.alpha_taus = parse_list<double>(taus);
    sweep.alpha_costs = parse_list<double>(costs);
    sweep.seeds = parse_list<std::uint64_t>(seeds);
    sweep.threads = threads;
    if (sweep.alpha_taus.empty()) sweep.alpha_taus.push_back(sweep.base.environment->reward_weights.alpha_tau);
    if (sweep.alpha_costs.empty()) sweep.alpha_costs.push_back(sweep.base.environment->reward_weights.alpha_cost);
    const auto rows = run_sweep(sweep);
    const std::filesystem::path dir = f.out.empty() ? "." : f.out;
    std::filesystem::create_directories(dir);
    write_sweep_csv((dir / "sweep.csv").string(), rows);
    std::cout << rows.size() << " cells written to " << (dir / "sweep.csv").string() << "\n";
    return 0;
}

int cmd_gradcheck(int trials, std::uint64_t seed, double h) {
    Rng rng = make_rng(seed, Stream::init);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        nn::DenseNet net(8, {16, 8}, 3);
        nn::xavier_init(net, rng, 1.0);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<nn::Transition> batch;
        for (int i = 0; i < 5; ++i) {
            std::vector<double> ctx(8);
            for (double& x : ctx) x = normal(rng);
            Context c(ctx);
            const auto logits = net.forward(c).logits;
            const std::size_t a = static_cast<std::size_t>(i) % 3;
            batch.push_back({c, ArmIndex{a}, nn::log_softmax_at(logits, a) + 0.05 * normal(rng), normal(rng)});
        }
        nn::PpoObjective obj{nn::make_ppo_batch(net, batch, true), nn::PpoConfig{}};
        const double err = nn::grad_check(net, obj, h);
        worst = std::max(worst, err);
        std::cout << "trial " << std::setw(3) << trial << "  max relative error " << std::scientific << err
                  << std::defaultfloat << "\n";
    }
    const bool ok = worst < 1e-5;
    std::cout << (ok ? "PASS" : "FAIL") << "  worst " << std::scientific << worst << " (bound 1e-05)\n";
    return ok ? 0 : 1;
}

service::HttpServer* g_server = nullptr;

int cmd_serve(const std::string& config, const RunFlags& f, std::size_t context_dim, const std::string& arms) {
    service::ServiceConfig cfg;
    nlohmann::json j;
    if (!config.empty()) {
        j = read_json(config);
        cfg.context_dim = j.value("context_dim", std::size_t{0});
        if (j.contains("arms"))
            for (const auto& a : j["arms"]) cfg.arm_names.push_back(a.is_string() ? a.get<std::string>() : a.at("name").get<std::string>());
        if (j.contains("reward_weights")) cfg.weights = j["reward_weights"].get<RewardWeights>();
        if (j.contains("latency_mode")) cfg.latency_mode = parse_latency_mode(j["latency_mode"].get<std::string>());
        if (j.contains("ppo")) cfg.ppo = ppo_config_from_json(j["ppo"]);
        cfg.seed = j.value("rng_seed", std::uint64_t{0});
    }
    if (context_dim) cfg.context_dim = context_dim;
    if (!arms.empty()) {
        cfg.arm_names.clear();
        std::stringstream ss(arms);
        for (std::string name; std::getline(ss, name, ',');) cfg.arm_names.push_back(name);
    }
    cfg.policy = parse_policy_spec(f.policy);
    if (!f.preset.empty()) cfg.weights = preset_weights(f.preset);
    if (f.alpha_tau) cfg.weights.alpha_tau = *f.alpha_tau;
    if (f.alpha_cost) cfg.weights.alpha_cost = *f.alpha_cost;
    if (!f.latency_mode.empty()) cfg.latency_mode = parse_latency_mode(f.latency_mode);
    if (f.seed) cfg.seed = *f.seed;
    if (!f.hidden.empty()) cfg.ppo.hidden = parse_list<std::size_t>(f.hidden);
    if (const char* ttl = std::getenv("ARBITER_TTL_S")) cfg.ttl_seconds = std::stod(ttl);

    std::string addr = "127.0.0.1:8080";
    if (const char* env = std::getenv("ARBITER_ADDR")) addr = env;
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw ConfigError({"ARBITER_ADDR must look like host:port"});
    const std::string host = addr.substr(0, colon);
    const int port = std::stoi(addr.substr(colon + 1));

    service::Router router(cfg);
    service::HttpServer server(router);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    std::cerr << "arbiter serving " << cfg.policy.to_string() << " on " << host << ":" << port << " ("
              << cfg.arm_names.size() << " arms, context dim " << cfg.context_dim << ")\n";
    server.listen(host, port);
    g_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"arbiter: learn which model to call, per input, from bandit feedback"};
    app.require_subcommand(1);

    RunFlags sim_flags;
    auto* simulate = app.add_subcommand("simulate", "run a policy against the synthetic clustered environment");
    add_run_flags(simulate, sim_flags, true);

    RunFlags replay_flags;
    std::string log_path;
    auto* replay = app.add_subcommand("replay", "run a policy over a newline-delimited JSON log");
    add_run_flags(replay, replay_flags, false);
    replay->add_option("--log", log_path, "replay log (.jsonl)")->required()->check(CLI::ExistingFile);

    std::string analyze_config, analyze_csv, analyze_preset;
    auto* analyze = app.add_subcommand("analyze", "closed-form contextual vs non-contextual report");
    analyze->add_option("--config", analyze_config, "cluster statistics JSON")->required()->check(CLI::ExistingFile);
    analyze->add_option("--csv", analyze_csv, "optional per-cluster CSV output");
    analyze->add_option("--preset", analyze_preset, "override reward weights with a preset");

    RunFlags sweep_flags;
    std::string taus, costs, seeds;
    unsigned threads = 0;
    auto* sweep = app.add_subcommand("sweep", "grid over alpha_tau, alpha_cost and seeds");
    add_run_flags(sweep, sweep_flags, true);
    sweep->add_option("--alpha-taus", taus, "comma-separated alpha_tau grid");
    sweep->add_option("--alpha-costs", costs, "comma-separated alpha_cost grid");
    sweep->add_option("--seeds", seeds, "comma-separated seeds");
    sweep->add_option("--threads", threads, "worker threads (0 = all cores)");

    int trials = 20;
    std::uint64_t gc_seed = 7;
    double gc_h = 1e-5;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the PPO loss gradient");
    gradcheck->add_option("--trials", trials, "random networks to check");
    gradcheck->add_option("--seed", gc_seed, "seed");
    gradcheck->add_option("--step", gc_h, "central-difference step");

    RunFlags serve_flags;
    serve_flags.policy = "ppo";
    std::string serve_config, serve_arms;
    std::size_t serve_dim = 0;
    auto* serve = app.add_subcommand("serve", "run the HTTP routing service (ARBITER_ADDR, ARBITER_TTL_S)");
    serve->add_option("--config", serve_config, "service JSON: context_dim, arms, reward_weights, latency_mode, ppo");
    serve->add_option("--policy", serve_flags.policy, "egreedy | ppo | fixed:<i>");
    serve->add_option("--preset", serve_flags.preset, "reward weight preset");
    serve->add_option("--seed", serve_flags.seed, "seed");
    serve->add_option("--latency-mode", serve_flags.latency_mode, "raw | log10");
    serve->add_option("--alpha-tau", serve_flags.alpha_tau, "latency weight");
    serve->add_option("--alpha-cost", serve_flags.alpha_cost, "cost weight");
    serve->add_option("--hidden", serve_flags.hidden, "comma-separated PPO hidden widths");
    serve->add_option("--context-dim", serve_dim, "context dimension");
    serve->add_option("--arms", serve_arms, "comma-separated arm names, local model first");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) return cmd_simulate(sim_flags);
        if (*replay) return cmd_replay(replay_flags, log_path);
        if (*analyze) return cmd_analyze(analyze_config, analyze_csv, analyze_preset);
        if (*sweep) return cmd_sweep(sweep_flags, taus, costs, seeds, threads);
        if (*gradcheck) return cmd_gradcheck(trials, gc_seed, gc_h);
        if (*serve) return cmd_serve(serve_config, serve_flags, serve_dim, serve_arms);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
