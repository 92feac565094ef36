#include "arbiter/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "arbiter/binary_io.hpp"
#include "arbiter/env.hpp"

namespace arbiter::service {

namespace {

constexpr char kMagic[8] = {'A', 'R', 'B', 'S', 'V', 'C', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kCompletedMemory = 1 << 20;

std::string make_decision_id(std::uint64_t counter, std::uint64_t salt) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "d%016llx-%08llx", static_cast<unsigned long long>(counter),
                  static_cast<unsigned long long>(salt & 0xffffffffull));
    return buf;
}

}  // namespace

Clock steady_clock_seconds() {
    return [] {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    };
}

Router::Router(ServiceConfig cfg, Clock clock)
    : cfg_(std::move(cfg)), clock_(std::move(clock)), rng_(make_rng(cfg_.seed, Stream::service)) {
    std::vector<std::string> issues;
    if (cfg_.context_dim == 0) issues.emplace_back("context_dim must be positive");
    if (cfg_.arm_names.size() < 2) issues.emplace_back("at least two arms are required");
    if (cfg_.policy.kind == PolicyKind::oracle) issues.emplace_back("the oracle cannot serve live traffic");
    if (!(cfg_.ttl_seconds > 0.0)) issues.emplace_back("ttl must be positive");
    if (cfg_.max_pending == 0) issues.emplace_back("max_pending must be positive");
    if (cfg_.weights.alpha_tau < 0.0 || cfg_.weights.alpha_cost < 0.0) issues.emplace_back("reward weights must be non-negative");
    if (!issues.empty()) throw ConfigError(std::move(issues));

    policy_ = make_policy(cfg_.policy, cfg_.context_dim, cfg_.arm_names.size(), cfg_.ppo, cfg_.seed);
    arm_names_ = cfg_.arm_names;
    trace_ = metrics::RunTrace({cfg_.policy.to_string(), cfg_.seed, "", arm_names_.size()});
    publish_locked();
}

std::shared_ptr<const Policy> Router::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
}

void Router::publish_locked() {
    std::shared_ptr<const Policy> fresh = policy_->clone();
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(fresh);
    ++version_;
}

void Router::purge_expired_locked(double now) {
    for (auto it = pending_.begin(); it != pending_.end();) {
        if (now - it->second.issued_at > it->second.ttl_seconds) {
            it = pending_.erase(it);
        } else {
            ++it;
        }
    }
}

DecideResult Router::decide(const std::vector<double>& context) {
    if (context.size() != cfg_.context_dim)
        throw ServiceError(400, "context: expected length " + std::to_string(cfg_.context_dim) + ", got " +
                                    std::to_string(context.size()));
    Context ctx;
    try {
        ctx = Context(context);
    } catch (const InvalidInput& e) {
        throw ServiceError(400, std::string("context: ") + e.what());
    }

    const auto policy = snapshot();
    std::uint64_t stream_seed = 0;
    std::string id;
    {
        std::lock_guard lock(rng_mutex_);
        stream_seed = rng_();
        id = make_decision_id(issued_++, rng_());
    }
    Rng rng(stream_seed);
    Decision decision = policy->decide(ctx, rng);
    std::vector<double> probs = decision.probs.value_or(std::vector<double>{});

    std::lock_guard lock(writer_);
    const double now = clock_();
    if (pending_.size() >= cfg_.max_pending) purge_expired_locked(now);
    if (pending_.size() >= cfg_.max_pending) throw ServiceError(503, "pending decision table is full");
    pending_.emplace(id, PendingDecision{id, std::move(ctx), decision, now, cfg_.ttl_seconds});
    return {id, decision.arm, std::move(probs)};
}

FeedbackResult Router::feedback(const std::string& decision_id, double performance, double latency_seconds,
                                double cost) {
    if (!std::isfinite(performance)) throw ServiceError(400, "performance: must be finite");
    if (!std::isfinite(cost) || cost < 0.0) throw ServiceError(400, "cost: must be finite and non-negative");
    double penalized = 0.0;
    try {
        penalized = latency_penalty(latency_seconds, cfg_.latency_mode);
    } catch (const InvalidInput& e) {
        throw ServiceError(400, std::string("latency_seconds: ") + e.what());
    }

    std::lock_guard lock(writer_);
    const auto it = pending_.find(decision_id);
    if (it == pending_.end()) {
        if (completed_.contains(decision_id)) throw ServiceError(409, "feedback already received for " + decision_id);
        throw ServiceError(404, "unknown or expired decision_id " + decision_id);
    }
    const double now = clock_();
    if (now - it->second.issued_at > it->second.ttl_seconds) {
        pending_.erase(it);
        throw ServiceError(404, "decision " + decision_id + " expired");
    }

    PendingDecision entry = std::move(it->second);
    pending_.erase(it);

    RewardBreakdown b;
    b.performance = performance;
    b.raw_latency_seconds = latency_seconds;
    b.penalized_latency = penalized;
    b.cost = cost;
    b.total = reward_total(performance, penalized, cost, cfg_.weights);

    const auto diag = policy_->learn(entry.context, entry.decision, b.total);
    ++learn_calls_;
    completed_.insert(decision_id);
    completed_order_.push_back(decision_id);
    if (completed_order_.size() > kCompletedMemory) {
        completed_.erase(completed_order_.front());
        completed_order_.pop_front();
    }

    metrics::DecisionRecord rec;
    rec.t = learn_calls_;
    rec.action = entry.decision.arm;
    rec.breakdown = b;
    trace_.append(std::move(rec));

    if (diag || cfg_.policy.kind != PolicyKind::ppo) publish_locked();
    return {b};
}

std::size_t Router::register_arm(const std::string& name) {
    if (name.empty()) throw ServiceError(400, "name: must be non-empty");
    std::lock_guard lock(writer_);
    policy_->add_arm();
    arm_names_.push_back(name);
    trace_.note_arm_added();
    publish_locked();
    return arm_names_.size() - 1;
}

void Router::save_checkpoint(const std::string& path) const {
    std::lock_guard lock(writer_);
    std::ostringstream rng_state;
    std::uint64_t issued = 0;
    {
        std::lock_guard rng_lock(rng_mutex_);
        rng_state << rng_;
        issued = issued_;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ServiceError(400, "cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    io::put<std::uint32_t>(out, kFormatVersion);
    io::put<std::uint64_t>(out, cfg_.context_dim);
    io::put_string(out, cfg_.policy.to_string());
    io::put<std::uint64_t>(out, arm_names_.size());
    for (const auto& n : arm_names_) io::put_string(out, n);
    io::put<std::uint64_t>(out, learn_calls_);
    io::put<std::uint64_t>(out, version_);
    io::put<std::uint64_t>(out, issued);
    io::put_string(out, rng_state.str());
    policy_->save(out);
    out.flush();
    if (!out) throw ServiceError(500, "failed writing checkpoint " + path);
}

void Router::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ServiceError(404, "checkpoint " + path + " not found");

    std::unique_ptr<Policy> policy;
    std::vector<std::string> names;
    std::uint64_t learn_calls = 0, version = 0, issued = 0;
    Rng rng;
    try {
        char magic[sizeof(kMagic)];
        in.read(magic, sizeof(magic));
        if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
            throw io::FormatError("not a router checkpoint");
        if (io::get<std::uint32_t>(in) != kFormatVersion) throw io::FormatError("unsupported checkpoint version");
        const auto dim = io::get<std::uint64_t>(in);
        if (dim != cfg_.context_dim)
            throw io::FormatError("checkpoint context dimension " + std::to_string(dim) + " does not match configured " +
                                  std::to_string(cfg_.context_dim));
        const auto spec = io::get_string(in);
        if (spec != cfg_.policy.to_string())
            throw io::FormatError("checkpoint policy '" + spec + "' does not match configured '" + cfg_.policy.to_string() + "'");
        const auto arms = io::get<std::uint64_t>(in);
        if (arms < cfg_.arm_names.size() || arms > (1u << 16))
            throw io::FormatError("checkpoint has " + std::to_string(arms) + " arms; at least " +
                                  std::to_string(cfg_.arm_names.size()) + " required");
        for (std::uint64_t i = 0; i < arms; ++i) names.push_back(io::get_string(in));
        learn_calls = io::get<std::uint64_t>(in);
        version = io::get<std::uint64_t>(in);
        issued = io::get<std::uint64_t>(in);
        std::istringstream rng_state(io::get_string(in));
        rng_state >> rng;
        if (!rng_state) throw io::FormatError("corrupt generator state");
        policy = make_policy(cfg_.policy, cfg_.context_dim, arms, cfg_.ppo, cfg_.seed);
        policy->load(in);
        if (policy->arm_count() != arms) throw io::FormatError("policy arm count does not match arm registry");
    } catch (const io::FormatError& e) {
        throw ServiceError(409, e.what());
    } catch (const nn::NumericalError& e) {
        throw ServiceError(409, e.what());
    } catch (const InvalidInput& e) {
        throw ServiceError(409, e.what());
    }

    std::lock_guard lock(writer_);
    policy_ = std::move(policy);
    arm_names_ = std::move(names);
    learn_calls_ = learn_calls;
    pending_.clear();
    completed_.clear();
    completed_order_.clear();
    trace_ = metrics::RunTrace({cfg_.policy.to_string(), cfg_.seed, "", arm_names_.size()});
    {
        std::lock_guard rng_lock(rng_mutex_);
        rng_ = rng;
        issued_ = issued;
    }
    std::shared_ptr<const Policy> fresh = policy_->clone();
    std::lock_guard snap_lock(snapshot_mutex_);
    snapshot_ = std::move(fresh);
    // versions only move forward, even across a restore
    version_ = std::max(version_, version) + 1;
}

nlohmann::json Router::metrics_json() const {
    std::lock_guard lock(writer_);
    nlohmann::json j;
    j["learn_calls"] = learn_calls_;
    j["pending"] = pending_.size();
    j["policy_version"] = version_;
    j["policy"] = cfg_.policy.to_string();
    {
        std::lock_guard rng_lock(rng_mutex_);
        j["decisions_issued"] = issued_;
    }
    if (!trace_.empty()) {
        const auto s = metrics::summarize(trace_);
        j["mean_reward"] = s.mean_reward;
        j["success_rate"] = s.success_rate;
        j["mean_latency_s"] = s.mean_raw_latency;
        j["mean_cost"] = s.mean_cost;
        j["pulls"] = s.pulls;
    }
    return j;
}

nlohmann::json Router::arms_json() const {
    std::lock_guard lock(writer_);
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < arm_names_.size(); ++i)
        arr.push_back({{"index", i}, {"name", arm_names_[i]}, {"local", i == 0}});
    return {{"arms", arr}};
}

std::uint64_t Router::learn_calls() const {
    std::lock_guard lock(writer_);
    return learn_calls_;
}

std::uint64_t Router::policy_version() const {
    std::lock_guard lock(writer_);
    return version_;
}

std::size_t Router::pending() const {
    std::lock_guard lock(writer_);
    return pending_.size();
}

std::size_t Router::arm_count() const {
    std::lock_guard lock(writer_);
    return arm_names_.size();
}

namespace {

nlohmann::json parse_body(const httplib::Request& req) {
    try {
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ServiceError(400, std::string("malformed JSON: ") + e.what());
    }
}

double number_field(const nlohmann::json& j, const char* name) {
    if (!j.contains(name)) throw ServiceError(400, std::string(name) + ": missing");
    if (!j[name].is_number()) throw ServiceError(400, std::string(name) + ": must be a number");
    return j[name].get<double>();
}

std::string string_field(const nlohmann::json& j, const char* name) {
    if (!j.contains(name)) throw ServiceError(400, std::string(name) + ": missing");
    if (!j[name].is_string()) throw ServiceError(400, std::string(name) + ": must be a string");
    return j[name].get<std::string>();
}

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <class Handler>
httplib::Server::Handler guarded(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
        try {
            reply(res, 200, handler(req));
        } catch (const ServiceError& e) {
            reply(res, e.status(), {{"error", e.what()}});
        } catch (const std::exception& e) {
            reply(res, 500, {{"error", e.what()}});
        }
    };
}

}  // namespace

HttpServer::HttpServer(Router& router) : router_(router), server_(std::make_unique<httplib::Server>()) {
    auto& s = *server_;
    s.Post("/v1/decide", guarded([this](const httplib::Request& req) {
        const auto body = parse_body(req);
        if (!body.contains("context") || !body["context"].is_array()) throw ServiceError(400, "context: missing array");
        std::vector<double> ctx;
        for (const auto& v : body["context"]) {
            if (!v.is_number()) throw ServiceError(400, "context: entries must be numbers");
            ctx.push_back(v.get<double>());
        }
        const auto r = router_.decide(ctx);
        return nlohmann::json{{"decision_id", r.decision_id}, {"arm", r.arm.value}, {"probs", r.probs}};
    }));
    s.Post("/v1/feedback", guarded([this](const httplib::Request& req) {
        const auto body = parse_body(req);
        const auto r = router_.feedback(string_field(body, "decision_id"), number_field(body, "performance"),
                                        number_field(body, "latency_seconds"), number_field(body, "cost"));
        return nlohmann::json{{"reward_total", r.breakdown.total}};
    }));
    s.Post("/v1/arms", guarded([this](const httplib::Request& req) {
        const auto body = parse_body(req);
        return nlohmann::json{{"arm_index", router_.register_arm(string_field(body, "name"))}};
    }));
    s.Get("/v1/arms", guarded([this](const httplib::Request&) { return router_.arms_json(); }));
    s.Get("/v1/metrics", guarded([this](const httplib::Request&) { return router_.metrics_json(); }));
    s.Post("/v1/checkpoint/save", guarded([this](const httplib::Request& req) {
        const auto path = string_field(parse_body(req), "path");
        router_.save_checkpoint(path);
        return nlohmann::json{{"saved", path}};
    }));
    s.Post("/v1/checkpoint/load", guarded([this](const httplib::Request& req) {
        const auto path = string_field(parse_body(req), "path");
        router_.load_checkpoint(path);
        return nlohmann::json{{"loaded", path}, {"learn_calls", router_.learn_calls()}};
    }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void HttpServer::listen(const std::string& host, int port) {
    if (!server_->listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace arbiter::service
