#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "arbiter/domain.hpp"
#include "arbiter/metrics.hpp"
#include "arbiter/policies.hpp"
#include "arbiter/rng.hpp"

namespace httplib {
class Server;
}

namespace arbiter::service {

/// Maps onto an HTTP status code at the transport layer.
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

struct ServiceConfig {
    std::size_t context_dim = 0;
    std::vector<std::string> arm_names;  // arm 0 is the local model
    PolicySpec policy{PolicyKind::ppo, 0};
    PpoAgentConfig ppo;
    RewardWeights weights;
    LatencyMode latency_mode = LatencyMode::raw_seconds;
    double ttl_seconds = 300.0;
    std::size_t max_pending = 100000;
    std::uint64_t seed = 0;
};

struct PendingDecision {
    std::string decision_id;
    Context context;
    Decision decision;
    double issued_at = 0.0;
    double ttl_seconds = 0.0;
};

struct DecideResult {
    std::string decision_id;
    ArmIndex arm;
    std::vector<double> probs;
};

struct FeedbackResult {
    RewardBreakdown breakdown;
};

/// Seconds on some monotonic timeline.
using Clock = std::function<double()>;
Clock steady_clock_seconds();

/// Decide/feedback state machine behind the HTTP endpoints.
///
/// decide() reads an immutable policy snapshot and may run concurrently. Everything that
/// mutates (pending table, learning, arm registration, checkpoints) goes through one writer
/// mutex, so each decision id is learned from at most once.
class Router {
public:
    explicit Router(ServiceConfig cfg, Clock clock = steady_clock_seconds());

    DecideResult decide(const std::vector<double>& context);
    FeedbackResult feedback(const std::string& decision_id, double performance, double latency_seconds, double cost);
    std::size_t register_arm(const std::string& name);

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    nlohmann::json metrics_json() const;
    nlohmann::json arms_json() const;

    std::uint64_t learn_calls() const;
    std::uint64_t policy_version() const;
    std::size_t pending() const;
    std::size_t arm_count() const;
    const ServiceConfig& config() const noexcept { return cfg_; }

private:
    std::shared_ptr<const Policy> snapshot() const;
    void publish_locked();
    void purge_expired_locked(double now);

    ServiceConfig cfg_;
    Clock clock_;

    mutable std::mutex writer_;
    std::unique_ptr<Policy> policy_;
    std::vector<std::string> arm_names_;
    std::unordered_map<std::string, PendingDecision> pending_;
    std::unordered_set<std::string> completed_;
    std::deque<std::string> completed_order_;
    metrics::RunTrace trace_;
    std::uint64_t learn_calls_ = 0;
    std::uint64_t version_ = 0;

    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const Policy> snapshot_;

    mutable std::mutex rng_mutex_;
    Rng rng_;
    std::uint64_t issued_ = 0;
};

/// cpp-httplib transport for a Router. JSON in, JSON out; errors are {"error": message}.
class HttpServer {
public:
    explicit HttpServer(Router& router);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    int start(const std::string& host, int port);
    /// Binds and serves on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

private:
    Router& router_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace arbiter::service
