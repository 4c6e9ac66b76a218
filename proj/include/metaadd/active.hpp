#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaadd/metafeat.hpp"
#include "metaadd/protonet.hpp"

namespace metaadd::active {

using protonet::Probabilities;

/// Shannon entropy in nats, with 0 ln 0 = 0. Throws std::invalid_argument if
/// an entry is negative or the entries do not sum to 1 within 1e-9.
double entropy(const Probabilities& p);

enum class UpdateMode { prototype_mean, prototype_mean_plus_sgd };

std::string_view to_string(UpdateMode m) noexcept;
UpdateMode parse_update_mode(std::string_view name);

struct ActiveConfig {
    double entropy_threshold = std::numbers::ln2;  ///< 0.5 ln 4
    std::size_t budget = 20;
    UpdateMode update_mode = UpdateMode::prototype_mean;
    std::size_t sgd_steps = 5;
    double sgd_lr = 1e-3;
    /// Emissions after which an unanswered query expires.
    std::size_t expiry = 10;
    /// Classes whose prediction raises a drift alarm.
    std::array<bool, kNumDriftKinds> alarm_classes = {true, true, true, false};

    void validate() const;
    nlohmann::json to_json() const;
};

bool should_query(const Probabilities& p, const ActiveConfig& cfg, std::size_t spent_budget);

/// Folds a labeled sample into the detector. In prototype_mean mode only the
/// prototype of `label` moves (running mean in embedding space); the plus-SGD
/// mode first takes `sgd_steps` Adam steps on the sample's NLL.
void apply_label(protonet::MetaDetector& detector, std::span<const double> gaps, DriftKind label,
                 const ActiveConfig& cfg);

enum class QueryStatus { pending, answered, expired };

std::string_view to_string(QueryStatus s) noexcept;
std::optional<QueryStatus> parse_query_status(std::string_view name) noexcept;

struct LabelQuery {
    std::uint64_t id = 0;
    metafeat::MetaSample sample;
    std::vector<double> window_means;
    Probabilities probabilities{};
    double entropy = 0.0;
    std::size_t issued_at = 0;  ///< stream position
    std::size_t issued_emission = 0;
    QueryStatus status = QueryStatus::pending;
    std::optional<DriftKind> answer;
    bool applied = false;
};

nlohmann::json to_json(const LabelQuery& q);
LabelQuery label_query_from_json(const nlohmann::json& j);

/// Detection-loop state published for readers of the query queue.
struct MonitorStatus {
    std::size_t position = 0;
    std::size_t emissions = 0;
    std::size_t alarms = 0;
    std::size_t events = 0;
    std::size_t budget_spent = 0;
    std::size_t budget_total = 0;
    std::vector<double> window_means;
    std::optional<DriftKind> last_prediction;
    std::optional<Probabilities> last_probabilities;
};

nlohmann::json to_json(const MonitorStatus& s);

/// The one structure shared between the detection loop and label providers.
/// All members are safe to call concurrently.
class QueryQueue {
  public:
    enum class AnswerResult { ok, unknown_id, not_pending };

    /// Stores the query as pending and returns its id (1, 2, ...).
    std::uint64_t enqueue(LabelQuery q);
    AnswerResult answer(std::uint64_t id, DriftKind label);

    /// Queries in issue order, optionally filtered by status.
    std::vector<LabelQuery> list(std::optional<QueryStatus> filter = std::nullopt) const;
    std::optional<LabelQuery> get(std::uint64_t id) const;

    /// Answered queries not yet applied, in issue order; marks them applied.
    std::vector<LabelQuery> take_answered();
    /// Expires pending queries issued at or before `emission - expiry`.
    void expire(std::size_t emission, std::size_t expiry);

    void publish(MonitorStatus status);
    MonitorStatus status() const;

  private:
    mutable std::mutex mu_;
    std::vector<LabelQuery> queries_;
    MonitorStatus status_;
};

/// Source of labels for issued queries.
class Oracle {
  public:
    virtual ~Oracle() = default;
    /// Called once per issued query. May answer through the queue right away
    /// or leave the query to someone else.
    virtual void on_query(const LabelQuery& query, QueryQueue& queue) = 0;
};

/// Answers every query immediately with a caller-supplied ground truth.
class GroundTruthOracle final : public Oracle {
  public:
    using Truth = std::function<DriftKind(const LabelQuery&)>;
    explicit GroundTruthOracle(Truth truth) : truth_(std::move(truth)) {}
    void on_query(const LabelQuery& query, QueryQueue& queue) override;

  private:
    Truth truth_;
};

/// Leaves queries pending for an external labeler (the HTTP service).
class ExternalOracle final : public Oracle {
  public:
    void on_query(const LabelQuery&, QueryQueue&) override {}
};

struct Alarm {
    std::size_t timestamp = 0;
    DriftKind type = DriftKind::normal;
    double entropy = 0.0;
    bool event_start = false;
};

/// Streaming meta-detector with entropy-driven label queries. Alarms are
/// raised on non-normal predictions; an alarm within L + 1 emissions of the
/// previous one belongs to the same drift event, whatever its type.
class ActiveDriftMonitor {
  public:
    struct Step {
        bool emitted = false;
        std::optional<Alarm> alarm;
        /// True when this step starts a new drift event.
        bool event_start = false;
    };

    /// `oracle` may be null (no labels arrive unless someone answers through
    /// the queue). A null queue gets a private one.
    ActiveDriftMonitor(protonet::MetaDetector detector, ActiveConfig cfg, std::shared_ptr<QueryQueue> queue = nullptr,
                       Oracle* oracle = nullptr);

    Step push(int error);

    const protonet::MetaDetector& detector() const noexcept { return detector_; }
    const std::vector<Alarm>& alarms() const noexcept { return alarms_; }
    std::vector<std::size_t> event_starts() const;
    std::size_t budget_spent() const noexcept { return spent_; }
    std::size_t emissions() const noexcept { return emissions_; }
    std::size_t labels_applied() const noexcept { return labels_applied_; }
    const std::vector<std::string>& oracle_errors() const noexcept { return oracle_errors_; }
    QueryQueue& queue() noexcept { return *queue_; }
    const ActiveConfig& config() const noexcept { return cfg_; }

  private:
    void apply_answers();
    void publish(const Probabilities* p, std::optional<DriftKind> prediction);

    protonet::MetaDetector detector_;
    ActiveConfig cfg_;
    std::shared_ptr<QueryQueue> queue_;
    Oracle* oracle_;
    metafeat::StreamingView view_;
    std::vector<Alarm> alarms_;
    std::vector<std::string> oracle_errors_;
    std::size_t spent_ = 0;
    std::size_t emissions_ = 0;
    std::size_t labels_applied_ = 0;
    std::size_t events_ = 0;
    std::optional<std::size_t> last_alarm_emission_;
};

struct ActiveRunResult {
    std::vector<Alarm> alarms;
    std::vector<LabelQuery> queries;
    protonet::MetaDetector detector;
    std::size_t emissions = 0;
    std::size_t labels_applied = 0;
};

/// Runs the monitor over a complete error trace.
ActiveRunResult run_active_detection(std::span<const int> trace, const protonet::MetaDetector& detector,
                                     const ActiveConfig& cfg, Oracle* oracle = nullptr);

/// Alarm log CSV: `timestamp,type,entropy`.
void write_alarm_log(std::ostream& out, std::span<const Alarm> alarms);
/// Query log: one JSON document per line.
void write_query_log(std::ostream& out, std::span<const LabelQuery> queries);

}  // namespace metaadd::active
