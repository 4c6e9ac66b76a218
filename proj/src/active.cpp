#include "metaadd/active.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace metaadd::active {

using nlohmann::json;

double entropy(const Probabilities& p) {
    double sum = 0.0;
    double h = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument("probabilities must be nonnegative");
        sum += v;
        if (v > 0.0) h -= v * std::log(v);
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw std::invalid_argument("probabilities must sum to 1");
    return std::max(0.0, h);
}

std::string_view to_string(UpdateMode m) noexcept {
    return m == UpdateMode::prototype_mean ? "prototype_mean" : "prototype_mean_plus_sgd";
}

UpdateMode parse_update_mode(std::string_view name) {
    if (name == "prototype_mean" || name == "mean") return UpdateMode::prototype_mean;
    if (name == "prototype_mean_plus_sgd" || name == "sgd") return UpdateMode::prototype_mean_plus_sgd;
    throw std::invalid_argument("unknown update mode '" + std::string(name) + "'");
}

void ActiveConfig::validate() const {
    if (!(entropy_threshold >= 0.0 && entropy_threshold <= std::log(static_cast<double>(kNumDriftKinds)) + 1e-12)) {
        throw std::invalid_argument("entropy threshold must lie in [0, ln 4]");
    }
    if (!(sgd_lr > 0.0)) throw std::invalid_argument("sgd_lr must be positive");
    if (expiry == 0) throw std::invalid_argument("query expiry must be at least one emission");
}

json ActiveConfig::to_json() const {
    std::vector<std::string> alarm;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        if (alarm_classes[k]) alarm.emplace_back(metaadd::to_string(drift_kind_from_index(k)));
    }
    return {{"entropy_threshold", entropy_threshold},
            {"budget", budget},
            {"update_mode", to_string(update_mode)},
            {"sgd_steps", sgd_steps},
            {"sgd_lr", sgd_lr},
            {"expiry", expiry},
            {"alarm_classes", alarm}};
}

bool should_query(const Probabilities& p, const ActiveConfig& cfg, std::size_t spent_budget) {
    return spent_budget < cfg.budget && entropy(p) >= cfg.entropy_threshold;
}

void apply_label(protonet::MetaDetector& detector, std::span<const double> gaps, DriftKind label,
                 const ActiveConfig& cfg) {
    const std::size_t k = index_of(label);
    if (k >= kNumDriftKinds) throw std::invalid_argument("invalid drift class");
    if (cfg.update_mode == UpdateMode::prototype_mean_plus_sgd && cfg.sgd_steps > 0) {
        protonet::Adam adam(detector.net.parameter_count(), {.lr = cfg.sgd_lr});
        for (std::size_t s = 0; s < cfg.sgd_steps; ++s) {
            const auto lg = protonet::sample_loss_and_grad(detector.net, detector.prototypes, gaps, label);
            adam.step(detector.net.params(), lg.grad);
        }
    }
    const auto z = detector.net.embed(gaps);
    auto& c = detector.prototypes.centers[k];
    auto& m = detector.prototypes.counts[k];
    const double w = static_cast<double>(m);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = (w * c[i] + z[i]) / (w + 1.0);
    ++m;
}

// ---------------------------------------------------------------- queries

std::string_view to_string(QueryStatus s) noexcept {
    switch (s) {
        case QueryStatus::pending: return "pending";
        case QueryStatus::answered: return "answered";
        case QueryStatus::expired: return "expired";
    }
    return "pending";
}

std::optional<QueryStatus> parse_query_status(std::string_view name) noexcept {
    if (name == "pending") return QueryStatus::pending;
    if (name == "answered") return QueryStatus::answered;
    if (name == "expired") return QueryStatus::expired;
    return std::nullopt;
}

namespace {

json probabilities_json(const Probabilities& p) {
    json out = json::object();
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) out[std::string(metaadd::to_string(drift_kind_from_index(k)))] = p[k];
    return out;
}

Probabilities probabilities_from_json(const json& j) {
    Probabilities p{};
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        p[k] = j.at(std::string(metaadd::to_string(drift_kind_from_index(k)))).get<double>();
    }
    return p;
}

}  // namespace

json to_json(const LabelQuery& q) {
    json j = {{"id", q.id},
              {"gaps", q.sample.gaps},
              {"window_means", q.window_means},
              {"probabilities", probabilities_json(q.probabilities)},
              {"entropy", q.entropy},
              {"issued_at", q.issued_at},
              {"issued_emission", q.issued_emission},
              {"status", to_string(q.status)},
              {"label", nullptr},
              {"applied", q.applied}};
    if (q.answer) j["label"] = metaadd::to_string(*q.answer);
    return j;
}

LabelQuery label_query_from_json(const json& j) {
    LabelQuery q;
    q.id = j.at("id").get<std::uint64_t>();
    q.sample.gaps = j.at("gaps").get<std::vector<double>>();
    q.window_means = j.at("window_means").get<std::vector<double>>();
    q.probabilities = probabilities_from_json(j.at("probabilities"));
    q.entropy = j.at("entropy").get<double>();
    q.issued_at = j.at("issued_at").get<std::size_t>();
    q.issued_emission = j.value("issued_emission", std::size_t{0});
    const auto status = parse_query_status(j.at("status").get<std::string>());
    if (!status) throw std::invalid_argument("unknown query status");
    q.status = *status;
    if (!j.at("label").is_null()) q.answer = parse_drift_kind(j.at("label").get<std::string>());
    q.applied = j.value("applied", false);
    return q;
}

json to_json(const MonitorStatus& s) {
    json j = {{"position", s.position},
              {"emissions", s.emissions},
              {"alarms", s.alarms},
              {"events", s.events},
              {"budget", {{"spent", s.budget_spent},
                          {"total", s.budget_total},
                          {"remaining", s.budget_total - std::min(s.budget_spent, s.budget_total)}}},
              {"window_means", s.window_means},
              {"last_prediction", nullptr},
              {"last_probabilities", nullptr}};
    if (s.last_prediction) j["last_prediction"] = metaadd::to_string(*s.last_prediction);
    if (s.last_probabilities) j["last_probabilities"] = probabilities_json(*s.last_probabilities);
    return j;
}

std::uint64_t QueryQueue::enqueue(LabelQuery q) {
    std::lock_guard lock(mu_);
    q.id = queries_.size() + 1;
    q.status = QueryStatus::pending;
    q.answer.reset();
    q.applied = false;
    queries_.push_back(std::move(q));
    return queries_.back().id;
}

QueryQueue::AnswerResult QueryQueue::answer(std::uint64_t id, DriftKind label) {
    std::lock_guard lock(mu_);
    if (id == 0 || id > queries_.size()) return AnswerResult::unknown_id;
    auto& q = queries_[id - 1];
    if (q.status != QueryStatus::pending) return AnswerResult::not_pending;
    q.status = QueryStatus::answered;
    q.answer = label;
    return AnswerResult::ok;
}

std::vector<LabelQuery> QueryQueue::list(std::optional<QueryStatus> filter) const {
    std::lock_guard lock(mu_);
    std::vector<LabelQuery> out;
    for (const auto& q : queries_) {
        if (!filter || q.status == *filter) out.push_back(q);
    }
    return out;
}

std::optional<LabelQuery> QueryQueue::get(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    if (id == 0 || id > queries_.size()) return std::nullopt;
    return queries_[id - 1];
}

std::vector<LabelQuery> QueryQueue::take_answered() {
    std::lock_guard lock(mu_);
    std::vector<LabelQuery> out;
    for (auto& q : queries_) {
        if (q.status == QueryStatus::answered && !q.applied) {
            q.applied = true;
            out.push_back(q);
        }
    }
    return out;
}

void QueryQueue::expire(std::size_t emission, std::size_t expiry) {
    std::lock_guard lock(mu_);
    for (auto& q : queries_) {
        if (q.status == QueryStatus::pending && q.issued_emission + expiry <= emission) q.status = QueryStatus::expired;
    }
}

void QueryQueue::publish(MonitorStatus status) {
    std::lock_guard lock(mu_);
    status_ = std::move(status);
}

MonitorStatus QueryQueue::status() const {
    std::lock_guard lock(mu_);
    return status_;
}

void GroundTruthOracle::on_query(const LabelQuery& query, QueryQueue& queue) {
    queue.answer(query.id, truth_(query));
}

// ---------------------------------------------------------------- monitor

ActiveDriftMonitor::ActiveDriftMonitor(protonet::MetaDetector detector, ActiveConfig cfg,
                                       std::shared_ptr<QueryQueue> queue, Oracle* oracle)
    : detector_(std::move(detector)),
      cfg_(cfg),
      queue_(queue ? std::move(queue) : std::make_shared<QueryQueue>()),
      oracle_(oracle),
      view_(detector_.spec) {
    cfg_.validate();
    publish(nullptr, std::nullopt);
}

void ActiveDriftMonitor::apply_answers() {
    for (const auto& q : queue_->take_answered()) {
        apply_label(detector_, q.sample.gaps, *q.answer, cfg_);
        ++labels_applied_;
    }
}

void ActiveDriftMonitor::publish(const Probabilities* p, std::optional<DriftKind> prediction) {
    MonitorStatus s;
    s.position = view_.position();
    s.emissions = emissions_;
    s.alarms = alarms_.size();
    s.events = events_;
    s.budget_spent = spent_;
    s.budget_total = cfg_.budget;
    s.window_means = view_.recent_means();
    s.last_prediction = prediction;
    if (p) s.last_probabilities = *p;
    queue_->publish(std::move(s));
}

ActiveDriftMonitor::Step ActiveDriftMonitor::push(int error) {
    Step step;
    auto sample = view_.push(error);
    if (!sample) {
        if (view_.position() % detector_.spec.n == 0) {
            auto s = queue_->status();
            s.position = view_.position();
            s.window_means = view_.recent_means();
            queue_->publish(std::move(s));
        }
        return step;
    }
    step.emitted = true;
    ++emissions_;
    queue_->expire(emissions_, cfg_.expiry);
    apply_answers();

    const auto p = detector_.classify(sample->gaps);
    const double h = entropy(p);
    const DriftKind predicted = protonet::argmax(p);

    if (cfg_.alarm_classes[index_of(predicted)]) {
        const bool same_event =
            last_alarm_emission_ && emissions_ - *last_alarm_emission_ <= detector_.spec.L + 1;
        Alarm alarm{view_.position(), predicted, h, !same_event};
        if (!same_event) ++events_;
        last_alarm_emission_ = emissions_;
        alarms_.push_back(alarm);
        step.alarm = alarm;
        step.event_start = alarm.event_start;
    }

    if (should_query(p, cfg_, spent_)) {
        LabelQuery q;
        q.sample = std::move(*sample);
        q.window_means = view_.recent_means();
        q.probabilities = p;
        q.entropy = h;
        q.issued_at = view_.position();
        q.issued_emission = emissions_;
        q.id = queue_->enqueue(std::move(q));
        ++spent_;
        if (oracle_) {
            try {
                oracle_->on_query(*queue_->get(q.id), *queue_);
            } catch (const std::exception& e) {
                oracle_errors_.push_back("query " + std::to_string(q.id) + ": " + e.what());
            }
        }
    }
    publish(&p, predicted);
    return step;
}

std::vector<std::size_t> ActiveDriftMonitor::event_starts() const {
    std::vector<std::size_t> out;
    for (const auto& a : alarms_) {
        if (a.event_start) out.push_back(a.timestamp);
    }
    return out;
}

ActiveRunResult run_active_detection(std::span<const int> trace, const protonet::MetaDetector& detector,
                                     const ActiveConfig& cfg, Oracle* oracle) {
    ActiveDriftMonitor monitor(detector, cfg, nullptr, oracle);
    for (int e : trace) monitor.push(e);
    ActiveRunResult r;
    r.alarms = monitor.alarms();
    r.queries = monitor.queue().list();
    r.detector = monitor.detector();
    r.emissions = monitor.emissions();
    r.labels_applied = monitor.labels_applied();
    return r;
}

void write_alarm_log(std::ostream& out, std::span<const Alarm> alarms) {
    out << "timestamp,type,entropy\n";
    const auto precision = out.precision(std::numeric_limits<double>::max_digits10);
    for (const auto& a : alarms) out << a.timestamp << ',' << metaadd::to_string(a.type) << ',' << a.entropy << '\n';
    out.precision(precision);
}

void write_query_log(std::ostream& out, std::span<const LabelQuery> queries) {
    for (const auto& q : queries) out << to_json(q).dump() << '\n';
}

}  // namespace metaadd::active
