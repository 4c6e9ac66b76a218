#include "metaadd/detectors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace metaadd::detectors {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string normalise_name(std::string_view name) {
    std::string out;
    for (char c : name) {
        if (c == '-' || c == '_' || c == ' ') continue;
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

/// Copies recognised keys from `overrides` into the fields of a config and
/// rejects anything unexpected.
class ConfigReader {
  public:
    ConfigReader(std::string_view detector, const json& overrides) : detector_(detector), overrides_(overrides) {
        if (!overrides_.is_null() && !overrides_.is_object()) {
            throw std::invalid_argument(std::string(detector_) + " config must be a JSON object");
        }
    }

    template <typename T>
    void read(const char* key, T& field) {
        if (overrides_.is_object() && overrides_.contains(key)) {
            field = overrides_.at(key).get<T>();
            ++consumed_;
        }
    }

    void finish() const {
        const std::size_t given = overrides_.is_object() ? overrides_.size() : 0;
        if (consumed_ != given) {
            throw std::invalid_argument("unrecognised option for " + std::string(detector_) + ": " + overrides_.dump());
        }
    }

  private:
    std::string_view detector_;
    const json& overrides_;
    std::size_t consumed_ = 0;
};

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive");
}

void require_probability(double v, const char* what) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument(std::string(what) + " must lie in (0, 1)");
}

}  // namespace

DetectorStatus DriftDetector::update(double value) {
    if (!std::isfinite(value)) throw std::domain_error(std::string(name()) + ": non-finite input");
    if (binary_input() ? (value != 0.0 && value != 1.0) : (value < 0.0 || value > 1.0)) {
        throw std::domain_error(std::string(name()) + ": input " + std::to_string(value) + " outside domain");
    }
    DetectorStatus status{step(value), seen_};
    ++seen_;
    return status;
}

// ---------------------------------------------------------------- DDM

Ddm::Ddm(Config cfg) : cfg_(cfg) { reset(); }

void Ddm::reset() {
    n_ = 0;
    p_ = 0.0;
    p_min_ = kInf;
    s_min_ = kInf;
    ps_min_ = kInf;
}

json Ddm::config() const {
    return {{"min_instances", cfg_.min_instances}, {"warning_level", cfg_.warning_level}, {"drift_level", cfg_.drift_level}};
}

SignalLevel Ddm::step(double x) {
    ++n_;
    p_ += (x - p_) / static_cast<double>(n_);
    const double s = std::sqrt(p_ * (1.0 - p_) / static_cast<double>(n_));
    if (n_ < cfg_.min_instances) return SignalLevel::in_control;

    if (p_ + s <= ps_min_) {
        p_min_ = p_;
        s_min_ = s;
        ps_min_ = p_ + s;
    }
    if (p_ + s > p_min_ + cfg_.drift_level * s_min_) {
        reset();
        return SignalLevel::drift;
    }
    if (p_ + s > p_min_ + cfg_.warning_level * s_min_) return SignalLevel::warning;
    return SignalLevel::in_control;
}

// ---------------------------------------------------------------- EDDM

Eddm::Eddm(Config cfg) : cfg_(cfg) { reset(); }

void Eddm::reset() {
    n_ = 0;
    errors_ = 0;
    last_error_ = 0;
    mean_distance_ = 0.0;
    m2_distance_ = 0.0;
    max_m2s_ = 0.0;
}

json Eddm::config() const {
    return {{"min_errors", cfg_.min_errors}, {"warning_ratio", cfg_.warning_ratio}, {"drift_ratio", cfg_.drift_ratio}};
}

SignalLevel Eddm::step(double x) {
    ++n_;
    if (x == 0.0) return SignalLevel::in_control;

    ++errors_;
    const double distance = static_cast<double>(n_ - last_error_);
    last_error_ = n_;
    const double old_mean = mean_distance_;
    mean_distance_ += (distance - mean_distance_) / static_cast<double>(errors_);
    m2_distance_ += (distance - mean_distance_) * (distance - old_mean);
    const double m2s = mean_distance_ + 2.0 * std::sqrt(m2_distance_ / static_cast<double>(errors_));

    if (errors_ < cfg_.min_errors) return SignalLevel::in_control;
    if (m2s > max_m2s_) {
        max_m2s_ = m2s;
        return SignalLevel::in_control;
    }
    const double ratio = m2s / max_m2s_;
    if (errors_ > cfg_.min_errors && ratio < cfg_.drift_ratio) {
        reset();
        return SignalLevel::drift;
    }
    if (errors_ > cfg_.min_errors && ratio < cfg_.warning_ratio) return SignalLevel::warning;
    return SignalLevel::in_control;
}

// ---------------------------------------------------------------- ADWIN

Adwin::Adwin(Config cfg) : cfg_(cfg) { reset(); }

void Adwin::reset() {
    rows_.clear();
    width_ = 0;
    total_ = 0.0;
    variance_ = 0.0;
    tick_ = 0;
}

json Adwin::config() const {
    return {{"delta", cfg_.delta},
            {"max_buckets", cfg_.max_buckets},
            {"clock", cfg_.clock},
            {"min_window", cfg_.min_window},
            {"min_subwindow", cfg_.min_subwindow}};
}

void Adwin::insert(double value) {
    if (rows_.empty()) rows_.emplace_back();
    rows_[0].push_front(Bucket{value, 0.0});
    if (width_ > 0) {
        const double mean = total_ / static_cast<double>(width_);
        variance_ += static_cast<double>(width_) * (value - mean) * (value - mean) / static_cast<double>(width_ + 1);
    }
    ++width_;
    total_ += value;
}

void Adwin::compress() {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size() <= cfg_.max_buckets) break;
        const double n = std::ldexp(1.0, static_cast<int>(i));
        Bucket oldest = rows_[i].back();
        rows_[i].pop_back();
        Bucket next = rows_[i].back();
        rows_[i].pop_back();
        const double diff = oldest.total / n - next.total / n;
        Bucket merged{oldest.total + next.total, oldest.variance + next.variance + n * n * diff * diff / (2.0 * n)};
        if (i + 1 == rows_.size()) rows_.emplace_back();
        rows_[i + 1].push_front(merged);
    }
}

bool Adwin::cut_expression(double n0, double n1, double u0, double u1, double v, double delta_prime) const {
    const double min_len = static_cast<double>(cfg_.min_subwindow);
    const double m = 1.0 / (n0 - min_len + 1.0) + 1.0 / (n1 - min_len + 1.0);
    const double eps = std::sqrt(2.0 * m * v * delta_prime) + 2.0 / 3.0 * delta_prime * m;
    return std::fabs(u0 / n0 - u1 / n1) > eps;
}

bool Adwin::detect_and_cut() {
    bool changed = false;
    bool reduce = true;
    while (reduce && width_ > 0) {
        reduce = false;
        const double n = static_cast<double>(width_);
        const double delta_prime = std::log(2.0 * std::log(n) / cfg_.delta);
        const double v = variance_ / n;
        double n0 = 0.0, u0 = 0.0;
        double n1 = n, u1 = total_;
        // Walk from the oldest bucket towards the newest.
        for (std::size_t r = rows_.size(); r-- > 0 && !reduce;) {
            const double size = std::ldexp(1.0, static_cast<int>(r));
            const auto& row = rows_[r];
            for (std::size_t k = row.size(); k-- > 0;) {
                n0 += size;
                n1 -= size;
                u0 += row[k].total;
                u1 -= row[k].total;
                if (r == 0 && k == 0) break;  // newest bucket: nothing left on the right
                if (n0 >= static_cast<double>(cfg_.min_subwindow) && n1 >= static_cast<double>(cfg_.min_subwindow) &&
                    cut_expression(n0, n1, u0, u1, v, delta_prime)) {
                    reduce = true;
                    break;
                }
            }
        }
        if (reduce) {
            changed = true;
            // Drop the oldest bucket.
            auto& last = rows_.back();
            const double size = std::ldexp(1.0, static_cast<int>(rows_.size() - 1));
            const Bucket b = last.back();
            last.pop_back();
            width_ -= static_cast<std::size_t>(size);
            total_ -= b.total;
            if (width_ > 0) {
                const double rest = static_cast<double>(width_);
                const double diff = b.total / size - total_ / rest;
                variance_ -= b.variance + size * rest * diff * diff / (size + rest);
                variance_ = std::max(variance_, 0.0);
            } else {
                variance_ = 0.0;
            }
            while (!rows_.empty() && rows_.back().empty()) rows_.pop_back();
        }
    }
    return changed;
}

SignalLevel Adwin::step(double value) {
    insert(value);
    compress();
    ++tick_;
    if (tick_ % cfg_.clock == 0 && width_ > cfg_.min_window && detect_and_cut()) {
        return SignalLevel::drift;
    }
    return SignalLevel::in_control;
}

// ---------------------------------------------------------------- HDDM_A

HddmA::HddmA(Config cfg) : cfg_(cfg) { reset(); }

void HddmA::reset() {
    n_total_ = c_total_ = 0.0;
    n_min_ = c_min_ = 0.0;
}

json HddmA::config() const {
    return {{"drift_confidence", cfg_.drift_confidence}, {"warning_confidence", cfg_.warning_confidence}};
}

bool HddmA::mean_increased(double confidence) const {
    if (n_min_ == n_total_) return false;
    const double m = (n_total_ - n_min_) / n_min_ * (1.0 / n_total_);
    const double bound = std::sqrt(m / 2.0 * std::log(2.0 / confidence));
    return c_total_ / n_total_ - c_min_ / n_min_ >= bound;
}

SignalLevel HddmA::step(double x) {
    n_total_ += 1.0;
    c_total_ += x;
    if (n_min_ == 0.0) {
        n_min_ = n_total_;
        c_min_ = c_total_;
    }
    const double log_term = std::log(1.0 / cfg_.drift_confidence);
    const double bound_min = std::sqrt(log_term / (2.0 * n_min_));
    const double bound_now = std::sqrt(log_term / (2.0 * n_total_));
    if (c_min_ / n_min_ + bound_min >= c_total_ / n_total_ + bound_now) {
        c_min_ = c_total_;
        n_min_ = n_total_;
    }
    if (mean_increased(cfg_.drift_confidence)) {
        reset();
        return SignalLevel::drift;
    }
    if (mean_increased(cfg_.warning_confidence)) return SignalLevel::warning;
    return SignalLevel::in_control;
}

// ---------------------------------------------------------------- HDDM_W

HddmW::HddmW(Config cfg) : cfg_(cfg) { reset(); }

void HddmW::Ewma::push(double value, double lambda) {
    if (estimate < 0.0) {
        estimate = value;
        bound_sum = 1.0;
    } else {
        estimate = lambda * value + (1.0 - lambda) * estimate;
        bound_sum = lambda * lambda + (1.0 - lambda) * (1.0 - lambda) * bound_sum;
    }
}

void HddmW::reset() {
    total_ = Ewma{};
    cut_sample_ = Ewma{};
    recent_ = Ewma{};
    cut_point_ = kInf;
}

json HddmW::config() const {
    return {{"drift_confidence", cfg_.drift_confidence},
            {"warning_confidence", cfg_.warning_confidence},
            {"lambda", cfg_.lambda}};
}

bool HddmW::increase_detected(double confidence) const {
    if (cut_sample_.estimate < 0.0 || recent_.estimate < 0.0) return false;
    const double bound = std::sqrt((cut_sample_.bound_sum + recent_.bound_sum) * std::log(1.0 / confidence) / 2.0);
    return recent_.estimate - cut_sample_.estimate > bound;
}

SignalLevel HddmW::step(double x) {
    total_.push(x, cfg_.lambda);
    const double bound = std::sqrt(total_.bound_sum * std::log(1.0 / cfg_.drift_confidence) / 2.0);
    if (total_.estimate + bound < cut_point_) {
        cut_point_ = total_.estimate + bound;
        cut_sample_ = total_;
        recent_ = Ewma{};
    } else {
        recent_.push(x, cfg_.lambda);
    }
    if (increase_detected(cfg_.drift_confidence)) {
        reset();
        return SignalLevel::drift;
    }
    if (increase_detected(cfg_.warning_confidence)) return SignalLevel::warning;
    return SignalLevel::in_control;
}

// ---------------------------------------------------------------- Page-Hinkley

PageHinkley::PageHinkley(Config cfg) : cfg_(cfg) { reset(); }

void PageHinkley::reset() {
    n_ = 0;
    mean_ = 0.0;
    sum_ = 0.0;
}

json PageHinkley::config() const {
    return {{"min_instances", cfg_.min_instances},
            {"delta", cfg_.delta},
            {"threshold", cfg_.threshold},
            {"alpha", cfg_.alpha}};
}

SignalLevel PageHinkley::step(double x) {
    ++n_;
    mean_ += (x - mean_) / static_cast<double>(n_);
    sum_ = std::max(0.0, cfg_.alpha * sum_ + (x - mean_ - cfg_.delta));
    if (n_ < cfg_.min_instances) return SignalLevel::in_control;
    if (sum_ > cfg_.threshold) {
        reset();
        return SignalLevel::drift;
    }
    return SignalLevel::in_control;
}

// ---------------------------------------------------------------- KSWIN

Kswin::Kswin(Config cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg_.stat_size >= cfg_.window_size) {
        throw std::invalid_argument("KSWIN stat_size must be smaller than window_size");
    }
    reset();
}

void Kswin::reset() {
    window_.clear();
    rng_ = Rng(cfg_.seed);
}

json Kswin::config() const {
    return {{"alpha", cfg_.alpha}, {"window_size", cfg_.window_size}, {"stat_size", cfg_.stat_size}, {"seed", cfg_.seed}};
}

SignalLevel Kswin::step(double x) {
    window_.push_back(x);
    if (window_.size() > cfg_.window_size) window_.pop_front();
    if (window_.size() < cfg_.window_size) return SignalLevel::in_control;

    const std::size_t older = cfg_.window_size - cfg_.stat_size;
    std::vector<double> reference(cfg_.stat_size);
    for (auto& r : reference) r = window_[rng_.below(older)];
    std::vector<double> recent(window_.end() - static_cast<std::ptrdiff_t>(cfg_.stat_size), window_.end());
    const KsResult ks = ks_two_sample(std::move(reference), recent);
    if (ks.p_value <= cfg_.alpha && ks.statistic > 0.1) {
        window_.assign(recent.begin(), recent.end());
        return SignalLevel::drift;
    }
    return SignalLevel::in_control;
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("KS test needs two nonempty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == v) ++i;
        while (j < b.size() && b[j] == v) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double en = std::sqrt(na * nb / (na + nb));
    const double lambda = (en + 0.12 + 0.11 / en) * d;

    // Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
    double p = 1.0;
    if (lambda > 0.0) {
        double sum = 0.0, sign = 1.0, previous = 0.0;
        bool converged = false;
        for (int k = 1; k <= 100; ++k) {
            const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
            sum += term;
            if (std::fabs(term) <= 1e-3 * previous || std::fabs(term) <= 1e-10 * sum) {
                converged = true;
                break;
            }
            sign = -sign;
            previous = std::fabs(term);
        }
        p = converged ? std::clamp(2.0 * sum, 0.0, 1.0) : 1.0;
    }
    return {d, p};
}

// ---------------------------------------------------------------- factory

const std::vector<std::string>& detector_names() {
    static const std::vector<std::string> names = {"ADWIN", "DDM", "EDDM", "HDDM_A", "HDDM_W", "PageHinkley", "KSWIN"};
    return names;
}

std::unique_ptr<DriftDetector> make_detector(std::string_view name, const json& config) {
    const std::string key = normalise_name(name);
    if (key == "DDM") {
        Ddm::Config c;
        ConfigReader r("DDM", config);
        r.read("min_instances", c.min_instances);
        r.read("warning_level", c.warning_level);
        r.read("drift_level", c.drift_level);
        r.finish();
        require_positive(c.warning_level, "warning_level");
        require_positive(c.drift_level, "drift_level");
        if (c.warning_level >= c.drift_level) throw std::invalid_argument("DDM warning_level must be below drift_level");
        return std::make_unique<Ddm>(c);
    }
    if (key == "EDDM") {
        Eddm::Config c;
        ConfigReader r("EDDM", config);
        r.read("min_errors", c.min_errors);
        r.read("warning_ratio", c.warning_ratio);
        r.read("drift_ratio", c.drift_ratio);
        r.finish();
        require_probability(c.warning_ratio, "warning_ratio");
        require_probability(c.drift_ratio, "drift_ratio");
        // A lower ratio is the more severe level.
        if (c.drift_ratio >= c.warning_ratio) throw std::invalid_argument("EDDM drift_ratio must be below warning_ratio");
        return std::make_unique<Eddm>(c);
    }
    if (key == "ADWIN") {
        Adwin::Config c;
        ConfigReader r("ADWIN", config);
        r.read("delta", c.delta);
        r.read("max_buckets", c.max_buckets);
        r.read("clock", c.clock);
        r.read("min_window", c.min_window);
        r.read("min_subwindow", c.min_subwindow);
        r.finish();
        require_probability(c.delta, "delta");
        if (c.max_buckets < 2 || c.clock < 1 || c.min_subwindow < 1) {
            throw std::invalid_argument("ADWIN max_buckets >= 2, clock >= 1, min_subwindow >= 1 required");
        }
        return std::make_unique<Adwin>(c);
    }
    if (key == "HDDMA") {
        HddmA::Config c;
        ConfigReader r("HDDM_A", config);
        r.read("drift_confidence", c.drift_confidence);
        r.read("warning_confidence", c.warning_confidence);
        r.finish();
        require_probability(c.drift_confidence, "drift_confidence");
        require_probability(c.warning_confidence, "warning_confidence");
        if (c.drift_confidence >= c.warning_confidence) {
            throw std::invalid_argument("HDDM_A drift_confidence must be below warning_confidence");
        }
        return std::make_unique<HddmA>(c);
    }
    if (key == "HDDMW") {
        HddmW::Config c;
        ConfigReader r("HDDM_W", config);
        r.read("drift_confidence", c.drift_confidence);
        r.read("warning_confidence", c.warning_confidence);
        r.read("lambda", c.lambda);
        r.finish();
        require_probability(c.drift_confidence, "drift_confidence");
        require_probability(c.warning_confidence, "warning_confidence");
        require_probability(c.lambda, "lambda");
        if (c.drift_confidence >= c.warning_confidence) {
            throw std::invalid_argument("HDDM_W drift_confidence must be below warning_confidence");
        }
        return std::make_unique<HddmW>(c);
    }
    if (key == "PAGEHINKLEY" || key == "PH") {
        PageHinkley::Config c;
        ConfigReader r("PageHinkley", config);
        r.read("min_instances", c.min_instances);
        r.read("delta", c.delta);
        r.read("threshold", c.threshold);
        r.read("alpha", c.alpha);
        r.finish();
        require_positive(c.delta, "delta");
        require_positive(c.threshold, "threshold");
        if (!(c.alpha > 0.0 && c.alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
        return std::make_unique<PageHinkley>(c);
    }
    if (key == "KSWIN") {
        Kswin::Config c;
        ConfigReader r("KSWIN", config);
        r.read("alpha", c.alpha);
        r.read("window_size", c.window_size);
        r.read("stat_size", c.stat_size);
        r.read("seed", c.seed);
        r.finish();
        require_probability(c.alpha, "alpha");
        if (c.stat_size == 0) throw std::invalid_argument("KSWIN stat_size must be positive");
        return std::make_unique<Kswin>(c);
    }
    throw std::invalid_argument("unknown detector '" + std::string(name) + "'");
}

}  // namespace metaadd::detectors
