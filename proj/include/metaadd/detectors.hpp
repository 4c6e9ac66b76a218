#pragma once

#include <cstddef>
#include <deque>
#include <list>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaadd/common.hpp"
#include "metaadd/random.hpp"

namespace metaadd::detectors {

struct DetectorStatus {
    SignalLevel state = SignalLevel::in_control;
    std::size_t at = 0;  ///< number of elements consumed before this one
};

/// Streaming change detector over an error signal. After reporting drift a
/// detector resets itself before the next element.
class DriftDetector {
  public:
    virtual ~DriftDetector() = default;

    /// Throws std::domain_error for inputs outside the detector's domain.
    DetectorStatus update(double value);

    virtual void reset() = 0;
    virtual std::string_view name() const = 0;
    /// Effective configuration, defaults included.
    virtual nlohmann::json config() const = 0;

    std::size_t seen() const noexcept { return seen_; }

  protected:
    virtual SignalLevel step(double value) = 0;
    /// Binary detectors only accept 0 or 1; the rest accept any finite value
    /// in [0, 1].
    virtual bool binary_input() const { return false; }

  private:
    std::size_t seen_ = 0;
};

/// Names accepted by make_detector, in reporting order.
const std::vector<std::string>& detector_names();

/// Builds a detector with its default thresholds, overridden by any keys in
/// `config`. Throws std::invalid_argument for unknown names, unknown keys and
/// non-positive or misordered thresholds.
std::unique_ptr<DriftDetector> make_detector(std::string_view name, const nlohmann::json& config = {});

/// Drift detection method: tracks the running error rate p and its binomial
/// deviation s and compares p + s against the best level seen.
/// Defaults: warning at 2 s_min, drift at 3 s_min, 1000 warm-up instances
/// (the usual 30 gives too many false alarms at moderate error rates).
class Ddm final : public DriftDetector {
  public:
    struct Config {
        std::size_t min_instances = 1000;
        double warning_level = 2.0;
        double drift_level = 3.0;
    };
    Ddm() : Ddm(Config{}) {}
    explicit Ddm(Config cfg);
    void reset() override;
    std::string_view name() const override { return "DDM"; }
    nlohmann::json config() const override;

  protected:
    SignalLevel step(double value) override;
    bool binary_input() const override { return true; }

  private:
    Config cfg_;
    std::size_t n_ = 0;
    double p_ = 0.0;
    double p_min_ = 0.0;
    double s_min_ = 0.0;
    double ps_min_ = 0.0;
};

/// Early drift detection: monitors the distance between consecutive errors.
/// In-control until `min_errors` errors have been seen; warning/drift when
/// (mean + 2 sd) falls below 0.90 / 0.85 of its maximum.
class Eddm final : public DriftDetector {
  public:
    struct Config {
        std::size_t min_errors = 200;
        double warning_ratio = 0.90;
        double drift_ratio = 0.85;
    };
    Eddm() : Eddm(Config{}) {}
    explicit Eddm(Config cfg);
    void reset() override;
    std::string_view name() const override { return "EDDM"; }
    nlohmann::json config() const override;

  protected:
    SignalLevel step(double value) override;
    bool binary_input() const override { return true; }

  private:
    Config cfg_;
    std::size_t n_ = 0;
    std::size_t errors_ = 0;
    std::size_t last_error_ = 0;
    double mean_distance_ = 0.0;
    double m2_distance_ = 0.0;
    double max_m2s_ = 0.0;
};

/// ADWIN2: adaptive window kept as an exponential histogram; the oldest
/// buckets are dropped while two sub-windows have significantly different
/// means.
class Adwin final : public DriftDetector {
  public:
    struct Config {
        double delta = 0.002;
        std::size_t max_buckets = 5;
        std::size_t clock = 32;
        std::size_t min_window = 10;
        std::size_t min_subwindow = 5;
    };
    Adwin() : Adwin(Config{}) {}
    explicit Adwin(Config cfg);
    void reset() override;
    std::string_view name() const override { return "ADWIN"; }
    nlohmann::json config() const override;

    std::size_t width() const noexcept { return width_; }
    double estimation() const noexcept { return width_ > 0 ? total_ / static_cast<double>(width_) : 0.0; }

  protected:
    SignalLevel step(double value) override;

  private:
    struct Bucket {
        double total = 0.0;
        double variance = 0.0;
    };
    /// rows_[i] holds buckets of 2^i elements, newest first.
    std::vector<std::deque<Bucket>> rows_;

    void insert(double value);
    void compress();
    bool detect_and_cut();
    bool cut_expression(double n0, double n1, double u0, double u1, double v, double delta_prime) const;

    Config cfg_;
    std::size_t width_ = 0;
    double total_ = 0.0;
    double variance_ = 0.0;
    std::size_t tick_ = 0;
};

/// HDDM with the A-test: Hoeffding bound on the difference between the
/// running mean and the mean at the best cut point (one-sided, increases).
class HddmA final : public DriftDetector {
  public:
    struct Config {
        double drift_confidence = 0.001;
        double warning_confidence = 0.005;
    };
    HddmA() : HddmA(Config{}) {}
    explicit HddmA(Config cfg);
    void reset() override;
    std::string_view name() const override { return "HDDM_A"; }
    nlohmann::json config() const override;

  protected:
    SignalLevel step(double value) override;

  private:
    bool mean_increased(double confidence) const;

    Config cfg_;
    double n_total_ = 0.0, c_total_ = 0.0;
    double n_min_ = 0.0, c_min_ = 0.0;
};

/// HDDM with the W-test: EWMA statistics with McDiarmid bounds (one-sided,
/// increases).
class HddmW final : public DriftDetector {
  public:
    struct Config {
        double drift_confidence = 0.0001;
        double warning_confidence = 0.0005;
        double lambda = 0.05;
    };
    HddmW() : HddmW(Config{}) {}
    explicit HddmW(Config cfg);
    void reset() override;
    std::string_view name() const override { return "HDDM_W"; }
    nlohmann::json config() const override;

  protected:
    SignalLevel step(double value) override;

  private:
    struct Ewma {
        double estimate = -1.0;  ///< negative until the first value
        double bound_sum = 0.0;  ///< sum of squared weights
        void push(double value, double lambda);
    };
    bool increase_detected(double confidence) const;

    Config cfg_;
    Ewma total_;
    Ewma cut_sample_;
    Ewma recent_;
    double cut_point_ = 0.0;
};

/// Page-Hinkley test on upward shifts of the mean, with fading factor alpha.
class PageHinkley final : public DriftDetector {
  public:
    struct Config {
        std::size_t min_instances = 30;
        double delta = 0.005;
        double threshold = 50.0;
        double alpha = 1.0 - 0.0001;
    };
    PageHinkley() : PageHinkley(Config{}) {}
    explicit PageHinkley(Config cfg);
    void reset() override;
    std::string_view name() const override { return "PageHinkley"; }
    nlohmann::json config() const override;

    double statistic() const noexcept { return sum_; }

  protected:
    SignalLevel step(double value) override;

  private:
    Config cfg_;
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double sum_ = 0.0;
};

/// Kolmogorov-Smirnov windowing: compares the newest `stat_size` values with
/// a random draw from the older part of a sliding window.
class Kswin final : public DriftDetector {
  public:
    struct Config {
        double alpha = 0.0005;
        std::size_t window_size = 100;
        std::size_t stat_size = 30;
        std::uint64_t seed = 42;
    };
    Kswin() : Kswin(Config{}) {}
    explicit Kswin(Config cfg);
    void reset() override;
    std::string_view name() const override { return "KSWIN"; }
    nlohmann::json config() const override;

  protected:
    SignalLevel step(double value) override;

  private:
    Config cfg_;
    std::deque<double> window_;
    Rng rng_;
};

/// Two-sample KS statistic and asymptotic p-value (Stephens' small-sample
/// correction). Exposed for tests.
struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace metaadd::detectors
