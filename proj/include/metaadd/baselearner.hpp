#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "metaadd/common.hpp"
#include "metaadd/streamgen.hpp"

namespace metaadd::baselearner {

using streamgen::Sample;

/// Anything that can be evaluated prequentially.
class OnlineClassifier {
  public:
    virtual ~OnlineClassifier() = default;
    virtual void partial_fit(const Sample& sample) = 0;
    virtual int predict_label(std::span<const double> features) const = 0;
    virtual bool empty() const = 0;
    virtual void reset() = 0;
};

struct Prediction {
    int label = 0;
    /// (class id, posterior) pairs ordered by class id; posteriors sum to 1.
    std::vector<std::pair<int, double>> probabilities;
};

/// Incremental Gaussian naive Bayes. Per-class moments use Welford's
/// single-pass update; the variance floor is 1e-9 times the largest
/// per-feature variance seen so far (1e-9 absolute while all features are
/// constant).
class GaussianNaiveBayes final : public OnlineClassifier {
  public:
    static constexpr double kVarSmoothing = 1e-9;

    void partial_fit(const Sample& sample) override;
    Prediction predict(std::span<const double> features) const;
    int predict_label(std::span<const double> features) const override {
        return predict(features).label;
    }
    bool empty() const override { return classes_.empty(); }
    void reset() override;

    std::size_t dimension() const noexcept { return dim_; }
    std::size_t total_count() const noexcept { return total_; }
    std::size_t class_count(int label) const;
    std::vector<int> classes() const;
    std::span<const double> mean(int label) const;
    /// Population variance of a feature within a class (no smoothing).
    double variance(int label, std::size_t feature) const;
    double smoothed_variance(int label, std::size_t feature) const {
        return variance(label, feature) + epsilon();
    }
    double epsilon() const;

  private:
    struct ClassStats {
        std::size_t count = 0;
        std::vector<double> mean;
        std::vector<double> m2;
    };

    const ClassStats& stats(int label) const;

    std::size_t dim_ = 0;
    std::size_t total_ = 0;
    std::map<int, ClassStats> classes_;
    std::vector<double> global_mean_;
    std::vector<double> global_m2_;
};

/// Called once per sample after its error is known; the returned level drives
/// adaptation: warning buffers the sample, drift resets the learner and
/// retrains it on the warning buffer.
using AdaptationHook = std::function<SignalLevel(std::size_t t, int error)>;

struct PrequentialResult {
    ErrorTrace errors;
    double accuracy = 1.0;
    std::vector<std::size_t> drift_points;  ///< timestamps where the learner was reset
};

/// Test-then-train over `stream`. The first sample is train-only and counts as
/// error 0. A null hook means no adaptation.
PrequentialResult prequential_run(std::span<const Sample> stream, OnlineClassifier& learner,
                                  const AdaptationHook& hook = {});

PrequentialResult prequential_run(std::span<const Sample> stream, const AdaptationHook& hook = {});

}  // namespace metaadd::baselearner
