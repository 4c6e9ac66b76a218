#include "metaadd/baselearner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace metaadd::baselearner {

void GaussianNaiveBayes::reset() {
    dim_ = 0;
    total_ = 0;
    classes_.clear();
    global_mean_.clear();
    global_m2_.clear();
}

void GaussianNaiveBayes::partial_fit(const Sample& sample) {
    const auto& x = sample.features;
    if (total_ == 0) {
        dim_ = x.size();
        global_mean_.assign(dim_, 0.0);
        global_m2_.assign(dim_, 0.0);
    } else if (x.size() != dim_) {
        throw std::invalid_argument("sample has " + std::to_string(x.size()) + " features, learner expects " +
                                    std::to_string(dim_));
    }

    auto& cls = classes_[sample.label];
    if (cls.count == 0) {
        cls.mean.assign(dim_, 0.0);
        cls.m2.assign(dim_, 0.0);
    }
    ++cls.count;
    ++total_;
    const double inv_c = 1.0 / static_cast<double>(cls.count);
    const double inv_t = 1.0 / static_cast<double>(total_);
    for (std::size_t j = 0; j < dim_; ++j) {
        const double d = x[j] - cls.mean[j];
        cls.mean[j] += d * inv_c;
        cls.m2[j] += d * (x[j] - cls.mean[j]);

        const double g = x[j] - global_mean_[j];
        global_mean_[j] += g * inv_t;
        global_m2_[j] += g * (x[j] - global_mean_[j]);
    }
}

double GaussianNaiveBayes::epsilon() const {
    double max_var = 0.0;
    if (total_ > 0) {
        for (double m2 : global_m2_) max_var = std::max(max_var, m2 / static_cast<double>(total_));
    }
    return max_var > 0.0 ? kVarSmoothing * max_var : kVarSmoothing;
}

const GaussianNaiveBayes::ClassStats& GaussianNaiveBayes::stats(int label) const {
    auto it = classes_.find(label);
    if (it == classes_.end()) throw std::out_of_range("unknown class " + std::to_string(label));
    return it->second;
}

std::size_t GaussianNaiveBayes::class_count(int label) const {
    auto it = classes_.find(label);
    return it == classes_.end() ? 0 : it->second.count;
}

std::vector<int> GaussianNaiveBayes::classes() const {
    std::vector<int> out;
    for (const auto& [label, _] : classes_) out.push_back(label);
    return out;
}

std::span<const double> GaussianNaiveBayes::mean(int label) const { return stats(label).mean; }

double GaussianNaiveBayes::variance(int label, std::size_t feature) const {
    const auto& s = stats(label);
    return s.m2.at(feature) / static_cast<double>(s.count);
}

Prediction GaussianNaiveBayes::predict(std::span<const double> x) const {
    if (classes_.empty()) throw std::logic_error("naive Bayes has not seen any class yet");
    if (x.size() != dim_) {
        throw std::invalid_argument("sample has " + std::to_string(x.size()) + " features, learner expects " +
                                    std::to_string(dim_));
    }
    const double eps = epsilon();
    const double log_total = std::log(static_cast<double>(total_));

    Prediction out;
    std::vector<double> log_joint;
    log_joint.reserve(classes_.size());
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [label, s] : classes_) {
        double lj = std::log(static_cast<double>(s.count)) - log_total;
        const double inv_c = 1.0 / static_cast<double>(s.count);
        for (std::size_t j = 0; j < dim_; ++j) {
            const double var = s.m2[j] * inv_c + eps;
            const double d = x[j] - s.mean[j];
            lj -= 0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
        }
        if (lj > best) {
            best = lj;
            out.label = label;
        }
        log_joint.push_back(lj);
    }
    double norm = 0.0;
    for (double lj : log_joint) norm += std::exp(lj - best);
    std::size_t i = 0;
    for (const auto& [label, _] : classes_) {
        out.probabilities.emplace_back(label, std::exp(log_joint[i++] - best) / norm);
    }
    return out;
}

PrequentialResult prequential_run(std::span<const Sample> stream, OnlineClassifier& learner,
                                  const AdaptationHook& hook) {
    if (stream.empty()) throw std::invalid_argument("prequential_run needs a nonempty stream");
    PrequentialResult result;
    result.errors.reserve(stream.size());
    std::vector<Sample> warning_buffer;
    std::size_t mistakes = 0;

    for (std::size_t t = 0; t < stream.size(); ++t) {
        const Sample& s = stream[t];
        int error = 0;
        if (!learner.empty()) error = learner.predict_label(s.features) != s.label ? 1 : 0;
        result.errors.push_back(error);
        mistakes += static_cast<std::size_t>(error);

        const SignalLevel level = hook ? hook(t, error) : SignalLevel::in_control;
        switch (level) {
            case SignalLevel::in_control:
                warning_buffer.clear();
                break;
            case SignalLevel::warning:
                warning_buffer.push_back(s);
                break;
            case SignalLevel::drift:
                learner.reset();
                for (const auto& buffered : warning_buffer) learner.partial_fit(buffered);
                warning_buffer.clear();
                result.drift_points.push_back(t);
                break;
        }
        learner.partial_fit(s);
    }
    result.accuracy = 1.0 - static_cast<double>(mistakes) / static_cast<double>(stream.size());
    return result;
}

PrequentialResult prequential_run(std::span<const Sample> stream, const AdaptationHook& hook) {
    GaussianNaiveBayes nb;
    return prequential_run(stream, nb, hook);
}

}  // namespace metaadd::baselearner
