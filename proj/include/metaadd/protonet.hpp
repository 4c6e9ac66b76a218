#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaadd/common.hpp"
#include "metaadd/metafeat.hpp"
#include "metaadd/random.hpp"

namespace metaadd::protonet {

using Probabilities = std::array<double, kNumDriftKinds>;

enum class Architecture { fcn, rnn };

std::string_view to_string(Architecture a) noexcept;
Architecture parse_architecture(std::string_view name);

/// Embedding network f: R^L -> R^M with all parameters in one flat vector.
///
/// FCN: dense layers over `dims` (input, hidden..., output), ReLU on every
/// hidden layer and a linear output. RNN: the gap vector is read as a
/// sequence of scalars by one tanh recurrent layer; the last hidden state
/// goes through a linear head.
class EmbeddingNet {
  public:
    /// Activations kept by forward() for backward().
    struct Tape {
        std::vector<std::vector<double>> values;
    };

    EmbeddingNet() = default;

    static EmbeddingNet fcn(std::vector<std::size_t> dims);
    static EmbeddingNet rnn(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim);

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; the
    /// RNN's recurrent matrix is a random orthogonal matrix instead.
    void init(Rng& rng);

    Architecture arch() const noexcept { return arch_; }
    /// FCN: layer widths. RNN: {input_dim, hidden, embed_dim}.
    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t input_dim() const noexcept { return dims_.front(); }
    std::size_t embed_dim() const noexcept { return dims_.back(); }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    std::span<double> params() noexcept { return params_; }
    std::span<const double> params() const noexcept { return params_; }

    /// Throws std::invalid_argument on a dimension mismatch.
    std::vector<double> embed(std::span<const double> x) const;
    std::vector<double> forward(std::span<const double> x, Tape& tape) const;
    /// Adds d(output . grad_out)/d(params) into `grad`.
    void backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const;

    nlohmann::json to_json() const;
    static EmbeddingNet from_json(const nlohmann::json& j);

  private:
    void check_input(std::span<const double> x) const;
    std::vector<double> forward_fcn(std::span<const double> x, Tape* tape) const;
    std::vector<double> forward_rnn(std::span<const double> x, Tape* tape) const;
    void backward_fcn(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const;
    void backward_rnn(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const;

    Architecture arch_ = Architecture::fcn;
    std::vector<std::size_t> dims_;
    std::vector<double> params_;
};

/// d(u, v) = 1 - cos(u, v); 1 when either vector has zero norm.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// Softmax of negative cosine distances to each prototype.
Probabilities softmax_neg_distance(std::span<const double> embedding,
                                   const std::array<std::vector<double>, kNumDriftKinds>& centers);

struct PrototypeSet {
    std::array<std::vector<double>, kNumDriftKinds> centers;
    std::array<std::size_t, kNumDriftKinds> counts{};
};

/// Mean support embedding per class. Throws std::invalid_argument if a class
/// has no labeled sample.
PrototypeSet compute_prototypes(const EmbeddingNet& net, std::span<const metafeat::MetaSample> support);

Probabilities classify(const EmbeddingNet& net, const PrototypeSet& prototypes, std::span<const double> x);

/// Class index with the largest probability; ties go to the lower index.
DriftKind argmax(const Probabilities& p) noexcept;

struct EpisodeSpec {
    std::size_t support = 5;
    std::size_t query = 15;
};

/// Gap vectors of one episode, indexed by class.
struct Episode {
    std::array<std::vector<std::span<const double>>, kNumDriftKinds> support;
    std::array<std::vector<std::span<const double>>, kNumDriftKinds> query;
};

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Mean negative log-likelihood of the query points under prototypes built
/// from the support points, with its gradient w.r.t. the net parameters.
LossAndGrad episode_loss_and_grad(const EmbeddingNet& net, const Episode& episode);

/// NLL of one sample against fixed prototypes, with its gradient w.r.t. the
/// net parameters (the prototypes are treated as constants).
LossAndGrad sample_loss_and_grad(const EmbeddingNet& net, const PrototypeSet& prototypes, std::span<const double> x,
                                 DriftKind label);

class Adam {
  public:
    struct Config {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        /// Decoupled weight decay (AdamW); 0 gives plain Adam.
        double weight_decay = 0.0;
    };

    Adam(std::size_t size, Config cfg);
    explicit Adam(std::size_t size) : Adam(size, Config{}) {}

    /// Throws std::invalid_argument when sizes differ.
    void step(std::span<double> params, std::span<const double> grad);
    std::size_t steps() const noexcept { return t_; }

  private:
    Config cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

struct TrainConfig {
    Architecture arch = Architecture::fcn;
    std::vector<std::size_t> fcn_hidden = {128, 64, 32};
    std::size_t rnn_hidden = 32;
    std::size_t embed_dim = 16;
    EpisodeSpec episode;
    std::size_t episodes = 2000;
    /// Stop after this many validation checks without a better loss.
    std::size_t patience = 100;
    std::size_t validate_every = 10;
    /// Independent initializations; the one with the lowest validation loss
    /// is kept. Without a validation split only the first runs.
    std::size_t restarts = 3;
    /// Share of each class held out for early stopping; 0 disables it.
    double validation_fraction = 0.1;
    /// Supports per class for the final prototypes.
    std::size_t final_support = 20;
    Adam::Config adam{.weight_decay = 1.0};
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
};

/// A trained embedding net plus its prototypes and window layout.
class MetaDetector {
  public:
    EmbeddingNet net;
    PrototypeSet prototypes;
    metafeat::WindowSpec spec;
    nlohmann::json metadata = nlohmann::json::object();

    Probabilities classify(std::span<const double> gaps) const;

    nlohmann::json to_json() const;
    static MetaDetector from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static MetaDetector load(const std::string& path);
};

/// Curves of the kept run.
struct TrainingLog {
    std::vector<double> episode_loss;
    std::vector<std::pair<std::size_t, double>> validation_loss;
    std::size_t best_episode = 0;
    bool stopped_early = false;
    std::size_t kept_restart = 0;
    /// Best validation loss of every restart.
    std::vector<double> restart_validation_loss;
};

/// Episodic training. Throws std::invalid_argument when a class has fewer
/// than support + query training samples and std::runtime_error on a
/// non-finite loss.
MetaDetector train_meta_detector(std::span<const metafeat::MetaSample> corpus, const metafeat::WindowSpec& spec,
                                 const TrainConfig& cfg, TrainingLog* log = nullptr);

}  // namespace metaadd::protonet
