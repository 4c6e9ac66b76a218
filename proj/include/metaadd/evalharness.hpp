#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaadd/active.hpp"
#include "metaadd/baselearner.hpp"
#include "metaadd/metafeat.hpp"
#include "metaadd/protonet.hpp"
#include "metaadd/streamgen.hpp"

namespace metaadd::eval {

/// Where the drift sits inside a corpus trace. Centered drifts are fully
/// visible in the middle of the extent; recent drifts end in the newer part
/// of it, which is how a streaming view first sees a drift.
enum class Placement { centered, recent };

std::string_view to_string(Placement p) noexcept;
Placement parse_placement(std::string_view name);

/// Randomised severities and positions of simulated corpus traces. Each trace
/// is exactly spec.extent() long. Widths of gradual and incremental drifts are
/// drawn as a share of L windows.
struct CorpusParams {
    std::size_t per_class = 200;
    metafeat::WindowSpec spec;
    double base_min = 0.05;
    double base_max = 0.25;
    /// Error-rate increase caused by the drift.
    double delta_min = 0.5;
    double delta_max = 0.7;
    double width_min = 0.2;
    double width_max = 0.4;
    Placement placement = Placement::centered;
    /// Recent placement: the drift ends at this share of the L windows.
    double end_min = 0.6;
    double end_max = 0.9;
    /// Share of normal traces whose error rate falls with a drift-shaped
    /// signature (a learner recovering is not a drift).
    double falling_share = 0.0;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument for an invalid spec or ranges that leave
    /// [0, 1] or are reversed.
    void validate() const;
    nlohmann::json to_json() const;
    static CorpusParams from_json(const nlohmann::json& j);
};

/// per_class traces of each drift kind, one meta-sample per trace, classes in
/// index order.
std::vector<metafeat::MetaSample> build_meta_corpus(const CorpusParams& params);

struct F1Score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
};

/// Greedy one-to-one matching in time order: each detection takes the earliest
/// unmatched true drift within +-tolerance. Inputs need not be sorted.
/// Precision is 0 without detections, recall is 0 without true drifts.
/// Throws std::invalid_argument for a negative tolerance.
F1Score drift_f1(std::span<const std::size_t> true_drifts, std::span<const std::size_t> detected, double tolerance);

/// 4 n (L + 1) / 2 timestamps.
double default_f1_tolerance(const metafeat::WindowSpec& spec) noexcept;

/// Fraction of correctly classified samples per class (class index order)
/// and their mean.
struct ClassAccuracy {
    std::array<double, kNumDriftKinds> per_class{};
    double macro = 0.0;
};
ClassAccuracy evaluate_detector(const protonet::MetaDetector& detector,
                                std::span<const metafeat::MetaSample> labeled);

/// Drift schedule used for the toy streams: `count` drifts evenly spaced over
/// the stream, kinds cycling sudden, gradual, incremental.
std::vector<streamgen::DriftSpec> toy_drift_schedule(std::size_t length, std::size_t count, double width_share,
                                                     double magnitude = 1.0);

/// Ground truth for label queries: the kind of a drift whose transition
/// overlaps the query's extent, else normal.
DriftKind truth_for_extent(std::span<const streamgen::DriftSpec> drifts, std::size_t issued_at, std::size_t extent);

/// A warning or drift signal emitted during a prequential run.
struct Signal {
    std::size_t timestamp = 0;
    std::string detector;
    SignalLevel state = SignalLevel::drift;
};

/// CSV `timestamp,detector,state`.
void write_signal_log(std::ostream& out, std::span<const Signal> signals);

/// Outcome of one method on one stream.
struct MethodRun {
    std::string method;
    double accuracy = 0.0;
    std::vector<std::size_t> drift_points;
    std::vector<Signal> signals;
    /// Meta methods only.
    std::size_t queries = 0;
    std::size_t labels_applied = 0;
};

inline constexpr std::string_view kNoDetector = "*";
inline constexpr std::string_view kMetaDD = "Meta-DD";
inline constexpr std::string_view kMetaADD = "Meta-ADD";

/// "*", the classical detectors, Meta-DD, Meta-ADD.
std::vector<std::string> method_names();

/// Runs the naive Bayes learner over `stream` adapting with `method`. Meta
/// methods need `detector`; Meta-ADD also needs `oracle` (null leaves its
/// queries unanswered). Meta-DD is Meta-ADD with a zero budget.
MethodRun run_method(std::string_view method, std::span<const streamgen::Sample> stream,
                     const protonet::MetaDetector* detector = nullptr, const active::ActiveConfig& active = {},
                     active::Oracle* oracle = nullptr);

/// A labeled dataset read from disk.
struct Dataset {
    std::string name;
    std::vector<streamgen::Sample> samples;
    std::size_t features = 0;
    std::size_t skipped_rows = 0;
    std::vector<std::string> label_names;
};

/// Expected shape of a dataset; unset fields are not checked.
struct DatasetSchema {
    std::optional<std::size_t> rows;
    std::optional<std::size_t> features;
};

/// Reads a CSV (optional header) or ARFF file whose last column is the label.
/// Non-numeric columns and labels are integer-encoded by first-seen order.
/// Rows with a wrong field count or a missing value are skipped and counted.
/// Throws std::runtime_error for unreadable or empty files and for a schema
/// mismatch.
Dataset ingest_real_dataset(const std::string& path, const DatasetSchema& schema = {});

struct Exp1Config {
    CorpusParams corpus{.per_class = 200, .spec = {25, 100}};
    std::size_t test_per_class = 50;
    protonet::TrainConfig train;
};

struct Exp2Config {
    std::vector<std::size_t> l = {50, 100, 200};
    std::vector<std::size_t> n = {1, 25, 50};
    /// spec is replaced per cell.
    CorpusParams corpus{.per_class = 200, .spec = {25, 100}};
    std::size_t test_per_class = 50;
    protonet::TrainConfig train;
};

struct Exp3Config {
    std::vector<streamgen::Generator> generators = {streamgen::Generator::sea, streamgen::Generator::hyperplane,
                                                    streamgen::Generator::agrawal, streamgen::Generator::rbf,
                                                    streamgen::Generator::rtg};
    std::size_t length = 10000;
    std::size_t drifts = 3;
    std::size_t seeds = 5;
    double noise = 0.1;
    double drift_width_share = 0.05;
    CorpusParams corpus{.per_class = 500,
                        .spec = {50, 20},
                        .base_min = 0.05,
                        .base_max = 0.35,
                        .delta_min = 0.1,
                        .delta_max = 0.4,
                        .placement = Placement::recent,
                        .falling_share = 0.5};
    protonet::TrainConfig train;
    active::ActiveConfig active;
    /// 0 uses default_f1_tolerance of the meta-detector's spec.
    double f1_tolerance = 0.0;
    /// Use this checkpoint instead of training one.
    std::string checkpoint;
};

struct Exp4Config {
    std::vector<std::string> datasets;
    /// Synthetic stand-in with known drifts, run next to the real files.
    bool standin = true;
    streamgen::StreamConfig standin_stream{
        .generator = streamgen::Generator::hyperplane, .length = 20000, .drifts = {}, .seed = 1, .noise = 0.1};
    std::size_t standin_drifts = 9;
    double standin_width_share = 0.02;
    /// Meta-ADD DN on the stand-in for each n at L = dn_l.
    std::size_t dn_l = 50;
    std::vector<std::size_t> dn_n = {1, 25};
};

struct ExperimentConfig {
    /// Master seed; corpus, stream and training seeds are derived from it.
    std::uint64_t seed = 1;
    /// Worker threads for independent cells; 0 uses the hardware count.
    std::size_t threads = 0;
    Exp1Config exp1;
    Exp2Config exp2;
    Exp3Config exp3;
    Exp4Config exp4;

    /// Echo of the part used by experiment `id`.
    nlohmann::json to_json(std::string_view id) const;
};

struct ExperimentReport {
    std::string id;
    nlohmann::json config;
    nlohmann::json results;
    /// Aligned-column text table.
    std::string table;
    /// Kept out of to_json so reports stay byte-identical across runs.
    double wall_clock_seconds = 0.0;
    /// Per-stream signal logs keyed by "<stream>_seed<k>".
    std::vector<std::pair<std::string, std::vector<Signal>>> signal_logs;

    nlohmann::json to_json() const;
};

const std::vector<std::string>& experiment_ids();

/// The exp3 stream of generator `g` for seed index `seed` (1-based).
streamgen::StreamConfig toy_stream_config(const ExperimentConfig& cfg, streamgen::Generator g, std::size_t seed);

/// Throws std::invalid_argument for an unknown id, std::runtime_error for
/// missing dataset files or an untrained checkpoint.
ExperimentReport run_experiment(std::string_view id, const ExperimentConfig& cfg);

}  // namespace metaadd::eval
