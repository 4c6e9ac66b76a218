#include "metaadd/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "metaadd/detectors.hpp"

namespace metaadd::eval {

using nlohmann::json;

namespace {

template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

/// First column left-aligned, the rest right-aligned, two spaces apart.
std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        if (width.size() < r.size()) width.resize(r.size(), 0);
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream os;
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c > 0) line += "  ";
            const std::string pad(width[c] - r[c].size(), ' ');
            line += c == 0 ? r[c] + pad : pad + r[c];
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        os << line << '\n';
    }
    return os.str();
}

double mean(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void check_range(double lo, double hi, const char* what) {
    if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) {
        throw std::invalid_argument(std::string(what) + " range must satisfy 0 <= min <= max <= 1");
    }
}

bool is_meta(std::string_view method) { return method == kMetaDD || method == kMetaADD; }

}  // namespace

std::string_view to_string(Placement p) noexcept { return p == Placement::recent ? "recent" : "centered"; }

Placement parse_placement(std::string_view name) {
    if (name == "centered") return Placement::centered;
    if (name == "recent") return Placement::recent;
    throw std::invalid_argument("unknown placement '" + std::string(name) + "'");
}

void CorpusParams::validate() const {
    spec.validate();
    if (per_class == 0) throw std::invalid_argument("per-class count must be at least 1");
    check_range(base_min, base_max, "base error");
    check_range(delta_min, delta_max, "error increase");
    check_range(width_min, width_max, "width share");
    check_range(end_min, end_max, "drift end share");
    check_range(falling_share, falling_share, "falling share");
    if (base_max + delta_max > 1.0) throw std::invalid_argument("base error + increase must not exceed 1");
}

json CorpusParams::to_json() const {
    return {{"per_class", per_class},
            {"n", spec.n},
            {"L", spec.L},
            {"sign_agnostic", spec.sign_agnostic},
            {"base_error", {base_min, base_max}},
            {"error_increase", {delta_min, delta_max}},
            {"width_share", {width_min, width_max}},
            {"placement", to_string(placement)},
            {"end_share", {end_min, end_max}},
            {"falling_share", falling_share},
            {"seed", seed}};
}

CorpusParams CorpusParams::from_json(const json& j) {
    CorpusParams p;
    p.per_class = j.value("per_class", p.per_class);
    p.spec.n = j.value("n", p.spec.n);
    p.spec.L = j.value("L", p.spec.L);
    p.spec.sign_agnostic = j.value("sign_agnostic", false);
    auto pair = [&](const char* key, double& lo, double& hi) {
        if (!j.contains(key)) return;
        lo = j.at(key).at(0).get<double>();
        hi = j.at(key).at(1).get<double>();
    };
    pair("base_error", p.base_min, p.base_max);
    pair("error_increase", p.delta_min, p.delta_max);
    pair("width_share", p.width_min, p.width_max);
    pair("end_share", p.end_min, p.end_max);
    p.falling_share = j.value("falling_share", p.falling_share);
    if (j.contains("placement")) p.placement = parse_placement(j.at("placement").get<std::string>());
    p.seed = j.value("seed", p.seed);
    return p;
}

std::vector<metafeat::MetaSample> build_meta_corpus(const CorpusParams& params) {
    params.validate();
    const auto& spec = params.spec;
    const auto L = static_cast<long long>(spec.L);
    const auto width_lo = std::max(1LL, std::llround(params.width_min * static_cast<double>(spec.L)));
    const auto width_hi = std::max(width_lo, std::llround(params.width_max * static_cast<double>(spec.L)));
    if (width_lo > L) throw std::invalid_argument("drift width does not fit in L windows");

    Rng rng(params.seed);
    std::vector<metafeat::MetaSample> corpus;
    corpus.reserve(params.per_class * kNumDriftKinds);
    for (DriftKind kind : kAllDriftKinds) {
        for (std::size_t i = 0; i < params.per_class; ++i) {
            streamgen::TraceParams tp;
            tp.kind = kind;
            tp.length = spec.extent();
            tp.base_error = rng.uniform(params.base_min, params.base_max);
            tp.drift_error = tp.base_error + rng.uniform(params.delta_min, params.delta_max);
            const long long drawn = rng.between(width_lo, width_hi);
            const double end_share = rng.uniform(params.end_min, params.end_max);
            const bool falling = rng.uniform() < params.falling_share;
            const DriftKind shape = kAllDriftKinds[rng.below(3)];
            tp.seed = rng.next_u64();
            if (kind == DriftKind::normal && falling) {
                tp.kind = shape;
                tp.error_increases = false;
            }

            const bool has_width = tp.kind == DriftKind::gradual || tp.kind == DriftKind::incremental;
            const long long w = has_width ? std::min(drawn, L) : 0;
            long long onset = 0;
            if (params.placement == Placement::centered) {
                onset = L / 2 - w / 2;
            } else {
                const long long end = std::clamp(std::llround(end_share * static_cast<double>(spec.L)),
                                                 std::max(w, 1LL), L);
                onset = end - w;
            }
            if (tp.kind != DriftKind::normal) {
                tp.width = static_cast<std::size_t>(w) * spec.n;
                tp.position = static_cast<std::size_t>(onset) * spec.n;
            }
            auto sample = metafeat::make_meta_sample(streamgen::simulate_error_trace(tp), spec, kind);
            sample.source = "simulated";
            corpus.push_back(std::move(sample));
        }
    }
    return corpus;
}

F1Score drift_f1(std::span<const std::size_t> true_drifts, std::span<const std::size_t> detected, double tolerance) {
    if (!(tolerance >= 0.0)) throw std::invalid_argument("F1 tolerance must be non-negative");
    std::vector<std::size_t> truth(true_drifts.begin(), true_drifts.end());
    std::vector<std::size_t> found(detected.begin(), detected.end());
    std::sort(truth.begin(), truth.end());
    std::sort(found.begin(), found.end());

    std::vector<bool> matched(truth.size(), false);
    F1Score s;
    for (std::size_t d : found) {
        bool hit = false;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (matched[i]) continue;
            const double gap = std::abs(static_cast<double>(d) - static_cast<double>(truth[i]));
            if (gap <= tolerance) {
                matched[i] = true;
                hit = true;
                break;
            }
        }
        hit ? ++s.true_positives : ++s.false_positives;
    }
    s.false_negatives = truth.size() - s.true_positives;
    if (!found.empty()) s.precision = static_cast<double>(s.true_positives) / static_cast<double>(found.size());
    if (!truth.empty()) s.recall = static_cast<double>(s.true_positives) / static_cast<double>(truth.size());
    if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

double default_f1_tolerance(const metafeat::WindowSpec& spec) noexcept {
    return 4.0 * static_cast<double>(spec.n) * static_cast<double>(spec.L + 1) / 2.0;
}

ClassAccuracy evaluate_detector(const protonet::MetaDetector& detector,
                                std::span<const metafeat::MetaSample> labeled) {
    std::array<std::size_t, kNumDriftKinds> hits{}, totals{};
    for (const auto& s : labeled) {
        if (!s.label) throw std::invalid_argument("evaluation needs labeled samples");
        const auto k = index_of(*s.label);
        ++totals[k];
        if (protonet::argmax(detector.classify(s.gaps)) == *s.label) ++hits[k];
    }
    ClassAccuracy out;
    std::size_t present = 0;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        if (totals[k] == 0) continue;
        out.per_class[k] = static_cast<double>(hits[k]) / static_cast<double>(totals[k]);
        out.macro += out.per_class[k];
        ++present;
    }
    if (present > 0) out.macro /= static_cast<double>(present);
    return out;
}

std::vector<streamgen::DriftSpec> toy_drift_schedule(std::size_t length, std::size_t count, double width_share,
                                                     double magnitude) {
    static constexpr std::array<DriftKind, 3> kCycle = {DriftKind::sudden, DriftKind::gradual,
                                                        DriftKind::incremental};
    const std::size_t spacing = length / (count + 1);
    const auto width = static_cast<std::size_t>(std::llround(width_share * static_cast<double>(length)));
    if (count > 0 && (spacing == 0 || width >= spacing)) {
        throw std::invalid_argument("drift schedule does not fit in the stream");
    }
    std::vector<streamgen::DriftSpec> out;
    for (std::size_t i = 0; i < count; ++i) {
        const DriftKind kind = kCycle[i % kCycle.size()];
        const std::size_t w = kind == DriftKind::sudden ? 0 : std::max<std::size_t>(width, 1);
        out.push_back({kind, spacing * (i + 1), w, magnitude});
    }
    return out;
}

DriftKind truth_for_extent(std::span<const streamgen::DriftSpec> drifts, std::size_t issued_at, std::size_t extent) {
    const std::size_t begin = issued_at > extent ? issued_at - extent : 0;
    for (const auto& d : drifts) {
        if (d.kind == DriftKind::normal) continue;
        const std::size_t end = d.position + std::max<std::size_t>(d.width, 1);
        if (d.position < issued_at && end > begin) return d.kind;
    }
    return DriftKind::normal;
}

void write_signal_log(std::ostream& out, std::span<const Signal> signals) {
    out << "timestamp,detector,state\n";
    for (const auto& s : signals) out << s.timestamp << ',' << s.detector << ',' << to_string(s.state) << '\n';
}

std::vector<std::string> method_names() {
    std::vector<std::string> out{std::string(kNoDetector)};
    for (const auto& d : detectors::detector_names()) out.push_back(d);
    out.emplace_back(kMetaDD);
    out.emplace_back(kMetaADD);
    return out;
}

MethodRun run_method(std::string_view method, std::span<const streamgen::Sample> stream,
                     const protonet::MetaDetector* detector, const active::ActiveConfig& active_cfg,
                     active::Oracle* oracle) {
    MethodRun out;
    out.method = std::string(method);
    baselearner::GaussianNaiveBayes learner;
    baselearner::PrequentialResult r;

    if (method == kNoDetector) {
        r = baselearner::prequential_run(stream, learner);
    } else if (is_meta(method)) {
        if (!detector) throw std::invalid_argument(out.method + " needs a meta-detector");
        const auto& counts = detector->prototypes.counts;
        if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; })) {
            throw std::runtime_error("untrained detector: no prototypes");
        }
        active::ActiveConfig cfg = active_cfg;
        if (method == kMetaDD) cfg.budget = 0;
        active::ActiveDriftMonitor monitor(*detector, cfg, nullptr, method == kMetaDD ? nullptr : oracle);
        r = baselearner::prequential_run(stream, learner, [&](std::size_t t, int e) {
            if (!monitor.push(e).event_start) return SignalLevel::in_control;
            out.signals.push_back({t, out.method, SignalLevel::drift});
            return SignalLevel::drift;
        });
        out.queries = monitor.budget_spent();
        out.labels_applied = monitor.labels_applied();
    } else {
        auto d = detectors::make_detector(method);
        SignalLevel previous = SignalLevel::in_control;
        r = baselearner::prequential_run(stream, learner, [&](std::size_t t, int e) {
            const SignalLevel s = d->update(e).state;
            if (s == SignalLevel::drift || (s == SignalLevel::warning && previous != SignalLevel::warning)) {
                out.signals.push_back({t, out.method, s});
            }
            previous = s;
            return s;
        });
    }
    out.accuracy = r.accuracy;
    out.drift_points = std::move(r.drift_points);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset ingestion

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    std::string out(s.substr(b, e - b + 1));
    if (out.size() >= 2 && (out.front() == '\'' || out.front() == '"') && out.back() == out.front()) {
        out = out.substr(1, out.size() - 2);
    }
    return out;
}

std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_number(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    if (!s.empty() && s.front() == '+') ++first;
    const auto [end, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool missing(const std::string& field) { return field.empty() || field == "?"; }

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

struct RawTable {
    std::size_t columns = 0;
    std::vector<std::vector<std::string>> rows;
    /// ARFF numeric attributes; empty for CSV.
    std::vector<bool> declared_numeric;
    std::size_t skipped = 0;
};

RawTable read_arff(std::istream& in) {
    RawTable t;
    std::string line;
    bool data = false;
    while (std::getline(in, line)) {
        const std::string s = trim(line);
        if (s.empty() || s.front() == '%') continue;
        if (!data) {
            const std::string head = lower(s.substr(0, s.find_first_of(" \t")));
            if (head == "@attribute") {
                const bool nominal = s.find('{') != std::string::npos;
                const std::string type = lower(trim(s.substr(s.find_last_of(" \t") + 1)));
                t.declared_numeric.push_back(!nominal && (type == "numeric" || type == "real" || type == "integer"));
            } else if (head == "@data") {
                data = true;
                t.columns = t.declared_numeric.size();
            }
            continue;
        }
        auto fields = split_fields(s);
        const bool bad = fields.size() != t.columns || std::any_of(fields.begin(), fields.end(), missing);
        if (bad) {
            ++t.skipped;
            continue;
        }
        t.rows.push_back(std::move(fields));
    }
    if (!data) throw std::runtime_error("ARFF file has no @data section");
    return t;
}

RawTable read_csv(std::istream& in) {
    RawTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto fields = split_fields(line);
        if (first) {
            first = false;
            t.columns = fields.size();
            const bool header = std::none_of(fields.begin(), fields.end(),
                                             [](const std::string& f) { return parse_number(f).has_value(); });
            if (header) continue;
        }
        if (fields.size() != t.columns || std::any_of(fields.begin(), fields.end(), missing)) {
            ++t.skipped;
            continue;
        }
        t.rows.push_back(std::move(fields));
    }
    return t;
}

}  // namespace

Dataset ingest_real_dataset(const std::string& path, const DatasetSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
    const std::string ext = lower(path.substr(path.find_last_of('.') == std::string::npos ? path.size()
                                                                                           : path.find_last_of('.')));
    RawTable t = ext == ".arff" ? read_arff(in) : read_csv(in);
    if (t.rows.empty()) throw std::runtime_error("dataset '" + path + "' has no data rows");
    if (t.columns < 2) throw std::runtime_error("dataset '" + path + "' needs at least one feature and a label");

    const std::size_t features = t.columns - 1;
    std::vector<bool> numeric(features, true);
    for (std::size_t c = 0; c < features; ++c) {
        if (!t.declared_numeric.empty()) {
            numeric[c] = t.declared_numeric[c];
            continue;
        }
        for (const auto& r : t.rows) {
            if (!parse_number(r[c])) {
                numeric[c] = false;
                break;
            }
        }
    }

    Dataset ds;
    const auto slash = path.find_last_of('/');
    ds.name = path.substr(slash == std::string::npos ? 0 : slash + 1);
    ds.name = ds.name.substr(0, ds.name.find_last_of('.'));
    ds.features = features;
    ds.skipped_rows = t.skipped;

    std::vector<std::unordered_map<std::string, double>> codes(features);
    std::unordered_map<std::string, int> label_codes;
    for (const auto& r : t.rows) {
        streamgen::Sample s;
        s.features.resize(features);
        bool ok = true;
        for (std::size_t c = 0; c < features && ok; ++c) {
            if (!numeric[c]) continue;
            const auto v = parse_number(r[c]);
            ok = v.has_value();
            if (ok) s.features[c] = *v;
        }
        if (!ok) {
            ++ds.skipped_rows;
            continue;
        }
        for (std::size_t c = 0; c < features; ++c) {
            if (numeric[c]) continue;
            auto [it, fresh] = codes[c].try_emplace(r[c], static_cast<double>(codes[c].size()));
            s.features[c] = it->second;
        }
        auto [it, fresh] = label_codes.try_emplace(r.back(), static_cast<int>(label_codes.size()));
        if (fresh) ds.label_names.push_back(r.back());
        s.label = it->second;
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw std::runtime_error("dataset '" + path + "' has no valid rows");
    if (schema.rows && ds.samples.size() != *schema.rows) {
        throw std::runtime_error("dataset '" + path + "' has " + std::to_string(ds.samples.size()) +
                                 " rows, schema expects " + std::to_string(*schema.rows));
    }
    if (schema.features && features != *schema.features) {
        throw std::runtime_error("dataset '" + path + "' has " + std::to_string(features) +
                                 " features, schema expects " + std::to_string(*schema.features));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Experiments

json ExperimentConfig::to_json(std::string_view id) const {
    json j{{"experiment", id}, {"seed", seed}};
    if (id == "exp1") {
        j["corpus"] = exp1.corpus.to_json();
        j["test_per_class"] = exp1.test_per_class;
        j["train"] = exp1.train.to_json();
    } else if (id == "exp2") {
        j["l"] = exp2.l;
        j["n"] = exp2.n;
        j["corpus"] = exp2.corpus.to_json();
        j["test_per_class"] = exp2.test_per_class;
        j["train"] = exp2.train.to_json();
    } else {
        json gens = json::array();
        for (auto g : exp3.generators) gens.push_back(streamgen::to_string(g));
        j["meta_corpus"] = exp3.corpus.to_json();
        j["train"] = exp3.train.to_json();
        j["active"] = exp3.active.to_json();
        j["noise"] = exp3.noise;
        if (!exp3.checkpoint.empty()) j["checkpoint"] = exp3.checkpoint;
        if (id == "exp3") {
            j["generators"] = gens;
            j["length"] = exp3.length;
            j["drifts"] = exp3.drifts;
            j["seeds"] = exp3.seeds;
            j["drift_width_share"] = exp3.drift_width_share;
            j["f1_tolerance"] = exp3.f1_tolerance;
        } else {
            j["datasets"] = exp4.datasets;
            j["standin"] = exp4.standin;
            j["standin_generator"] = streamgen::to_string(exp4.standin_stream.generator);
            j["standin_length"] = exp4.standin_stream.length;
            j["standin_drifts"] = exp4.standin_drifts;
            j["standin_width_share"] = exp4.standin_width_share;
            j["dn_l"] = exp4.dn_l;
            j["dn_n"] = exp4.dn_n;
        }
    }
    return j;
}

json ExperimentReport::to_json() const {
    return {{"experiment", id}, {"config", config}, {"results", results}, {"table", table}};
}

const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids = {"exp1", "exp2", "exp3", "exp4"};
    return ids;
}

streamgen::StreamConfig toy_stream_config(const ExperimentConfig& cfg, streamgen::Generator g, std::size_t seed) {
    const auto& c3 = cfg.exp3;
    return {.generator = g,
            .length = c3.length,
            .drifts = toy_drift_schedule(c3.length, c3.drifts, c3.drift_width_share),
            .seed = mix_seed(cfg.seed, 100 * static_cast<std::uint64_t>(g) + seed),
            .noise = c3.noise};
}

namespace {

json class_accuracy_json(const ClassAccuracy& a) {
    json j;
    for (DriftKind k : kAllDriftKinds) j[std::string(to_string(k))] = a.per_class[index_of(k)];
    j["macro"] = a.macro;
    return j;
}

ExperimentReport run_exp1(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    CorpusParams train_params = cfg.exp1.corpus;
    train_params.seed = mix_seed(cfg.seed, 1);
    CorpusParams test_params = train_params;
    test_params.per_class = cfg.exp1.test_per_class;
    test_params.seed = mix_seed(cfg.seed, 2);
    const auto train = build_meta_corpus(train_params);
    const auto test = build_meta_corpus(test_params);

    const std::array<protonet::Architecture, 2> archs = {protonet::Architecture::fcn, protonet::Architecture::rnn};
    std::array<ClassAccuracy, 2> acc;
    std::array<protonet::TrainingLog, 2> logs;
    parallel_for(archs.size(), cfg.threads, [&](std::size_t i) {
        protonet::TrainConfig tc = cfg.exp1.train;
        tc.arch = archs[i];
        tc.seed = mix_seed(cfg.seed, 3);
        const auto det = protonet::train_meta_detector(train, train_params.spec, tc, &logs[i]);
        acc[i] = evaluate_detector(det, test);
    });

    std::vector<std::vector<std::string>> rows{{"Structure", "sudden", "gradual", "incremental", "normal", "macro"}};
    for (std::size_t i = 0; i < archs.size(); ++i) {
        const std::string name(protonet::to_string(archs[i]));
        rep.results[name] = class_accuracy_json(acc[i]);
        rep.results[name]["best_episode"] = logs[i].best_episode;
        rep.results[name]["kept_restart"] = logs[i].kept_restart;
        std::vector<std::string> row{name == "fcn" ? "FCN" : "RNN"};
        for (double v : acc[i].per_class) row.push_back(fixed(v));
        row.push_back(fixed(acc[i].macro));
        rows.push_back(std::move(row));
    }
    rep.table = render_table(rows);
    return rep;
}

ExperimentReport run_exp2(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    const auto& ls = cfg.exp2.l;
    const auto& ns = cfg.exp2.n;
    if (ls.empty() || ns.empty()) throw std::invalid_argument("exp2 needs at least one l and one n");
    std::vector<double> grid(ls.size() * ns.size());
    parallel_for(grid.size(), cfg.threads, [&](std::size_t cell) {
        CorpusParams p = cfg.exp2.corpus;
        p.spec = {ns[cell % ns.size()], ls[cell / ns.size()]};
        p.seed = mix_seed(cfg.seed, 21);
        CorpusParams tp = p;
        tp.per_class = cfg.exp2.test_per_class;
        tp.seed = mix_seed(cfg.seed, 22);
        protonet::TrainConfig tc = cfg.exp2.train;
        tc.seed = mix_seed(cfg.seed, 23);
        const auto det = protonet::train_meta_detector(build_meta_corpus(p), p.spec, tc);
        grid[cell] = evaluate_detector(det, build_meta_corpus(tp)).macro;
    });

    std::vector<std::vector<std::string>> rows{{"l \\ n"}};
    for (auto n : ns) rows[0].push_back("n=" + std::to_string(n));
    json cells = json::array();
    for (std::size_t i = 0; i < ls.size(); ++i) {
        std::vector<std::string> row{"l=" + std::to_string(ls[i])};
        json line = json::array();
        for (std::size_t k = 0; k < ns.size(); ++k) {
            row.push_back(fixed(grid[i * ns.size() + k]));
            line.push_back(grid[i * ns.size() + k]);
        }
        rows.push_back(std::move(row));
        cells.push_back(std::move(line));
    }
    rep.results = {{"l", ls}, {"n", ns}, {"accuracy", cells}};
    rep.table = render_table(rows);
    return rep;
}

protonet::MetaDetector stream_detector(const ExperimentConfig& cfg, const metafeat::WindowSpec& spec,
                                       protonet::TrainingLog* log = nullptr) {
    CorpusParams p = cfg.exp3.corpus;
    p.spec = spec;
    p.seed = mix_seed(cfg.seed, 31);
    protonet::TrainConfig tc = cfg.exp3.train;
    tc.seed = mix_seed(cfg.seed, 32);
    return protonet::train_meta_detector(build_meta_corpus(p), spec, tc, log);
}

protonet::MetaDetector bank_detector(const ExperimentConfig& cfg, json& info) {
    if (!cfg.exp3.checkpoint.empty()) {
        auto det = protonet::MetaDetector::load(cfg.exp3.checkpoint);
        info = {{"checkpoint", cfg.exp3.checkpoint}, {"n", det.spec.n}, {"L", det.spec.L}};
        return det;
    }
    protonet::TrainingLog log;
    auto det = stream_detector(cfg, cfg.exp3.corpus.spec, &log);
    info = {{"n", det.spec.n}, {"L", det.spec.L}, {"best_episode", log.best_episode},
            {"kept_restart", log.kept_restart}};
    return det;
}

/// One stream evaluated under every method.
struct StreamCase {
    std::string name;
    std::vector<streamgen::Sample> samples;
    /// Empty when the truth is unknown.
    std::vector<streamgen::DriftSpec> drifts;
    bool has_truth = false;
};

std::vector<MethodRun> run_bank(const std::vector<StreamCase>& streams, const std::vector<std::string>& methods,
                                const protonet::MetaDetector& detector, const active::ActiveConfig& active_cfg,
                                std::size_t threads) {
    std::vector<MethodRun> runs(streams.size() * methods.size());
    parallel_for(runs.size(), threads, [&](std::size_t cell) {
        const auto& sc = streams[cell / methods.size()];
        const auto& method = methods[cell % methods.size()];
        const std::size_t extent = detector.spec.extent();
        active::GroundTruthOracle truth([&](const active::LabelQuery& q) {
            return truth_for_extent(sc.drifts, q.issued_at, extent);
        });
        active::ExternalOracle unanswered;
        active::Oracle* oracle = sc.has_truth ? static_cast<active::Oracle*>(&truth) : &unanswered;
        runs[cell] = run_method(method, sc.samples, &detector, active_cfg, oracle);
    });
    return runs;
}

std::vector<std::size_t> drift_positions(std::span<const streamgen::DriftSpec> drifts) {
    std::vector<std::size_t> out;
    for (const auto& d : drifts) {
        if (d.kind != DriftKind::normal) out.push_back(d.position);
    }
    return out;
}

ExperimentReport run_exp3(const ExperimentConfig& cfg) {
    const auto& c3 = cfg.exp3;
    if (c3.generators.empty()) throw std::invalid_argument("exp3 needs at least one generator");
    if (c3.seeds == 0) throw std::invalid_argument("exp3 needs at least one seed");
    ExperimentReport rep;
    json detector_info;
    const auto detector = bank_detector(cfg, detector_info);
    const double tolerance = c3.f1_tolerance > 0.0 ? c3.f1_tolerance : default_f1_tolerance(detector.spec);
    const auto schedule = toy_drift_schedule(c3.length, c3.drifts, c3.drift_width_share);
    const auto truth = drift_positions(schedule);

    std::vector<StreamCase> streams(c3.generators.size() * c3.seeds);
    parallel_for(streams.size(), cfg.threads, [&](std::size_t i) {
        const auto g = c3.generators[i / c3.seeds];
        const std::size_t s = i % c3.seeds + 1;
        streams[i] = {std::string(streamgen::to_string(g)) + "_seed" + std::to_string(s),
                      streamgen::generate_stream(toy_stream_config(cfg, g, s)), schedule, true};
    });
    const auto methods = method_names();
    const auto runs = run_bank(streams, methods, detector, c3.active, cfg.threads);

    json cells = json::object();
    json gains = json::object();
    std::vector<std::vector<std::string>> rows{{"Method"}};
    for (auto g : c3.generators) {
        const std::string gn(streamgen::to_string(g));
        rows[0].push_back(gn + " Acc");
        rows[0].push_back(gn + " F1");
    }
    for (const auto& m : methods) rows.push_back({m});

    for (std::size_t gi = 0; gi < c3.generators.size(); ++gi) {
        const std::string gn(streamgen::to_string(c3.generators[gi]));
        std::size_t gain = 0;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            std::vector<double> acc, f1, dn;
            for (std::size_t s = 0; s < c3.seeds; ++s) {
                const auto& run = runs[(gi * c3.seeds + s) * methods.size() + mi];
                acc.push_back(run.accuracy);
                dn.push_back(static_cast<double>(run.drift_points.size()));
                f1.push_back(drift_f1(truth, run.drift_points, tolerance).f1);
            }
            const bool none = methods[mi] == kNoDetector;
            json cell{{"accuracy", mean(acc)},
                      {"f1", none ? json(nullptr) : json(mean(f1))},
                      {"dn", mean(dn)},
                      {"per_seed", {{"accuracy", acc}, {"f1", none ? json(nullptr) : json(f1)}, {"dn", dn}}}};
            cells[gn][methods[mi]] = std::move(cell);
            rows[mi + 1].push_back(fixed(mean(acc)));
            rows[mi + 1].push_back(none ? "null" : fixed(mean(f1), 3));
        }
        for (std::size_t s = 0; s < c3.seeds; ++s) {
            const std::size_t base = (gi * c3.seeds + s) * methods.size();
            if (runs[base + methods.size() - 1].accuracy > runs[base + methods.size() - 2].accuracy) ++gain;
        }
        gains[gn] = gain;
    }
    for (std::size_t i = 0; i < streams.size(); ++i) {
        std::vector<Signal> log;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const auto& sig = runs[i * methods.size() + mi].signals;
            log.insert(log.end(), sig.begin(), sig.end());
        }
        std::stable_sort(log.begin(), log.end(),
                         [](const Signal& a, const Signal& b) { return a.timestamp < b.timestamp; });
        rep.signal_logs.emplace_back(streams[i].name, std::move(log));
    }

    rep.results = {{"methods", methods},
                   {"cells", cells},
                   {"active_gain_seeds", gains},
                   {"true_drifts", truth},
                   {"f1_tolerance", tolerance},
                   {"meta_detector", detector_info}};
    rep.table = render_table(rows);
    return rep;
}

ExperimentReport run_exp4(const ExperimentConfig& cfg) {
    const auto& c4 = cfg.exp4;
    if (c4.datasets.empty() && !c4.standin) throw std::runtime_error("exp4 needs dataset files");
    ExperimentReport rep;

    std::vector<StreamCase> streams;
    json dataset_info = json::array();
    for (const auto& path : c4.datasets) {
        auto ds = ingest_real_dataset(path);
        dataset_info.push_back({{"name", ds.name},
                                {"path", path},
                                {"samples", ds.samples.size()},
                                {"features", ds.features},
                                {"skipped_rows", ds.skipped_rows},
                                {"oracle", "unavailable"}});
        streams.push_back({ds.name, std::move(ds.samples), {}, false});
    }
    streamgen::StreamConfig standin = c4.standin_stream;
    if (c4.standin) {
        standin.drifts = toy_drift_schedule(standin.length, c4.standin_drifts, c4.standin_width_share);
        standin.seed = mix_seed(cfg.seed, 4000 + standin.seed);
        dataset_info.push_back({{"name", "elec-like"},
                                {"generator", streamgen::to_string(standin.generator)},
                                {"samples", standin.length},
                                {"features", streamgen::feature_count(standin.generator)},
                                {"true_drifts", drift_positions(standin.drifts)},
                                {"oracle", "ground-truth"}});
        streams.push_back({"elec-like", streamgen::generate_stream(standin), standin.drifts, true});
    }

    json detector_info;
    const auto detector = bank_detector(cfg, detector_info);
    const auto methods = method_names();
    const auto runs = run_bank(streams, methods, detector, cfg.exp3.active, cfg.threads);

    std::vector<std::vector<std::string>> rows{{"Method"}};
    for (const auto& s : streams) {
        rows[0].push_back(s.name + " Acc");
        rows[0].push_back(s.name + " DN");
    }
    json cells = json::object();
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<std::string> row{methods[mi]};
        for (std::size_t si = 0; si < streams.size(); ++si) {
            const auto& run = runs[si * methods.size() + mi];
            cells[streams[si].name][methods[mi]] = {{"accuracy", run.accuracy}, {"dn", run.drift_points.size()}};
            row.push_back(fixed(run.accuracy));
            row.push_back(std::to_string(run.drift_points.size()));
        }
        rows.push_back(std::move(row));
    }
    for (std::size_t si = 0; si < streams.size(); ++si) {
        std::vector<Signal> log;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const auto& sig = runs[si * methods.size() + mi].signals;
            log.insert(log.end(), sig.begin(), sig.end());
        }
        std::stable_sort(log.begin(), log.end(),
                         [](const Signal& a, const Signal& b) { return a.timestamp < b.timestamp; });
        rep.signal_logs.emplace_back(streams[si].name, std::move(log));
    }
    rep.table = render_table(rows);

    json trend = json::array();
    if (c4.standin && !c4.dn_n.empty()) {
        const auto& sc = streams.back();
        std::vector<std::size_t> dn(c4.dn_n.size());
        parallel_for(dn.size(), cfg.threads, [&](std::size_t i) {
            const auto det = stream_detector(cfg, {c4.dn_n[i], c4.dn_l}, nullptr);
            const std::size_t extent = det.spec.extent();
            active::GroundTruthOracle truth([&](const active::LabelQuery& q) {
                return truth_for_extent(sc.drifts, q.issued_at, extent);
            });
            dn[i] = run_method(kMetaADD, sc.samples, &det, cfg.exp3.active, &truth).drift_points.size();
        });
        std::vector<std::vector<std::string>> trows{{"Meta-ADD DN on elec-like", "l"}};
        for (auto n : c4.dn_n) trows[0].push_back("n=" + std::to_string(n));
        trows.push_back({"", std::to_string(c4.dn_l)});
        for (std::size_t i = 0; i < dn.size(); ++i) {
            trend.push_back({{"l", c4.dn_l}, {"n", c4.dn_n[i]}, {"dn", dn[i]}});
            trows.back().push_back(std::to_string(dn[i]));
        }
        rep.table += "\n" + render_table(trows);
    }
    rep.results = {{"methods", methods},
                   {"datasets", dataset_info},
                   {"cells", cells},
                   {"dn_trend", trend},
                   {"meta_detector", detector_info}};
    return rep;
}

}  // namespace

ExperimentReport run_experiment(std::string_view id, const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentReport rep;
    if (id == "exp1") {
        rep = run_exp1(cfg);
    } else if (id == "exp2") {
        rep = run_exp2(cfg);
    } else if (id == "exp3") {
        rep = run_exp3(cfg);
    } else if (id == "exp4") {
        rep = run_exp4(cfg);
    } else {
        throw std::invalid_argument("unknown experiment '" + std::string(id) + "'");
    }
    rep.id = std::string(id);
    rep.config = cfg.to_json(id);
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

}  // namespace metaadd::eval
