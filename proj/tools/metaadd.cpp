#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "metaadd/active.hpp"
#include "metaadd/baselearner.hpp"
#include "metaadd/evalharness.hpp"
#include "metaadd/label_service.hpp"
#include "metaadd/metafeat.hpp"
#include "metaadd/protonet.hpp"
#include "metaadd/streamgen.hpp"

#ifndef METAADD_VERSION
#define METAADD_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metaadd;

namespace {

/// Bad combination of otherwise well-formed flags; exits with 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted = true; }

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

struct Common {
    std::uint64_t seed = 1;
    std::string out_dir;
    std::size_t threads = 0;
};

/// Written next to the outputs of every command.
class RunManifest {
  public:
    RunManifest(std::string command, const Common& common, std::vector<std::string> argv)
        : command_(std::move(command)), common_(common), argv_(std::move(argv)), started_(utc_now()),
          clock_(std::chrono::steady_clock::now()) {}

    void input(const std::string& path) { inputs_.push_back(path); }
    std::string output(const std::string& name) {
        const auto p = (fs::path(common_.out_dir) / name).string();
        outputs_.push_back(p);
        return p;
    }
    json config = json::object();
    json summary = json::object();
    std::string options;

    void write() {
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_).count();
        const json j = {{"command", command_},
                        {"argv", argv_},
                        {"options", options},
                        {"config", config},
                        {"seed", common_.seed},
                        {"out_dir", common_.out_dir},
                        {"threads", common_.threads},
                        {"inputs", inputs_},
                        {"outputs", outputs_},
                        {"summary", summary},
                        {"version", METAADD_VERSION},
                        {"started_at", started_},
                        {"finished_at", utc_now()},
                        {"wall_clock_seconds", seconds}};
        const auto path = fs::path(common_.out_dir) / (command_ + "_manifest.json");
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
        out << j.dump(2) << '\n';
    }

  private:
    std::string command_;
    Common common_;
    std::vector<std::string> argv_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
    std::string started_;
    std::chrono::steady_clock::time_point clock_;
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path);
}

json read_meta_line(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!line.starts_with("# meta:")) return nullptr;
        auto j = json::parse(line.substr(7), nullptr, false);
        return j.is_discarded() ? json(nullptr) : j;
    }
    return nullptr;
}

/// A stream CSV has commas on its first data line; an error trace does not.
bool looks_like_stream(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        return line.find(',') != std::string::npos;
    }
    throw std::runtime_error(path + " has no data");
}

// ------------------------------------------------------------------- gen

struct GenArgs {
    std::string kind;
    std::string output;
    std::size_t per_class = 50;
    std::optional<std::size_t> l;
    std::optional<std::size_t> n;
    std::string placement = "centered";
    std::string generator = "sea";
    std::size_t length = 10000;
    std::size_t drifts = 3;
    double width_share = 0.05;
    double noise = 0.1;
    double magnitude = 1.0;
    std::string trace_kind = "sudden";
    double base_error = 0.1;
    double drift_error = 0.5;
    std::optional<std::size_t> position;
    std::optional<std::size_t> width;
};

int cmd_gen(const GenArgs& a, RunManifest& m, const Common& c) {
    if (a.kind == "meta-corpus") {
        if (!a.l || !a.n) throw UsageError("--kind meta-corpus needs --l and --n");
        eval::CorpusParams p;
        p.per_class = a.per_class;
        p.spec = {*a.n, *a.l};
        p.placement = eval::parse_placement(a.placement);
        p.seed = c.seed;
        p.validate();
        const auto corpus = eval::build_meta_corpus(p);
        const auto path = m.output(a.output.empty() ? "corpus.csv" : a.output);
        metafeat::write_corpus_file(path, corpus, p.to_json().dump());
        m.config = p.to_json();
        m.summary = {{"samples", corpus.size()}};
        std::cout << "wrote " << corpus.size() << " meta-samples to " << path << '\n';
        return 0;
    }
    if (a.kind == "toy") {
        streamgen::StreamConfig cfg;
        cfg.generator = streamgen::parse_generator(a.generator);
        if (cfg.generator == streamgen::Generator::error_trace) throw UsageError("toy streams need a feature generator");
        cfg.length = a.length;
        cfg.drifts = eval::toy_drift_schedule(a.length, a.drifts, a.width_share, a.magnitude);
        cfg.seed = c.seed;
        cfg.noise = a.noise;
        cfg.validate();
        const auto stream = streamgen::generate_stream(cfg);
        const json meta = {{"generator", std::string(streamgen::to_string(cfg.generator))},
                           {"length", cfg.length},
                           {"seed", cfg.seed},
                           {"noise", cfg.noise},
                           {"drifts", streamgen::drifts_to_json(cfg.drifts)}};
        const auto path = m.output(a.output.empty() ? "stream.csv" : a.output);
        streamgen::write_stream_file(path, stream, meta);
        m.config = meta;
        m.summary = {{"samples", stream.size()}};
        std::cout << "wrote " << stream.size() << " samples to " << path << '\n';
        return 0;
    }
    // trace
    streamgen::TraceParams tp;
    tp.kind = parse_drift_kind(a.trace_kind);
    tp.length = a.length;
    tp.base_error = a.base_error;
    tp.drift_error = a.drift_error;
    tp.position = a.position.value_or(a.length / 2);
    const bool has_width = tp.kind == DriftKind::gradual || tp.kind == DriftKind::incremental;
    tp.width = has_width ? a.width.value_or(a.length / 10) : 0;
    tp.seed = c.seed;
    const auto trace = streamgen::simulate_error_trace(tp);
    std::vector<streamgen::DriftSpec> truth;
    if (tp.kind != DriftKind::normal) truth.push_back({tp.kind, tp.position, tp.width, 1.0});
    const json meta = {{"kind", a.trace_kind},
                       {"length", tp.length},
                       {"base_error", tp.base_error},
                       {"drift_error", tp.drift_error},
                       {"seed", tp.seed},
                       {"drifts", streamgen::drifts_to_json(truth)}};
    const auto path = m.output(a.output.empty() ? "trace.txt" : a.output);
    streamgen::write_error_trace_file(path, trace, meta);
    m.config = meta;
    m.summary = {{"length", trace.size()}};
    std::cout << "wrote " << trace.size() << " errors to " << path << '\n';
    return 0;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
    std::string corpus;
    std::string arch = "fcn";
    std::size_t ns = 5;
    std::size_t nq = 15;
    std::size_t episodes = 2000;
    std::size_t restarts = 3;
    std::optional<std::size_t> n;
    std::string output = "checkpoint.json";
};

int cmd_train(const TrainArgs& a, RunManifest& m, const Common& c) {
    m.input(a.corpus);
    const auto corpus = metafeat::read_corpus_file(a.corpus);
    if (corpus.empty()) throw std::runtime_error(a.corpus + " holds no samples");
    const json meta = read_meta_line(a.corpus);
    metafeat::WindowSpec spec;
    spec.L = corpus.front().gaps.size();
    if (a.n) {
        spec.n = *a.n;
    } else if (meta.is_object() && meta.contains("n")) {
        spec.n = meta["n"].get<std::size_t>();
    } else {
        throw UsageError("corpus has no window size in its meta line; pass --n");
    }
    if (meta.is_object() && meta.value("sign_agnostic", false)) spec.sign_agnostic = true;

    protonet::TrainConfig cfg;
    cfg.arch = protonet::parse_architecture(a.arch);
    cfg.episode = {a.ns, a.nq};
    cfg.episodes = a.episodes;
    cfg.restarts = a.restarts;
    cfg.seed = c.seed;
    protonet::TrainingLog log;
    auto det = protonet::train_meta_detector(corpus, spec, cfg, &log);

    const auto ckpt = m.output(a.output);
    det.save(ckpt);
    std::ostringstream curve;
    curve << "episode,train_loss,validation_loss\n" << std::setprecision(17);
    std::size_t v = 0;
    for (std::size_t e = 0; e < log.episode_loss.size(); ++e) {
        curve << e + 1 << ',' << log.episode_loss[e] << ',';
        if (v < log.validation_loss.size() && log.validation_loss[v].first == e + 1) {
            curve << log.validation_loss[v++].second;
        }
        curve << '\n';
    }
    const auto loss_path = m.output(fs::path(a.output).stem().string() + "_loss.csv");
    write_text(loss_path, curve.str());

    m.config = cfg.to_json();
    m.config["n"] = spec.n;
    m.config["L"] = spec.L;
    m.summary = {{"episodes_run", log.episode_loss.size()},
                 {"best_episode", log.best_episode},
                 {"stopped_early", log.stopped_early},
                 {"kept_restart", log.kept_restart}};
    std::cout << "trained " << protonet::to_string(cfg.arch) << " on " << corpus.size() << " samples, "
              << log.episode_loss.size() << " episodes; checkpoint " << ckpt << '\n';
    return 0;
}

// ---------------------------------------------------------------- detect

struct DetectArgs {
    std::string checkpoint;
    std::string input;
    std::string oracle = "none";
    std::size_t budget = 20;
    double theta = 0.5 * std::log(4.0);
    std::size_t expiry = 10;
    std::string update_mode = "prototype_mean";
    int port = 8787;
    std::string host = "127.0.0.1";
    double pace_ms = 0.0;
    /// Seconds to keep serving after the input ends; negative waits for Ctrl-C.
    double linger = 0.0;
};

int cmd_detect(const DetectArgs& a, RunManifest& m) {
    m.input(a.checkpoint);
    m.input(a.input);
    if (!fs::exists(a.checkpoint)) throw std::runtime_error("checkpoint " + a.checkpoint + " does not exist");
    const auto det = protonet::MetaDetector::load(a.checkpoint);

    const bool is_stream = looks_like_stream(a.input);
    std::vector<streamgen::Sample> stream;
    ErrorTrace trace;
    json meta;
    if (is_stream) {
        auto f = streamgen::read_stream_file(a.input);
        stream = std::move(f.samples);
        meta = std::move(f.meta);
    } else {
        auto f = streamgen::read_error_trace_file(a.input);
        trace = std::move(f.errors);
        meta = std::move(f.meta);
    }

    active::ActiveConfig cfg;
    cfg.entropy_threshold = a.theta;
    cfg.budget = a.oracle == "none" ? 0 : a.budget;
    cfg.expiry = a.expiry;
    cfg.update_mode = active::parse_update_mode(a.update_mode);
    cfg.validate();

    auto queue = std::make_shared<active::QueryQueue>();
    std::vector<streamgen::DriftSpec> drifts;
    if (meta.is_object() && meta.contains("drifts")) drifts = streamgen::drifts_from_json(meta["drifts"]);
    const std::size_t extent = det.spec.extent();
    active::GroundTruthOracle truth(
        [&](const active::LabelQuery& q) { return eval::truth_for_extent(drifts, q.issued_at, extent); });
    active::ExternalOracle external;
    active::Oracle* oracle = nullptr;
    std::unique_ptr<service::LabelService> svc;
    if (a.oracle == "ground-truth") {
        if (!meta.is_object() || !meta.contains("drifts")) {
            throw std::runtime_error(a.input + " carries no ground-truth drifts for --oracle ground-truth");
        }
        oracle = &truth;
    } else if (a.oracle == "service") {
        svc = std::make_unique<service::LabelService>(queue, service::LabelService::Config{a.host, a.port});
        const int port = svc->start();
        std::cout << "label service on http://" << a.host << ':' << port << "/api" << std::endl;
        oracle = &external;
    }

    active::ActiveDriftMonitor monitor(det, cfg, queue, oracle);
    const auto pace = std::chrono::duration<double, std::milli>(a.pace_ms);
    auto step = [&](int e) {
        const auto s = monitor.push(e);
        if (s.emitted && a.pace_ms > 0) std::this_thread::sleep_for(pace);
        return s;
    };
    std::optional<double> accuracy;
    if (is_stream) {
        baselearner::GaussianNaiveBayes learner;
        const auto r = baselearner::prequential_run(stream, learner, [&](std::size_t, int e) {
            return step(e).event_start ? SignalLevel::drift : SignalLevel::in_control;
        });
        accuracy = r.accuracy;
    } else {
        for (int e : trace) step(e);
    }

    if (svc && a.linger != 0.0) {
        std::signal(SIGINT, on_sigint);
        std::cout << "input finished; serving " << (a.linger < 0 ? "until Ctrl-C" : "for a while") << std::endl;
        const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(a.linger);
        while (!g_interrupted && (a.linger < 0 || std::chrono::steady_clock::now() < until)) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
    }
    if (svc) svc->stop();

    const auto queries = queue->list();
    {
        std::ofstream out(m.output("alarms.csv"));
        active::write_alarm_log(out, monitor.alarms());
    }
    {
        std::ofstream out(m.output("queries.jsonl"));
        active::write_query_log(out, queries);
    }
    m.config = cfg.to_json();
    m.config["oracle"] = a.oracle;
    m.config["input_kind"] = is_stream ? "stream" : "trace";
    m.summary = {{"alarms", monitor.alarms().size()},
                 {"events", monitor.event_starts().size()},
                 {"queries", queries.size()},
                 {"labels_applied", monitor.labels_applied()},
                 {"emissions", monitor.emissions()}};
    if (accuracy) m.summary["accuracy"] = *accuracy;
    std::cout << monitor.alarms().size() << " alarms in " << monitor.event_starts().size() << " events, "
              << queries.size() << " queries, " << monitor.labels_applied() << " labels applied";
    if (accuracy) std::cout << ", accuracy " << std::fixed << std::setprecision(4) << *accuracy;
    std::cout << '\n';
    return 0;
}

// ----------------------------------------------------------------- bench

struct BenchArgs {
    std::string id;
    std::vector<std::string> generators;
    std::vector<std::string> datasets;
    std::optional<std::size_t> seeds;
    std::optional<std::size_t> length;
    std::string checkpoint;
    bool no_standin = false;
};

int cmd_bench(const BenchArgs& a, RunManifest& m, const Common& c) {
    eval::ExperimentConfig cfg;
    cfg.seed = c.seed;
    cfg.threads = c.threads;
    if (!a.generators.empty()) {
        cfg.exp3.generators.clear();
        for (const auto& g : a.generators) cfg.exp3.generators.push_back(streamgen::parse_generator(g));
    }
    if (a.seeds) cfg.exp3.seeds = *a.seeds;
    if (a.length) cfg.exp3.length = *a.length;
    cfg.exp3.checkpoint = a.checkpoint;
    cfg.exp4.datasets = a.datasets;
    cfg.exp4.standin = !a.no_standin;
    for (const auto& d : a.datasets) m.input(d);
    if (!a.checkpoint.empty()) m.input(a.checkpoint);

    const auto report = eval::run_experiment(a.id, cfg);
    write_text(m.output(a.id + "_report.json"), report.to_json().dump(2) + "\n");
    write_text(m.output(a.id + "_table.txt"), report.table);
    if (!report.signal_logs.empty()) {
        fs::create_directories(fs::path(c.out_dir) / (a.id + "_signals"));
        for (const auto& [name, signals] : report.signal_logs) {
            std::ofstream out(m.output(a.id + "_signals/" + name + ".csv"));
            eval::write_signal_log(out, signals);
        }
    }
    m.config = report.config;
    m.summary = {{"wall_clock_seconds", report.wall_clock_seconds}};
    std::cout << report.table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta-learning drift detection: corpus generation, training, detection, benchmarks"};
    app.set_version_flag("--version", METAADD_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML-style key=value file; flags override it");

    Common common;
    if (const char* env = std::getenv("METAADD_OUT_DIR")) common.out_dir = env;
    if (common.out_dir.empty()) common.out_dir = ".";
    app.add_option("--seed", common.seed, "Master seed")->capture_default_str();
    app.add_option("--out-dir", common.out_dir, "Output directory (default $METAADD_OUT_DIR or .)")
        ->capture_default_str();
    app.add_option("--threads", common.threads, "Worker threads, 0 = all cores")->capture_default_str();

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a meta-corpus, a toy stream or an error trace");
    g->add_option("--kind", gen.kind)->required()->check(CLI::IsMember({"meta-corpus", "toy", "trace"}));
    g->add_option("--output", gen.output, "File name inside the output directory");
    g->add_option("--per-class", gen.per_class)->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--l", gen.l, "Number of gaps L")->check(CLI::PositiveNumber);
    g->add_option("--n", gen.n, "Window size n")->check(CLI::PositiveNumber);
    g->add_option("--placement", gen.placement)->capture_default_str()->check(CLI::IsMember({"centered", "recent"}));
    g->add_option("--generator", gen.generator)->capture_default_str();
    g->add_option("--length", gen.length)->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--drifts", gen.drifts)->capture_default_str();
    g->add_option("--width-share", gen.width_share)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    g->add_option("--noise", gen.noise)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    g->add_option("--magnitude", gen.magnitude)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    g->add_option("--trace-kind", gen.trace_kind)
        ->capture_default_str()
        ->check(CLI::IsMember({"sudden", "gradual", "incremental", "normal"}));
    g->add_option("--base-error", gen.base_error)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    g->add_option("--drift-error", gen.drift_error)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    g->add_option("--position", gen.position, "Trace drift onset (default length / 2)");
    g->add_option("--width", gen.width, "Trace transition width (default length / 10)");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Episodic training of the meta-detector");
    t->add_option("--corpus", train.corpus)->required()->check(CLI::ExistingFile);
    t->add_option("--arch", train.arch)->capture_default_str()->check(CLI::IsMember({"fcn", "rnn"}));
    t->add_option("--ns", train.ns, "Support samples per class")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--nq", train.nq, "Query samples per class")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--episodes", train.episodes)->capture_default_str();
    t->add_option("--restarts", train.restarts)->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--n", train.n, "Window size, when the corpus does not record it");
    t->add_option("--output", train.output)->capture_default_str();

    DetectArgs detect;
    auto add_detect_options = [&](CLI::App* d) {
        d->add_option("--checkpoint", detect.checkpoint)->required();
        d->add_option("--input", detect.input, "Error trace or stream CSV")->required()->check(CLI::ExistingFile);
        d->add_option("--budget", detect.budget)->capture_default_str();
        d->add_option("--theta", detect.theta, "Entropy threshold")->capture_default_str();
        d->add_option("--expiry", detect.expiry, "Emissions before an unanswered query expires")
            ->capture_default_str();
        d->add_option("--update-mode", detect.update_mode)
            ->capture_default_str()
            ->check(CLI::IsMember({"prototype_mean", "prototype_mean_plus_sgd"}));
        d->add_option("--port", detect.port)->capture_default_str();
        d->add_option("--host", detect.host)->capture_default_str();
        d->add_option("--pace-ms", detect.pace_ms, "Delay after each emission")->capture_default_str();
    };
    auto* d = app.add_subcommand("detect", "Stream a trace or stream through the meta-detector");
    add_detect_options(d);
    d->add_option("--oracle", detect.oracle)
        ->capture_default_str()
        ->check(CLI::IsMember({"ground-truth", "service", "none"}));
    d->add_option("--linger", detect.linger, "Seconds to keep the label service up afterwards, <0 until Ctrl-C")
        ->capture_default_str();
    auto* s = app.add_subcommand("serve", "detect with the HTTP label service as oracle, serving until Ctrl-C");
    add_detect_options(s);

    BenchArgs bench;
    auto* b = app.add_subcommand("bench", "Run an experiment and write its report");
    b->add_option("id", bench.id)->required()->check(CLI::IsMember(eval::experiment_ids()));
    b->add_option("--generators", bench.generators, "exp3 generators, comma separated")->delimiter(',');
    b->add_option("--dataset", bench.datasets, "exp4 dataset file (CSV or ARFF), repeatable")
        ->check(CLI::ExistingFile);
    b->add_option("--seeds", bench.seeds, "exp3 stream seeds")->check(CLI::PositiveNumber);
    b->add_option("--length", bench.length, "exp3 stream length")->check(CLI::PositiveNumber);
    b->add_option("--checkpoint", bench.checkpoint, "exp3 meta-detector instead of training one")
        ->check(CLI::ExistingFile);
    b->add_flag("--no-standin", bench.no_standin, "exp4 without the synthetic stand-in");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    auto* cmd = app.get_subcommands().front();
    std::vector<std::string> args(argv, argv + argc);
    try {
        fs::create_directories(common.out_dir);
        RunManifest manifest(cmd->get_name(), common, args);
        manifest.options = app.config_to_str(false, false);
        int rc = 0;
        if (cmd == g) {
            rc = cmd_gen(gen, manifest, common);
        } else if (cmd == t) {
            rc = cmd_train(train, manifest, common);
        } else if (cmd == d) {
            rc = cmd_detect(detect, manifest);
        } else if (cmd == s) {
            detect.oracle = "service";
            detect.linger = -1.0;
            rc = cmd_detect(detect, manifest);
        } else {
            rc = cmd_bench(bench, manifest, common);
        }
        manifest.write();
        return rc;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n' << cmd->help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
