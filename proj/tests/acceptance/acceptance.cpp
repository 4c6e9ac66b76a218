#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaadd/active.hpp"
#include "metaadd/baselearner.hpp"
#include "metaadd/detectors.hpp"
#include "metaadd/evalharness.hpp"
#include "metaadd/metafeat.hpp"
#include "metaadd/protonet.hpp"
#include "metaadd/random.hpp"

namespace fs = std::filesystem;
using namespace metaadd;
using nlohmann::json;

namespace {

const std::string kADD(eval::kMetaADD);
const std::string kDD(eval::kMetaDD);

/// Float noise allowed when two means of equal per-seed values are compared.
constexpr double kTieEps = 1e-12;

struct Verdict {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const std::function<Verdict()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = check();
    } catch (const std::exception& e) {
        v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.pass) ++g_failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << name << "  " << v.detail << "  [" << std::fixed
              << std::setprecision(1) << secs << " s]" << std::endl;
}

std::string sci(double v) {
    std::ostringstream out;
    out << std::scientific << std::setprecision(2) << v;
    return out.str();
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

// ------------------------------------------------------------- experiments

Verdict exp1_quality() {
    eval::ExperimentConfig cfg;
    cfg.threads = 1;
    const auto rep = eval::run_experiment("exp1", cfg);
    const double fcn = rep.results["fcn"]["macro"];
    const double rnn = rep.results["rnn"]["macro"];
    const bool ok = fcn >= 0.85 && fcn >= rnn && rep.wall_clock_seconds <= 300.0;
    return {ok, "FCN macro " + fmt(fcn) + " (>= 0.85), RNN macro " + fmt(rnn) + " (<= FCN), runtime " +
                    fmt(rep.wall_clock_seconds, 1) + " s on one thread (<= 300)"};
}

Verdict exp2_window_trend() {
    eval::ExperimentConfig cfg;
    const auto rep = eval::run_experiment("exp2", cfg);
    const auto& ns = rep.results["n"];
    const auto& ls = rep.results["l"];
    const auto n1 = std::find(ns.begin(), ns.end(), 1) - ns.begin();
    const auto n50 = std::find(ns.begin(), ns.end(), 50) - ns.begin();
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const double a1 = rep.results["accuracy"][i][n1];
        const double a50 = rep.results["accuracy"][i][n50];
        ok = ok && a50 > a1;
        detail += "l=" + std::to_string(ls[i].get<std::size_t>()) + ": n50 " + fmt(a50) + " vs n1 " + fmt(a1) + "; ";
    }
    return {ok, detail};
}

/// exp3 on SEA and HYP is shared by the ordering and active-gain checks.
const eval::ExperimentReport& exp3_report() {
    static const eval::ExperimentReport rep = [] {
        eval::ExperimentConfig cfg;
        cfg.exp3.generators = {streamgen::Generator::sea, streamgen::Generator::hyperplane};
        return eval::run_experiment("exp3", cfg);
    }();
    return rep;
}

Verdict exp3_ordering() {
    const auto& rep = exp3_report();
    const auto& cells = rep.results["cells"];
    bool ok = true;
    std::string detail;
    for (const auto& [gen, row] : cells.items()) {
        const double add = row[kADD]["accuracy"];
        const double dd = row[kDD]["accuracy"];
        const double add_f1 = row[kADD]["f1"];
        double best_acc = -1.0;
        std::string best_name;
        double best_f1 = -1.0;
        std::string best_f1_name;
        for (const auto& name : detectors::detector_names()) {
            const double a = row[name]["accuracy"];
            const double f = row[name]["f1"];
            if (a > best_acc) best_acc = a, best_name = name;
            if (f > best_f1) best_f1 = f, best_f1_name = name;
        }
        const bool acc_ok = add >= dd && dd >= best_acc - 0.01;
        const bool f1_ok = add_f1 >= best_f1 - kTieEps;
        ok = ok && acc_ok && f1_ok;
        detail += gen + ": acc ADD " + fmt(add) + " DD " + fmt(dd) + " best " + best_name + " " + fmt(best_acc) +
                  (acc_ok ? "" : " (order broken)") + ", F1 ADD " + fmt(add_f1, 3) + " best " + best_f1_name + " " +
                  fmt(best_f1, 3) + (f1_ok ? "" : " (F1 below baseline)") + "; ";
    }
    return {ok, detail};
}

Verdict active_gain() {
    const auto& rep = exp3_report();
    bool ok = true;
    std::string detail;
    for (const auto& [gen, wins] : rep.results["active_gain_seeds"].items()) {
        const auto w = wins.get<std::size_t>();
        ok = ok && w >= 4;
        const auto& cell = rep.results["cells"][gen];
        detail += gen + ": ADD > DD on " + std::to_string(w) + "/5 seeds (ADD " +
                  fmt(cell[kADD]["accuracy"].get<double>()) + ", DD " +
                  fmt(cell[kDD]["accuracy"].get<double>()) + "); ";
    }
    return {ok, detail};
}

Verdict dn_trend() {
    eval::ExperimentConfig cfg;
    const auto rep = eval::run_experiment("exp4", cfg);
    std::size_t dn1 = 0, dn25 = 0;
    for (const auto& e : rep.results["dn_trend"]) {
        if (e["n"] == 1) dn1 = e["dn"];
        if (e["n"] == 25) dn25 = e["dn"];
    }
    return {dn25 <= dn1, "Meta-ADD DN at l=50 on the elec-like stream: n=25 " + std::to_string(dn25) + ", n=1 " +
                             std::to_string(dn1)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Verdict determinism() {
    const auto root = fs::temp_directory_path() / "metaadd_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::string> reports;
    for (const char* run : {"a", "b"}) {
        const auto dir = root / run;
        const std::string cmd = std::string(METAADD_BIN) + " bench exp1 --seed 7 --out-dir " + dir.string() +
                                " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "bench exp1 --seed 7 failed"};
        reports.push_back(slurp(dir / "exp1_report.json"));
    }
    const bool same = !reports[0].empty() && reports[0] == reports[1];
    return {same, same ? "two bench exp1 --seed 7 reports are byte-identical (" + std::to_string(reports[0].size()) +
                             " bytes)"
                       : "reports differ"};
}

// --------------------------------------------------------------- numerics

Verdict gradient_check() {
    Rng rng(20240);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t L = 4 + rng.below(6);
        auto net = inst % 2 == 0 ? protonet::EmbeddingNet::fcn({L, 3 + rng.below(5), 3 + rng.below(3)})
                                 : protonet::EmbeddingNet::rnn(L, 3 + rng.below(4), 3 + rng.below(3));
        net.init(rng);
        for (auto& p : net.params()) p += rng.uniform(-0.1, 0.1);
        std::array<std::vector<std::vector<double>>, kNumDriftKinds> sup, qry;
        for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
            for (int i = 0; i < 2; ++i) {
                sup[k].emplace_back(L);
                for (auto& v : sup[k].back()) v = rng.uniform(-1, 1);
            }
            for (int i = 0; i < 3; ++i) {
                qry[k].emplace_back(L);
                for (auto& v : qry[k].back()) v = rng.uniform(-1, 1);
            }
        }
        protonet::Episode ep;
        for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
            for (const auto& v : sup[k]) ep.support[k].emplace_back(v);
            for (const auto& v : qry[k]) ep.query[k].emplace_back(v);
        }
        const auto analytic = protonet::episode_loss_and_grad(net, ep).grad;
        const double h = 1e-5;
        for (std::size_t i = 0; i < net.parameter_count(); ++i) {
            const double keep = net.params()[i];
            net.params()[i] = keep + h;
            const double up = protonet::episode_loss_and_grad(net, ep).loss;
            net.params()[i] = keep - h;
            const double down = protonet::episode_loss_and_grad(net, ep).loss;
            net.params()[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
            worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
        }
    }
    return {worst < 1e-4, "max relative error " + sci(worst)};
}

Verdict normalization_check() {
    Rng rng(77);
    double worst = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        auto net = protonet::EmbeddingNet::fcn({6, 8, 4});
        net.init(rng);
        protonet::PrototypeSet protos;
        for (auto& c : protos.centers) {
            c.resize(4);
            for (auto& v : c) v = rng.uniform(-2, 2);
        }
        std::vector<double> x(6);
        for (auto& v : x) v = rng.uniform(-1, 1);
        const auto p = protonet::classify(net, protos, x);
        double sum = 0.0;
        for (double v : p) sum += v;
        worst = std::max(worst, std::fabs(sum - 1.0));
    }
    return {worst < 1e-12, "max |sum p - 1| " + sci(worst)};
}

Verdict entropy_check() {
    Rng rng(5);
    const double hi = std::log(4.0);
    double lo_seen = hi, hi_seen = 0.0;
    bool ok = true;
    for (int i = 0; i < 10000; ++i) {
        protonet::Probabilities p{};
        double sum = 0.0;
        for (auto& v : p) sum += (v = -std::log(1.0 - rng.uniform()));
        for (auto& v : p) v /= sum;
        const double h = active::entropy(p);
        ok = ok && h >= 0.0 && h <= hi + 1e-12;
        lo_seen = std::min(lo_seen, h);
        hi_seen = std::max(hi_seen, h);
    }
    const protonet::Probabilities corner{1.0, 0.0, 0.0, 0.0}, flat{0.25, 0.25, 0.25, 0.25};
    ok = ok && active::entropy(corner) == 0.0 && std::fabs(active::entropy(flat) - hi) < 1e-15;
    return {ok, "entropy range over 10^4 simplex points [" + fmt(lo_seen) + ", " + fmt(hi_seen) + "] within [0, " +
                    fmt(hi) + "]"};
}

Verdict nb_moments_check() {
    Rng rng(31);
    baselearner::GaussianNaiveBayes nb;
    std::vector<streamgen::Sample> data;
    for (int i = 0; i < 5000; ++i) {
        streamgen::Sample s;
        s.label = static_cast<int>(rng.below(3));
        for (int f = 0; f < 4; ++f) s.features.push_back(1000.0 + rng.normal() * (1 + f) + s.label);
        nb.partial_fit(s);
        data.push_back(std::move(s));
    }
    double worst = 0.0;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t f = 0; f < 4; ++f) {
            long double sum = 0, n = 0;
            for (const auto& s : data) {
                if (s.label == c) sum += s.features[f], n += 1;
            }
            const long double mean = sum / n;
            long double ss = 0;
            for (const auto& s : data) {
                if (s.label == c) ss += (s.features[f] - mean) * (s.features[f] - mean);
            }
            const double var = static_cast<double>(ss / n);
            worst = std::max(worst, std::fabs(nb.mean(c)[f] - static_cast<double>(mean)) / std::fabs(double(mean)));
            worst = std::max(worst, std::fabs(nb.variance(c, f) - var) / var);
        }
    }
    return {worst < 1e-9, "max relative error vs two-pass batch " + sci(worst)};
}

Verdict streaming_check() {
    Rng rng(404);
    std::size_t emissions = 0;
    for (int r = 0; r < 100; ++r) {
        const metafeat::WindowSpec spec{1 + rng.below(10), 1 + rng.below(15), rng.bernoulli(0.3)};
        const double p = rng.uniform();
        std::vector<int> trace(spec.extent() + rng.below(400));
        for (auto& v : trace) v = rng.bernoulli(p) ? 1 : 0;
        metafeat::StreamingView view(spec);
        for (std::size_t i = 0; i < trace.size(); ++i) {
            if (auto s = view.push(trace[i])) {
                ++emissions;
                const auto batch = metafeat::make_meta_sample(std::span<const int>(trace).first(i + 1), spec);
                if (s->gaps != batch.gaps) return {false, "mismatch on trace " + std::to_string(r)};
            }
        }
    }
    return {true, "100 traces, " + std::to_string(emissions) + " emissions identical"};
}

Verdict numerical_suite() {
    bool ok = true;
    std::string detail;
    for (const auto& [name, fn] : std::vector<std::pair<std::string, std::function<Verdict()>>>{
             {"gradient", gradient_check},
             {"normalization", normalization_check},
             {"entropy", entropy_check},
             {"nb-moments", nb_moments_check},
             {"streaming", streaming_check}}) {
        const auto v = fn();
        ok = ok && v.pass;
        detail += name + (v.pass ? " ok (" : " FAILED (") + v.detail + "); ";
    }
    return {ok, detail};
}

// -------------------------------------------------------------- detectors

Verdict detector_sanity() {
    bool ok = true;
    std::string detail;
    std::vector<int> step(5000, 0);
    step.insert(step.end(), 500, 1);
    for (const char* name : {"DDM", "PageHinkley"}) {
        auto d = detectors::make_detector(name);
        std::optional<std::size_t> at;
        for (std::size_t i = 0; i < step.size() && !at; ++i) {
            if (d->update(step[i]).state == SignalLevel::drift) at = i;
        }
        const bool fired = at && *at >= 5000 && *at - 5000 <= 50;
        ok = ok && fired;
        detail += std::string(name) + " step delay " + (at ? std::to_string(static_cast<long>(*at) - 5000) : "none") +
                  "; ";
    }
    for (const auto& name : detectors::detector_names()) {
        std::size_t alarms = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto d = detectors::make_detector(name);
            Rng rng(mix_seed(9000, seed));
            for (int i = 0; i < 10000; ++i) {
                alarms += d->update(rng.bernoulli(0.2) ? 1 : 0).state == SignalLevel::drift;
            }
        }
        ok = ok && alarms <= 5;
        detail += name + " " + std::to_string(alarms) + " false alarms; ";
    }
    return {ok, detail};
}

}  // namespace

int main() {
    std::cout << "acceptance criteria" << std::endl;
    report("meta-detector quality (exp1)", exp1_quality);
    report("window-size trend (exp2)", exp2_window_trend);
    report("benchmark ordering (exp3, sea + hyp)", exp3_ordering);
    report("active-learning gain (exp3, sea + hyp)", active_gain);
    report("numerical suite", numerical_suite);
    report("detector sanity", detector_sanity);
    report("determinism (bench exp1 --seed 7)", determinism);
    report("DN trend (exp4 elec-like)", dn_trend);
    std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed")
              << std::endl;
    return g_failures == 0 ? 0 : 1;
}
