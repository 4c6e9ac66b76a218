#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "metaadd/detectors.hpp"
#include "metaadd/random.hpp"

using namespace metaadd;
using namespace metaadd::detectors;

namespace {

std::vector<int> step_trace(std::size_t zeros, std::size_t ones) {
    std::vector<int> t(zeros, 0);
    t.insert(t.end(), ones, 1);
    return t;
}

std::optional<std::size_t> first_drift(DriftDetector& d, const std::vector<int>& trace) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (d.update(trace[i]).state == SignalLevel::drift) return i;
    }
    return std::nullopt;
}

// Recomputes the DDM rule from scratch at every step: p and s from the
// prefix, and the minimum of p + s over all eligible prefixes.
std::optional<std::size_t> ddm_reference(const std::vector<int>& trace, std::size_t warmup, double level) {
    double best_ps = std::numeric_limits<double>::infinity();
    double best_p = 0.0, best_s = 0.0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const double n = static_cast<double>(i + 1);
        double ones = 0.0;
        for (std::size_t j = 0; j <= i; ++j) ones += trace[j];
        const double p = ones / n;
        const double s = std::sqrt(p * (1 - p) / n);
        if (i + 1 < warmup) continue;
        if (p + s <= best_ps) {
            best_ps = p + s;
            best_p = p;
            best_s = s;
        }
        if (p + s > best_p + level * best_s) return i;
    }
    return std::nullopt;
}

std::vector<int> bernoulli_trace(double p, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> t(n);
    for (auto& v : t) v = rng.bernoulli(p) ? 1 : 0;
    return t;
}

}  // namespace

TEST_CASE("DDM stays in control on an error-free stream", "[detectors]") {
    Ddm ddm;
    for (int i = 0; i < 10000; ++i) REQUIRE(ddm.update(0).state == SignalLevel::in_control);
}

TEST_CASE("DDM matches a brute-force recomputation of its rule", "[detectors][oracle]") {
    const auto trace = step_trace(1200, 100);
    Ddm ddm;
    const auto got = first_drift(ddm, trace);
    const auto want = ddm_reference(trace, Ddm::Config{}.min_instances, 3.0);
    REQUIRE(want.has_value());
    REQUIRE(got == want);
    CHECK(*got >= 1200);
    CHECK(*got - 1200 <= 50);

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto noisy = bernoulli_trace(0.1, 1200, seed);
        const auto tail = bernoulli_trace(0.5, 400, seed + 100);
        noisy.insert(noisy.end(), tail.begin(), tail.end());
        Ddm fresh;
        CHECK(first_drift(fresh, noisy) == ddm_reference(noisy, Ddm::Config{}.min_instances, 3.0));
    }
}

TEST_CASE("Page-Hinkley fires shortly after an upward step", "[detectors]") {
    const auto trace = step_trace(5000, 200);
    PageHinkley ph;
    const auto got = first_drift(ph, trace);
    REQUIRE(got.has_value());
    CHECK(*got >= 5000);
    CHECK(*got - 5000 <= 50);
}

TEST_CASE("Page-Hinkley statistic stays at zero on a constant input", "[detectors]") {
    PageHinkley ph;
    for (int i = 0; i < 5000; ++i) {
        REQUIRE(ph.update(0.5).state == SignalLevel::in_control);
        REQUIRE(ph.statistic() == 0.0);
    }
}

TEST_CASE("every detector flags a large sudden increase", "[detectors]") {
    for (const auto& name : detector_names()) {
        auto d = make_detector(name);
        auto trace = bernoulli_trace(0.1, 2000, 3);
        const auto tail = bernoulli_trace(0.7, 1000, 4);
        trace.insert(trace.end(), tail.begin(), tail.end());
        bool fired_after = false;
        for (std::size_t i = 0; i < trace.size(); ++i) {
            if (d->update(trace[i]).state == SignalLevel::drift && i >= 2000) fired_after = true;
        }
        INFO(name);
        CHECK(fired_after);
    }
}

TEST_CASE("detectors raise few false alarms on stationary error", "[detectors][property]") {
    for (const auto& name : detector_names()) {
        std::size_t alarms = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto d = make_detector(name);
            for (int v : bernoulli_trace(0.2, 10000, 1000 + seed)) {
                alarms += d->update(v).state == SignalLevel::drift ? 1 : 0;
            }
        }
        INFO(name << " alarms=" << alarms);
        CHECK(alarms <= 5);
    }
}

TEST_CASE("detectors are deterministic", "[detectors]") {
    const auto trace = bernoulli_trace(0.3, 3000, 77);
    for (const auto& name : detector_names()) {
        auto a = make_detector(name);
        auto b = make_detector(name);
        for (int v : trace) REQUIRE(a->update(v).state == b->update(v).state);
    }
}

TEST_CASE("DDM and EDDM warn before drifting on a slow ramp", "[detectors]") {
    Rng rng(9);
    std::vector<int> trace;
    for (int i = 0; i < 3000; ++i) {
        const double p = i < 1000 ? 0.1 : std::min(0.6, 0.1 + 0.5 * (i - 1000) / 1500.0);
        trace.push_back(rng.bernoulli(p) ? 1 : 0);
    }
    for (const char* name : {"DDM", "EDDM"}) {
        auto d = make_detector(name);
        bool warned = false;
        bool ordered = false;
        for (int v : trace) {
            const auto s = d->update(v).state;
            if (s == SignalLevel::warning) warned = true;
            if (s == SignalLevel::drift) {
                ordered = warned;
                break;
            }
        }
        INFO(name);
        CHECK(ordered);
    }
}

TEST_CASE("ADWIN shrinks its window after a change", "[detectors]") {
    Adwin adwin;
    const auto before = bernoulli_trace(0.1, 3000, 5);
    for (int v : before) adwin.update(v);
    CHECK(adwin.width() > 2000);
    CHECK(adwin.estimation() == Catch::Approx(0.1).margin(0.03));
    bool fired = false;
    for (int v : bernoulli_trace(0.8, 500, 6)) fired |= adwin.update(v).state == SignalLevel::drift;
    CHECK(fired);
    CHECK(adwin.width() < 1000);
    CHECK(adwin.estimation() > 0.6);
}

TEST_CASE("factory defaults, overrides and errors", "[detectors]") {
    auto ddm = make_detector("DDM");
    CHECK(ddm->update(0).state == SignalLevel::in_control);
    CHECK(ddm->seen() == 1);

    auto adwin = make_detector("ADWIN", {{"delta", 0.01}});
    CHECK(adwin->config().at("delta").get<double>() == 0.01);
    CHECK(make_detector("page-hinkley")->name() == "PageHinkley");
    CHECK(make_detector("ph")->name() == "PageHinkley");

    CHECK_THROWS_AS(make_detector("XYZ"), std::invalid_argument);
    CHECK_THROWS_AS(make_detector("ADWIN", {{"nope", 1}}), std::invalid_argument);
    CHECK_THROWS_AS(make_detector("ADWIN", {{"delta", -1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(make_detector("DDM", {{"warning_level", 3.0}, {"drift_level", 2.0}}), std::invalid_argument);
    CHECK_THROWS_AS(make_detector("EDDM", {{"warning_ratio", 0.8}, {"drift_ratio", 0.9}}), std::invalid_argument);
    CHECK(detector_names().size() == 7);
}

TEST_CASE("detectors reject inputs outside their domain", "[detectors]") {
    for (const auto& name : detector_names()) {
        auto d = make_detector(name);
        CHECK_THROWS_AS(d->update(std::nan("")), std::domain_error);
        CHECK_THROWS_AS(d->update(1.5), std::domain_error);
        CHECK_THROWS_AS(d->update(-0.1), std::domain_error);
    }
    CHECK_THROWS_AS(make_detector("DDM")->update(0.5), std::domain_error);
    CHECK_THROWS_AS(make_detector("EDDM")->update(0.5), std::domain_error);
    CHECK_NOTHROW(make_detector("ADWIN")->update(0.5));
}

TEST_CASE("two-sample KS statistic", "[detectors][ks]") {
    const auto same = ks_two_sample({1, 2, 3, 4}, {1, 2, 3, 4});
    CHECK(same.statistic == 0.0);
    CHECK(same.p_value == Catch::Approx(1.0));

    const auto apart = ks_two_sample({0, 0, 0, 0, 0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    CHECK(apart.statistic == 1.0);
    CHECK(apart.p_value < 0.001);

    // Hand-computed: ECDFs of {1,2,3} and {2,3,4} differ by at most 1/3.
    CHECK(ks_two_sample({1, 2, 3}, {2, 3, 4}).statistic == Catch::Approx(1.0 / 3.0));
}
