#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaadd/common.hpp"

namespace metaadd::streamgen {

/// One injected drift. `width` is the length of the transition region and is
/// zero exactly for sudden and normal drifts.
struct DriftSpec {
    DriftKind kind = DriftKind::normal;
    std::size_t position = 0;
    std::size_t width = 0;
    double magnitude = 0.0;  ///< severity in [0, 1]; 0 for normal

    /// Throws std::invalid_argument if the invariants fail for a stream of
    /// `length` instances.
    void validate(std::size_t length) const;
};

struct Sample {
    std::vector<double> features;
    int label = 0;
};

enum class Generator { sea, hyperplane, agrawal, rbf, rtg, error_trace };

std::string_view to_string(Generator g) noexcept;
/// Accepts sea, hyp/hyperplane, agr/agrawal, rbf, rtg, error-trace.
Generator parse_generator(std::string_view name);

/// A stream with zero or more drifts. Drifts are applied in order, each one
/// moving the generator to the next concept; they must be sorted and must not
/// overlap. A normal drift (or none at all) leaves the concept unchanged.
struct StreamConfig {
    Generator generator = Generator::sea;
    std::size_t length = 1000;
    std::vector<DriftSpec> drifts;
    std::uint64_t seed = 1;
    double noise = 0.0;  ///< label-flip probability

    void validate() const;
};

std::vector<Sample> generate_stream(const StreamConfig& cfg);

/// Number of input features each generator emits.
std::size_t feature_count(Generator g);

struct TraceParams {
    DriftKind kind = DriftKind::normal;
    std::size_t length = 0;
    double base_error = 0.1;
    double drift_error = 0.5;
    std::size_t width = 0;
    std::size_t position = 0;
    std::uint64_t seed = 1;
    /// When false the trace moves from drift_error down to base_error.
    bool error_increases = true;
};

/// Bernoulli error trace whose success probability follows the signature of
/// the drift kind: a step (sudden), alternating old/new segments with a
/// growing share of the new rate (gradual), a linear ramp (incremental) or a
/// constant rate (normal).
ErrorTrace simulate_error_trace(const TraceParams& params);

/// The per-timestamp error probability the simulator draws from. Exposed for
/// tests and for reference curves.
std::vector<double> error_probability_profile(const TraceParams& params);

/// [{"kind", "position", "width", "magnitude"}, ...]
nlohmann::json drifts_to_json(std::span<const DriftSpec> drifts);
/// Throws std::invalid_argument for a malformed entry.
std::vector<DriftSpec> drifts_from_json(const nlohmann::json& j);

/// Stream or trace contents plus the optional `# meta:` JSON line (null when
/// absent).
struct StreamFile {
    std::vector<Sample> samples;
    nlohmann::json meta;
};

struct TraceFile {
    ErrorTrace errors;
    nlohmann::json meta;
};

/// CSV with header `f0,...,fD,label`, preceded by `# meta: <json>` when meta
/// is not null.
void write_stream_csv(std::ostream& out, std::span<const Sample> samples, const nlohmann::json& meta = nullptr);
/// Throws std::runtime_error on a missing header, a bad number or a row of the
/// wrong width.
StreamFile read_stream_csv(std::istream& in);
void write_stream_file(const std::string& path, std::span<const Sample> samples, const nlohmann::json& meta = nullptr);
StreamFile read_stream_file(const std::string& path);

/// One 0/1 per line, optional `# meta:` line first.
void write_error_trace(std::ostream& out, std::span<const int> errors, const nlohmann::json& meta = nullptr);
/// Throws std::runtime_error for anything but 0 or 1 on a data line.
TraceFile read_error_trace(std::istream& in);
void write_error_trace_file(const std::string& path, std::span<const int> errors,
                            const nlohmann::json& meta = nullptr);
TraceFile read_error_trace_file(const std::string& path);

}  // namespace metaadd::streamgen
