#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace metaadd {

/// Drift classes recognised by the meta-detector. The enumerator value is the
/// class index used throughout training and classification.
enum class DriftKind : std::uint8_t { sudden = 0, gradual = 1, incremental = 2, normal = 3 };

inline constexpr std::size_t kNumDriftKinds = 4;

inline constexpr std::array<DriftKind, kNumDriftKinds> kAllDriftKinds = {
    DriftKind::sudden, DriftKind::gradual, DriftKind::incremental, DriftKind::normal};

std::string_view to_string(DriftKind kind) noexcept;

/// Throws std::invalid_argument for anything but the four lowercase names.
DriftKind parse_drift_kind(std::string_view name);

std::optional<DriftKind> try_parse_drift_kind(std::string_view name) noexcept;

inline constexpr std::size_t index_of(DriftKind kind) noexcept {
    return static_cast<std::size_t>(kind);
}

DriftKind drift_kind_from_index(std::size_t index);

/// Output level of a streaming drift signal (classical detectors and the
/// adaptation hook of the prequential loop share it).
enum class SignalLevel : std::uint8_t { in_control = 0, warning = 1, drift = 2 };

std::string_view to_string(SignalLevel level) noexcept;

/// Prequential 0/1 prediction errors; index is the timestamp.
using ErrorTrace = std::vector<int>;

}  // namespace metaadd
