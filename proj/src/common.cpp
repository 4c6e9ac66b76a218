#include "metaadd/common.hpp"

#include <stdexcept>

namespace metaadd {

std::string_view to_string(DriftKind kind) noexcept {
    switch (kind) {
        case DriftKind::sudden: return "sudden";
        case DriftKind::gradual: return "gradual";
        case DriftKind::incremental: return "incremental";
        case DriftKind::normal: return "normal";
    }
    return "normal";
}

std::optional<DriftKind> try_parse_drift_kind(std::string_view name) noexcept {
    for (auto kind : kAllDriftKinds) {
        if (to_string(kind) == name) return kind;
    }
    return std::nullopt;
}

DriftKind parse_drift_kind(std::string_view name) {
    if (auto kind = try_parse_drift_kind(name)) return *kind;
    throw std::invalid_argument("unknown drift kind '" + std::string(name) + "'");
}

DriftKind drift_kind_from_index(std::size_t index) {
    if (index >= kNumDriftKinds) {
        throw std::out_of_range("drift class index " + std::to_string(index) + " out of range");
    }
    return static_cast<DriftKind>(index);
}

std::string_view to_string(SignalLevel level) noexcept {
    switch (level) {
        case SignalLevel::in_control: return "in_control";
        case SignalLevel::warning: return "warning";
        case SignalLevel::drift: return "drift";
    }
    return "in_control";
}

}  // namespace metaadd
