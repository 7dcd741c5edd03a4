#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "utopy/core/error.hpp"

namespace utopy {

enum class SchedulerKind { Exponential, Linear, ConstantZero };

inline std::string to_string(SchedulerKind k) {
    switch (k) {
    case SchedulerKind::Exponential: return "exp";
    case SchedulerKind::Linear: return "linear";
    case SchedulerKind::ConstantZero: return "baseline";
    }
    return "unknown";
}

inline SchedulerKind parse_scheduler(const std::string& s) {
    if (s == "exp" || s == "exponential") return SchedulerKind::Exponential;
    if (s == "linear") return SchedulerKind::Linear;
    if (s == "baseline" || s == "constant-zero" || s == "constant_zero") return SchedulerKind::ConstantZero;
    throw ContractViolation("unknown scheduler '" + s + "' (expected exp, linear or baseline)");
}

/// alpha reaches 0 (exactly for linear, snapped from 1e-8 for exponential)
/// at epoch fraction * max_epochs and is only refreshed every freq epochs.
struct SchedulerSpec {
    SchedulerKind kind = SchedulerKind::Linear;
    int freq = 10;
    int max_epochs = 500;
    double fraction = 0.7;
    double floor_value = 1e-8; // exponential value at the end of the ramp

    double ramp_end() const { return fraction * static_cast<double>(max_epochs); }

    /// Exponential rate ln(1/floor) / ramp_end; 1 / ramp_end for linear.
    double epsilon() const {
        if (kind == SchedulerKind::Exponential) return std::log(1.0 / floor_value) / ramp_end();
        if (kind == SchedulerKind::Linear) return 1.0 / ramp_end();
        return 0.0;
    }

    void validate() const {
        UTOPY_REQUIRE(freq >= 1, "scheduler: freq must be >= 1");
        UTOPY_REQUIRE(max_epochs >= 1, "scheduler: max_epochs must be >= 1");
        UTOPY_REQUIRE(fraction > 0.0 && fraction <= 1.0, "scheduler: fraction must lie in (0, 1]");
        UTOPY_REQUIRE(floor_value > 0.0 && floor_value < 1.0, "scheduler: floor value must lie in (0, 1)");
    }
};

/// Unquantised curve at epoch l; the exponential equals floor_value at the
/// end of the ramp.
inline double scheduler_value(const SchedulerSpec& s, double epoch) {
    s.validate();
    UTOPY_REQUIRE(epoch >= 0.0 && epoch <= static_cast<double>(s.max_epochs),
                  "scheduler: epoch " + std::to_string(epoch) + " outside [0, max_epochs]");
    switch (s.kind) {
    case SchedulerKind::ConstantZero: return 0.0;
    case SchedulerKind::Linear: return std::clamp(1.0 - epoch / s.ramp_end(), 0.0, 1.0);
    case SchedulerKind::Exponential: return std::clamp(std::exp(-s.epsilon() * epoch), 0.0, 1.0);
    }
    return 0.0;
}

/// alpha used during epoch l: the curve sampled at the last update epoch
/// freq * floor(l / freq), and 0 from the end of the ramp on.
inline double scheduler_alpha(const SchedulerSpec& s, int epoch) {
    s.validate();
    UTOPY_REQUIRE(epoch >= 0 && epoch <= s.max_epochs,
                  "scheduler: epoch " + std::to_string(epoch) + " outside [0, max_epochs]");
    if (static_cast<double>(epoch) >= s.ramp_end()) return 0.0;
    return scheduler_value(s, static_cast<double>(s.freq * (epoch / s.freq)));
}

} // namespace utopy
