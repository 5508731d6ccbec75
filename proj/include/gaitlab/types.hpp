#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gaitlab/errors.hpp"

namespace gaitlab {

/// Standard gravity, used to convert stored g-units to m/s^2 for physics code.
inline constexpr double kGravity = 9.80665;

/// Sensor range in g. Samples outside are rejected.
inline constexpr double kSensorRangeG = 2.0;

/// Sensor resolution in g; file values are quantized to this grid.
inline constexpr double kSensorResolutionG = 0.001;

/// Nominal sampling rate of the phone stream.
inline constexpr double kDefaultRateHz = 30.0;

enum class Group { TD = 0, DMD = 1 };

inline std::string to_string(Group g) { return g == Group::DMD ? "DMD" : "TD"; }

inline Group group_from_string(const std::string& s) {
    if (s == "DMD") return Group::DMD;
    if (s == "TD") return Group::TD;
    throw ValidationError("unknown group label: '" + s + "' (expected DMD or TD)");
}

// Axis convention: x vertical, y mediolateral, z anteroposterior.
inline constexpr int kAxisVertical = 0;
inline constexpr int kAxisMediolateral = 1;
inline constexpr int kAxisAnteroposterior = 2;

enum class ActivityKind {
    SC_L1 = 0,
    SC_L2,
    SC_L3,
    SC_L4,
    SC_L5,
    SixMWT,
    HundredMRW,
};

inline constexpr std::array<ActivityKind, 7> kAllActivities = {
    ActivityKind::SC_L1,  ActivityKind::SC_L2, ActivityKind::SC_L3,
    ActivityKind::SC_L4,  ActivityKind::SC_L5, ActivityKind::SixMWT,
    ActivityKind::HundredMRW,
};

inline std::string to_string(ActivityKind k) {
    switch (k) {
        case ActivityKind::SC_L1: return "SC-L1";
        case ActivityKind::SC_L2: return "SC-L2";
        case ActivityKind::SC_L3: return "SC-L3";
        case ActivityKind::SC_L4: return "SC-L4";
        case ActivityKind::SC_L5: return "SC-L5";
        case ActivityKind::SixMWT: return "6MWT";
        case ActivityKind::HundredMRW: return "100MRW";
    }
    throw ValidationError("invalid activity kind");
}

inline std::optional<ActivityKind> activity_from_string(const std::string& s) {
    for (const ActivityKind k : kAllActivities)
        if (to_string(k) == s) return k;
    return std::nullopt;
}

inline bool is_speed_calibration(ActivityKind k) {
    return k == ActivityKind::SC_L1 || k == ActivityKind::SC_L2 ||
           k == ActivityKind::SC_L3 || k == ActivityKind::SC_L4 ||
           k == ActivityKind::SC_L5;
}

/// One of the seven walking/running tasks. Speed-calibration levels always
/// carry the fixed 25 m course length; the timed tests measure distance per
/// effort instead.
struct Activity {
    ActivityKind kind = ActivityKind::SC_L1;
    std::optional<double> nominal_distance_m;

    static Activity of(ActivityKind kind) {
        Activity a;
        a.kind = kind;
        if (is_speed_calibration(kind)) a.nominal_distance_m = 25.0;
        return a;
    }
};

struct ParticipantRecord {
    std::string id;
    Group group = Group::TD;
    int age_years = 0;
    double weight_kg = 0.0;
    double height_m = 0.0;
    std::optional<int> nsaa; // 0..34 when present

    void validate() const {
        if (id.empty()) throw ValidationError("participant id must be non-empty");
        if (!(height_m > 0.0))
            throw ValidationError("participant '" + id + "': height must be positive");
        if (!(weight_kg > 0.0))
            throw ValidationError("participant '" + id + "': weight must be positive");
        if (nsaa && (*nsaa < 0 || *nsaa > 34))
            throw ValidationError("participant '" + id + "': NSAA out of 0..34");
    }
};

struct RecordingAnnotations {
    std::optional<int> observed_steps;
    std::optional<double> measured_distance_m;
    bool truncated = false; // session ended without a terminator
};

/// Uniform-rate triaxial acceleration for one participant x activity.
/// Samples are stored axis-major in g-units; immutable after construction.
struct Recording {
    std::string participant_id;
    Activity activity;
    double rate_hz = kDefaultRateHz;
    std::array<std::vector<double>, 3> axes; // [x vertical, y mediolateral, z anteroposterior]
    RecordingAnnotations annotations;

    std::size_t size() const { return axes[0].size(); }
    double duration_s() const { return static_cast<double>(size()) / rate_hz; }

    void validate() const {
        if (!(rate_hz > 0.0))
            throw ValidationError("recording " + label() + ": rate must be positive");
        if (axes[1].size() != axes[0].size() || axes[2].size() != axes[0].size())
            throw ValidationError("recording " + label() + ": axis lengths differ");
        if (static_cast<double>(size()) < 2.0 * rate_hz)
            throw ValidationError("recording " + label() + ": shorter than 2 s (" +
                                  std::to_string(size()) + " samples at " +
                                  std::to_string(rate_hz) + " Hz)");
        for (int a = 0; a < 3; ++a) {
            for (std::size_t i = 0; i < axes[a].size(); ++i) {
                const double v = axes[a][i];
                if (!std::isfinite(v) || std::fabs(v) > kSensorRangeG)
                    throw ValidationError("recording " + label() + ": sample " +
                                          std::to_string(i) + " axis " + std::to_string(a) +
                                          " outside +/-2 g (" + std::to_string(v) + ")");
            }
        }
    }

    std::string label() const { return participant_id + "/" + to_string(activity.kind); }
};

/// The eight clinical gait features, in internal SI-derived units.
/// Report scalings (TP x1e6, FI x1e3) are applied only when rendering.
struct FeatureVector {
    double sp = 0.0; // (m/s)/m  — speed over height
    double sf = 0.0; // steps/s
    double sl = 0.0; // dimensionless — step length over height
    double tp = 0.0; // (m^2/s^4)/kg — total PSD integral per mass
    double vp = 0.0; // percent of tp on the vertical axis
    double mp = 0.0; // percent, mediolateral
    double ap = 0.0; // percent, anteroposterior
    double fi = 0.0; // (m^2/s^4)/kg/(m/s) — anteroposterior power per mass over speed

    std::array<double, 8> values() const { return {sp, sf, sl, tp, vp, mp, ap, fi}; }

    static const std::array<std::string, 8>& names() {
        static const std::array<std::string, 8> n = {"sp", "sf", "sl", "tp",
                                                     "vp", "mp", "ap", "fi"};
        return n;
    }

    void validate() const {
        for (const double v : values())
            if (!std::isfinite(v) || v < 0.0)
                throw ValidationError("feature values must be finite and nonnegative");
        if (std::fabs(vp + mp + ap - 100.0) > 1e-9)
            throw ValidationError("axial percentages must sum to 100");
    }
};

/// Quantize a g-unit value to the 0.001 g sensor grid.
inline double quantize_g(double v) { return std::round(v * 1000.0) / 1000.0; }

struct Dataset {
    std::vector<ParticipantRecord> participants;
    std::vector<Recording> recordings;

    const ParticipantRecord* find_participant(const std::string& id) const {
        for (const auto& p : participants)
            if (p.id == id) return &p;
        return nullptr;
    }
};

} // namespace gaitlab
