#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "gaitlab/dsp.hpp"
#include "gaitlab/types.hpp"

namespace gaitlab::features {

/// Calibration course length shared by every speed-calibration level.
inline constexpr double kCourseLengthM = 25.0;

/// Relative distance-reconstruction error beyond which a fitted model is
/// marked unreliable.
inline constexpr double kReliabilityTolerance = 0.15;

/// Report-layer scalings; stored features stay in SI-derived units.
inline constexpr double kTpReportScale = 1e6;
inline constexpr double kFiReportScale = 1e3;

/// Per-subject linear model of step length against step frequency, fitted on
/// the fixed-distance calibration walks and used to impute distances for
/// activities without a measured distance.
struct DistanceModel {
    std::string participant_id;
    double slope = 0.0;     // meters per (step/s)
    double intercept = 0.0; // meters
    std::vector<ActivityKind> fitted_on;
    bool reliable = true;

    double predict_step_length(double sf) const { return intercept + slope * sf; }
    double predict_distance(double sf, int steps) const {
        return predict_step_length(sf) * static_cast<double>(steps);
    }
};

/// Least-squares fit of per-step length (25 m / steps) against step
/// frequency over a participant's calibration walks.
inline DistanceModel fit_distance_model(const std::vector<const Recording*>& calibrations) {
    if (calibrations.size() < 2)
        throw DataError("distance model needs at least 2 calibration recordings, got " +
                        std::to_string(calibrations.size()));
    DistanceModel m;
    std::vector<double> sf, sl;
    for (const Recording* r : calibrations) {
        if (!r->activity.nominal_distance_m)
            throw ParameterError("calibration recording " + r->label() +
                                 " has no fixed course length");
        if (m.participant_id.empty()) {
            m.participant_id = r->participant_id;
        } else if (m.participant_id != r->participant_id) {
            throw ParameterError("calibrations mix participants '" + m.participant_id +
                                 "' and '" + r->participant_id + "'");
        }
        const int steps = dsp::count_steps(r->axes[kAxisAnteroposterior], r->rate_hz);
        if (steps == 0) throw DataError("no steps detected in " + r->label());
        if (steps < 10)
            throw DataError("calibration " + r->label() + " has only " +
                            std::to_string(steps) + " steps; need at least 10");
        sf.push_back(static_cast<double>(steps) / r->duration_s());
        sl.push_back(*r->activity.nominal_distance_m / static_cast<double>(steps));
        m.fitted_on.push_back(r->activity.kind);
    }

    const auto n = static_cast<double>(sf.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < sf.size(); ++i) {
        mx += sf[i];
        my += sl[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < sf.size(); ++i) {
        sxx += (sf[i] - mx) * (sf[i] - mx);
        sxy += (sf[i] - mx) * (sl[i] - my);
    }
    if (sxx > 0.0) {
        m.slope = sxy / sxx;
        m.intercept = my - m.slope * mx;
    } else {
        m.slope = 0.0; // all calibrations at one cadence: constant model
        m.intercept = my;
    }

    for (std::size_t i = 0; i < sf.size(); ++i) {
        const double steps = *calibrations[i]->activity.nominal_distance_m / sl[i];
        const double predicted = m.predict_step_length(sf[i]) * steps;
        if (std::fabs(predicted - kCourseLengthM) / kCourseLengthM > kReliabilityTolerance)
            m.reliable = false;
    }
    return m;
}

/// The eight clinical features of one recording. Distance precedence:
/// fixed 25 m for calibration walks, then the annotated measured distance,
/// then the participant's distance model; anything else is a configuration
/// error. All spectral quantities are computed in SI units.
inline FeatureVector extract_features(const Recording& r, const ParticipantRecord& participant,
                                      const DistanceModel* model = nullptr) {
    r.validate();
    participant.validate();

    const int steps = dsp::count_steps(r.axes[kAxisAnteroposterior], r.rate_hz);
    if (steps == 0) throw DataError("no steps detected in " + r.label());
    const double duration = r.duration_s();
    const double sf = static_cast<double>(steps) / duration;

    double distance = 0.0;
    if (r.activity.nominal_distance_m) {
        distance = *r.activity.nominal_distance_m; // ground truth beats any model
    } else if (r.annotations.measured_distance_m) {
        distance = *r.annotations.measured_distance_m;
    } else if (model) {
        distance = model->predict_distance(sf, steps);
    } else {
        throw ConfigError("recording " + r.label() +
                          " has no measured distance and no distance model");
    }
    if (!(distance > 0.0)) throw DataError("nonpositive distance for " + r.label());

    const double speed = distance / duration; // m/s, not height-normalized

    std::array<double, 3> axis_power{}; // (m^2/s^4) per kg
    std::vector<double> si(r.size());
    for (int a = 0; a < 3; ++a) {
        for (std::size_t i = 0; i < si.size(); ++i) si[i] = r.axes[a][i] * kGravity;
        axis_power[a] = dsp::psd(si, r.rate_hz).integral() / participant.weight_kg;
    }
    const double tp = axis_power[0] + axis_power[1] + axis_power[2];
    if (!(tp > 0.0)) throw DataError("zero total power for " + r.label());

    FeatureVector f;
    f.sp = speed / participant.height_m;
    f.sf = sf;
    f.sl = (distance / static_cast<double>(steps)) / participant.height_m;
    f.tp = tp;
    f.vp = axis_power[kAxisVertical] / tp * 100.0;
    f.mp = axis_power[kAxisMediolateral] / tp * 100.0;
    f.ap = axis_power[kAxisAnteroposterior] / tp * 100.0;
    f.fi = axis_power[kAxisAnteroposterior] / speed;
    f.validate();
    return f;
}

struct FeatureRow {
    std::string participant_id;
    ActivityKind activity = ActivityKind::SC_L1;
    FeatureVector features;
};

struct FeatureError {
    std::string recording; // participant/activity label
    std::string message;
};

struct FeatureTable {
    std::vector<FeatureRow> rows;
    std::vector<FeatureError> errors;
};

/// Features for every recording in the dataset, ordered by (participant_id,
/// activity). Per-participant distance models are fitted from available
/// calibration walks and used as the imputation fallback. Failures become
/// structured error entries instead of aborting the whole table.
inline FeatureTable feature_table(const Dataset& d) {
    FeatureTable table;

    std::map<std::string, std::vector<const Recording*>> calibrations;
    for (const Recording& r : d.recordings)
        if (is_speed_calibration(r.activity.kind)) calibrations[r.participant_id].push_back(&r);

    std::map<std::string, DistanceModel> models;
    for (const auto& [pid, recs] : calibrations) {
        try {
            models.emplace(pid, fit_distance_model(recs));
        } catch (const Error&) {
            // No usable model; recordings that need one will report it.
        }
    }

    std::vector<const Recording*> ordered;
    ordered.reserve(d.recordings.size());
    for (const Recording& r : d.recordings) ordered.push_back(&r);
    std::stable_sort(ordered.begin(), ordered.end(), [](const Recording* a, const Recording* b) {
        if (a->participant_id != b->participant_id) return a->participant_id < b->participant_id;
        return static_cast<int>(a->activity.kind) < static_cast<int>(b->activity.kind);
    });

    for (const Recording* r : ordered) {
        const ParticipantRecord* p = d.find_participant(r->participant_id);
        if (!p) {
            table.errors.push_back({r->label(), "participant not in manifest"});
            continue;
        }
        const auto it = models.find(r->participant_id);
        const DistanceModel* model = it == models.end() ? nullptr : &it->second;
        try {
            table.rows.push_back({r->participant_id, r->activity.kind,
                                  extract_features(*r, *p, model)});
        } catch (const Error& e) {
            table.errors.push_back({r->label(), e.what()});
        }
    }
    return table;
}

/// CSV export in report scalings (TP x1e6, FI x1e3).
inline std::string feature_table_csv(const FeatureTable& table) {
    std::string out = "participant_id,activity,sp,sf,sl,tp,vp,mp,ap,fi\n";
    char buf[256];
    for (const FeatureRow& row : table.rows) {
        const FeatureVector& f = row.features;
        std::snprintf(buf, sizeof(buf), "%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      row.participant_id.c_str(), to_string(row.activity).c_str(), f.sp, f.sf,
                      f.sl, f.tp * kTpReportScale, f.vp, f.mp, f.ap, f.fi * kFiReportScale);
        out += buf;
    }
    return out;
}

} // namespace gaitlab::features
