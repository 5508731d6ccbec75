#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gaitlab/rng.hpp"
#include "gaitlab/types.hpp"

namespace gaitlab::synth {

/// Second harmonic amplitude relative to the fundamental. The resulting
/// waveform sin(th) + 0.5*sin(2th) has exactly one local maximum per cycle
/// (at th = pi/3), so step counts have a closed form.
inline constexpr double kSecondHarmonicRatio = 0.5;

/// Per-axis phase offsets (vertical, mediolateral, anteroposterior). The
/// anteroposterior axis keeps phase 0 so its peaks sit at t = (k + 1/6)/f.
inline constexpr std::array<double, 3> kAxisPhase = {2.0 * M_PI / 3.0, 4.0 * M_PI / 3.0, 0.0};

/// Variance of the unit-amplitude waveform over whole cycles (1/2 + 1/8····),
/// used only for range pre-checks; actual scaling measures the sampled grid.
inline constexpr double kShapeVariance = 0.625;

/// Peak magnitude of the unit waveform, at th = pi/3.
inline const double kShapePeak = std::sin(M_PI / 3.0) + 0.5 * std::sin(2.0 * M_PI / 3.0);

/// Smallest anteroposterior share (percent) the generator will emit; a
/// silent z-axis would make every recording step-free and unusable, so a
/// trace of cadence power is kept even when the caller asks for zero.
inline constexpr double kMinAnteroposteriorPct = 0.2;

struct GaitParams {
    double cadence_hz = 2.0;                           // steps per second
    double step_length_m = 0.5;                        // meters per step
    std::array<double, 3> axial_split = {45., 32., 23.}; // percent (vp, mp, ap)
    double total_rms = 2.0;                            // m/s^2, sqrt of summed axis variances
    double noise_sigma = 0.0;                          // m/s^2 additive white noise
    double duration_s = 60.0;
    double rate_hz = kDefaultRateHz;
    std::uint64_t seed = 0;

    void validate() const {
        const double sum = axial_split[0] + axial_split[1] + axial_split[2];
        if (std::fabs(sum - 100.0) > 1e-9)
            throw ParameterError("axial_split must sum to 100, got " + std::to_string(sum));
        for (const double s : axial_split)
            if (s < 0.0) throw ParameterError("axial_split entries must be nonnegative");
        if (cadence_hz < 0.5 || cadence_hz > 4.5)
            throw ParameterError("cadence must lie in [0.5, 4.5] steps/s");
        if (duration_s < 2.0) throw ParameterError("duration must be at least 2 s");
        if (!(rate_hz > 0.0)) throw ParameterError("rate must be positive");
        if (!(total_rms > 0.0)) throw ParameterError("total_rms must be positive");
        if (noise_sigma < 0.0) throw ParameterError("noise_sigma must be nonnegative");
        if (!(step_length_m > 0.0)) throw ParameterError("step_length must be positive");
    }
};

/// Number of waveform peaks (= steps) that fall inside an n-sample recording:
/// #{k >= 0 : (k + 1/6)/cadence <= (n-1)/rate}.
inline int true_step_count(double cadence_hz, std::size_t n_samples, double rate_hz) {
    if (n_samples < 2) return 0;
    const double t_end = static_cast<double>(n_samples - 1) / rate_hz;
    const double x = cadence_hz * t_end - 1.0 / 6.0;
    if (x < 0.0) return 0;
    return static_cast<int>(std::floor(x + 1e-9)) + 1;
}

namespace detail {

/// Picks a sample count close to duration*rate such that the last waveform
/// peak sits at least two samples from the end; a peak closer than that can
/// round onto the final sample, where no discrete local maximum exists.
inline std::size_t safe_sample_count(double duration_s, double rate_hz, double cadence_hz) {
    auto n0 = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
    n0 = std::max<std::size_t>(n0, static_cast<std::size_t>(std::ceil(2.0 * rate_hz)));
    const int steps = true_step_count(cadence_hz, n0, rate_hz);
    if (steps == 0) return n0;
    const double t_last = (static_cast<double>(steps - 1) + 1.0 / 6.0) / cadence_hz;
    const double margin = static_cast<double>(n0 - 1) - t_last * rate_hz;
    if (margin >= 2.0) return n0;
    // Extending by under one waveform period cannot admit a new peak.
    return n0 + static_cast<std::size_t>(std::ceil(2.0 - margin));
}

} // namespace detail

/// Generates one synthetic recording. The anteroposterior axis carries a
/// cadence-frequency fundamental with one peak per step; per-axis power is
/// proportioned to axial_split by measuring the sampled waveform variance,
/// so the split is exact when noise_sigma is zero. The vertical axis rides
/// on a +1 g gravity offset. Annotations carry the analytic step count and
/// distance = step_length x cadence x realized duration.
inline Recording gen_recording(const GaitParams& params, const ParticipantRecord& participant,
                               Activity activity) {
    params.validate();

    // Keep the z-axis audible even for a (100, 0, 0) split.
    std::array<double, 3> split = params.axial_split;
    if (split[2] < kMinAnteroposteriorPct) {
        const double take = kMinAnteroposteriorPct - split[2];
        const double rest = split[0] + split[1];
        split[0] -= take * (rest > 0.0 ? split[0] / rest : 0.5);
        split[1] -= take * (rest > 0.0 ? split[1] / rest : 0.5);
        split[2] = kMinAnteroposteriorPct;
    }

    const std::size_t n = detail::safe_sample_count(params.duration_s, params.rate_hz,
                                                    params.cadence_hz);

    // Range pre-check: peak excursion plus a 5-sigma noise allowance must fit
    // the sensor, including the 1 g gravity ride on the vertical axis.
    {
        const double worst_amp = std::sqrt(params.total_rms * params.total_rms / kShapeVariance);
        const double peak_ms2 = worst_amp * kShapePeak + 5.0 * params.noise_sigma;
        if (peak_ms2 / kGravity + 1.0 > kSensorRangeG)
            throw ParameterError("total_rms " + std::to_string(params.total_rms) +
                                 " m/s^2 cannot fit the +/-2 g sensor range");
    }

    Recording r;
    r.participant_id = participant.id;
    r.activity = activity;
    r.rate_hz = params.rate_hz;

    Rng rng(params.seed);
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<double>& out = r.axes[axis];
        out.resize(n);
        const double share = split[axis] / 100.0;
        if (share > 0.0) {
            std::vector<double> shape(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double th = 2.0 * M_PI * params.cadence_hz * static_cast<double>(i) /
                                      params.rate_hz +
                                  kAxisPhase[axis];
                shape[i] = std::sin(th) + kSecondHarmonicRatio * std::sin(2.0 * th);
            }
            // Scale so the sampled (biased) variance hits the requested share
            // exactly; whole-cycle formulas would drift on truncated cycles.
            double mean = 0.0;
            for (const double v : shape) mean += v;
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (const double v : shape) var += (v - mean) * (v - mean);
            var /= static_cast<double>(n);
            const double target = share * params.total_rms * params.total_rms;
            const double amp = std::sqrt(target / var);
            for (std::size_t i = 0; i < n; ++i) out[i] = amp * shape[i];
        }
        if (params.noise_sigma > 0.0)
            for (std::size_t i = 0; i < n; ++i) out[i] += params.noise_sigma * rng.normal();
        const double offset_g = (axis == kAxisVertical) ? 1.0 : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = out[i] / kGravity + offset_g;
            out[i] = std::clamp(g, -kSensorRangeG, kSensorRangeG);
        }
    }

    r.annotations.observed_steps = true_step_count(params.cadence_hz, n, params.rate_hz);
    r.annotations.measured_distance_m =
        params.step_length_m * params.cadence_hz * (static_cast<double>(n) / params.rate_hz);
    r.validate();
    return r;
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

/// A clamped Gaussian parameter distribution.
struct ParamDist {
    double mean = 0.0;
    double sd = 0.0;
    double lo = -1e300;
    double hi = 1e300;

    double draw(Rng& rng) const { return std::clamp(rng.normal(mean, sd), lo, hi); }
};

/// Per-group generating distributions; ap share is the remainder.
struct GroupSpec {
    Group group = Group::TD;
    ParamDist cadence_hz;        // steps/s at the 6MWT reference pace
    ParamDist step_length_frac;  // step length as a fraction of height
    ParamDist vp_pct, mp_pct;    // axial shares; ap = 100 - vp - mp
    ParamDist total_rms;         // m/s^2 at the reference pace
    double noise_sigma = 0.02;   // m/s^2
    ParamDist height_m{1.30, 0.10, 1.05, 1.55};
    ParamDist weight_kg{30.0, 6.0, 18.0, 55.0};
    int age_lo = 5, age_hi = 14;
    bool with_nsaa = false;      // DMD cohorts carry an NSAA score
};

struct CohortSpec {
    GroupSpec td, dmd;
    int n_per_group = 6;
    std::vector<ActivityKind> activities{ActivityKind::SixMWT};
    double timed_duration_s = 60.0; // 6MWT length (the clinical test runs 360 s)

    void validate() const {
        if (n_per_group < 1) throw ParameterError("n_per_group must be at least 1");
        if (activities.empty()) throw ParameterError("cohort needs at least one activity");
        if (timed_duration_s < 2.0) throw ParameterError("timed duration must be >= 2 s");
    }
};

namespace detail {

/// Pace multipliers relative to the 6MWT reference, index = ActivityKind.
/// SC levels follow the slow-walk-to-run progression; 100MRW is a run.
inline constexpr std::array<double, 7> kCadenceMult = {0.57, 0.74, 0.95, 1.06, 1.28, 1.0, 1.21};
inline constexpr std::array<double, 7> kLengthMult = {0.58, 0.73, 0.91, 1.00, 1.13, 1.0, 1.13};
inline constexpr std::array<double, 7> kPowerMult = {0.28, 0.48, 0.92, 1.44, 2.40, 1.0, 2.40};

} // namespace detail

/// Deterministic synthetic cohort: n_per_group subjects per class, one
/// recording per listed activity. Identical (spec, seed) pairs produce
/// byte-identical datasets.
inline Dataset gen_cohort(const CohortSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset d;
    for (const GroupSpec* gs : {&spec.td, &spec.dmd}) {
        const std::string prefix = gs->group == Group::TD ? "td" : "dmd";
        for (int i = 1; i <= spec.n_per_group; ++i) {
            const std::string id = prefix + (i < 10 ? "0" : "") + std::to_string(i);
            Rng prng(sub_seed(seed, "participant/" + id));
            ParticipantRecord p;
            p.id = id;
            p.group = gs->group;
            p.age_years = gs->age_lo + prng.below_int(gs->age_hi - gs->age_lo + 1);
            p.height_m = gs->height_m.draw(prng);
            p.weight_kg = gs->weight_kg.draw(prng);
            if (gs->with_nsaa) p.nsaa = 14 + prng.below_int(17);
            p.validate();

            for (const ActivityKind kind : spec.activities) {
                const auto level = static_cast<std::size_t>(kind);
                Rng arng(sub_seed(seed, id + "/" + to_string(kind)));
                GaitParams gp;
                gp.cadence_hz = std::clamp(
                    gs->cadence_hz.draw(arng) * detail::kCadenceMult[level], 0.8, 3.8);
                gp.step_length_m = std::clamp(
                    gs->step_length_frac.draw(arng) * detail::kLengthMult[level] * p.height_m,
                    0.10, 1.20);
                const double vp = std::clamp(gs->vp_pct.draw(arng), 5.0, 85.0);
                const double mp = std::clamp(gs->mp_pct.draw(arng), 5.0, 90.0 - vp);
                gp.axial_split = {vp, mp, 100.0 - vp - mp};
                gp.total_rms =
                    std::clamp(gs->total_rms.draw(arng) * detail::kPowerMult[level], 0.05, 6.0);
                gp.noise_sigma = gs->noise_sigma;
                const double speed = gp.cadence_hz * gp.step_length_m;
                if (kind == ActivityKind::SixMWT) {
                    gp.duration_s = spec.timed_duration_s;
                } else if (kind == ActivityKind::HundredMRW) {
                    gp.duration_s = std::max(2.0, 100.0 / speed);
                } else {
                    gp.duration_s = std::max(2.0, 25.0 / speed); // 25 m calibration course
                }
                gp.seed = sub_seed(seed, id + "/" + to_string(kind) + "/noise");
                d.recordings.push_back(gen_recording(gp, p, Activity::of(kind)));
            }
            d.participants.push_back(std::move(p));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Group distributions shaped like the clinical 6MWT summary rows: the TD
/// group walks faster with longer height-normalized strides and a larger
/// vertical power share; the DMD-like group shifts power toward the
/// mediolateral/anteroposterior axes. Means sit at typical clinic values;
/// spreads are half the between-child spreads seen in mixed-severity
/// clinic cohorts, which a single 6+6 desk cohort cannot represent — at full spread the
/// groups overlap enough that even ideal parameter recovery separates only
/// ~9 of 12 subjects.
inline CohortSpec clinical_shape_spec() {
    CohortSpec s;
    s.td.group = Group::TD;
    s.td.cadence_hz = {2.32, 0.095, 1.0, 3.2};
    s.td.step_length_frac = {0.45, 0.02, 0.20, 0.60};
    s.td.vp_pct = {45.77, 4.21, 5.0, 85.0};
    s.td.mp_pct = {31.88, 4.78, 5.0, 85.0};
    s.td.total_rms = {0.95, 0.15, 0.10, 4.0};
    s.td.age_lo = 3;
    s.td.age_hi = 15;

    s.dmd.group = Group::DMD;
    s.dmd.cadence_hz = {2.09, 0.225, 1.0, 3.2};
    s.dmd.step_length_frac = {0.37, 0.03, 0.20, 0.60};
    s.dmd.vp_pct = {35.87, 3.365, 5.0, 85.0};
    s.dmd.mp_pct = {33.27, 3.03, 5.0, 85.0};
    s.dmd.total_rms = {0.83, 0.15, 0.10, 4.0};
    s.dmd.age_lo = 3;
    s.dmd.age_hi = 15;
    s.dmd.with_nsaa = true;

    s.n_per_group = 6;
    s.activities = {ActivityKind::SixMWT};
    s.timed_duration_s = 40.0;
    return s;
}

/// Like clinical_shape_spec but with every activity and a longer walk, for
/// full-table desk experiments rather than the fast acceptance loop.
inline CohortSpec clinical_shape_full_spec() {
    CohortSpec s = clinical_shape_spec();
    s.activities.assign(kAllActivities.begin(), kAllActivities.end());
    s.timed_duration_s = 90.0;
    return s;
}

/// Null cohort: both classes drawn from the identical (TD) distribution, so
/// any classifier should hover near chance.
inline CohortSpec null_shape_spec() {
    CohortSpec s = clinical_shape_spec();
    s.dmd = s.td;
    s.dmd.group = Group::DMD;
    s.dmd.with_nsaa = false;
    return s;
}

} // namespace gaitlab::synth
