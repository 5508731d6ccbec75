#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gaitlab/cnn.hpp"
#include "gaitlab/dsp.hpp"
#include "gaitlab/features.hpp"
#include "gaitlab/ml.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/types.hpp"

namespace gaitlab::eval {

// ---------------------------------------------------------------------------
// Leave-one-subject-out folds
// ---------------------------------------------------------------------------

struct Fold {
    std::string held_out;
    std::vector<std::string> train_ids;   // sorted
    bool single_class_train = false;      // remaining subjects are one class
};

/// One fold per participant, ordered by id. Training ids exclude the held-out
/// subject entirely; folds whose remaining subjects are single-class are
/// flagged rather than dropped so callers can report them.
inline std::vector<Fold> loo_split(const Dataset& ds) {
    if (ds.participants.size() < 2)
        throw DataError("leave-one-out needs at least 2 participants");
    bool td = false, dmd = false;
    for (const auto& p : ds.participants) (p.group == Group::DMD ? dmd : td) = true;
    if (!td || !dmd) throw DataError("cohort contains a single class");

    std::vector<const ParticipantRecord*> sorted;
    for (const auto& p : ds.participants) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->id < b->id; });

    std::vector<Fold> folds;
    for (const auto* held : sorted) {
        Fold f;
        f.held_out = held->id;
        bool train_td = false, train_dmd = false;
        for (const auto* other : sorted) {
            if (other->id == held->id) continue;
            f.train_ids.push_back(other->id);
            (other->group == Group::DMD ? train_dmd : train_td) = true;
        }
        f.single_class_train = !(train_td && train_dmd);
        folds.push_back(std::move(f));
    }
    return folds;
}

// ---------------------------------------------------------------------------
// Vote aggregation
// ---------------------------------------------------------------------------

/// Subject-level label from per-window labels: DMD iff at least half the
/// windows vote DMD (the boundary counts as DMD).
inline Group aggregate_votes(const std::vector<int>& window_labels) {
    if (window_labels.empty()) throw DataError("cannot aggregate zero window votes");
    std::size_t n_dmd = 0;
    for (const int v : window_labels) n_dmd += static_cast<std::size_t>(v != 0);
    return 2 * n_dmd >= window_labels.size() ? Group::DMD : Group::TD;
}

// ---------------------------------------------------------------------------
// Welch's t-test
// ---------------------------------------------------------------------------

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16, kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

/// Regularized incomplete beta I_x(a, b).
inline double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

inline double sample_mean(const std::vector<double>& v) {
    double acc = 0.0;
    for (const double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (const double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size() - 1);
}

} // namespace detail

inline constexpr double kVarianceFloor = 1e-12;

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom and a two-tailed p-value. Zero sample variances are floored at
/// kVarianceFloor so constant samples compare by their means.
inline WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw DataError("welch test needs at least 2 values per sample");
    for (const double x : a)
        if (!std::isfinite(x)) throw DataError("welch test sample contains non-finite values");
    for (const double x : b)
        if (!std::isfinite(x)) throw DataError("welch test sample contains non-finite values");

    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = detail::sample_mean(a), mb = detail::sample_mean(b);
    const double va = std::max(detail::sample_variance(a, ma), kVarianceFloor);
    const double vb = std::max(detail::sample_variance(b, mb), kVarianceFloor);

    const double sa = va / na, sb = vb / nb;
    const double se2 = sa + sb;
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    r.p = detail::incbeta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
    return r;
}

// ---------------------------------------------------------------------------
// Group statistics (feature table level)
// ---------------------------------------------------------------------------

struct GroupStat {
    std::optional<ActivityKind> activity; // absent = pooled "All" row
    std::string feature;
    std::size_t n_td = 0, n_dmd = 0;
    double td_mean = 0.0, td_sd = 0.0;
    double dmd_mean = 0.0, dmd_sd = 0.0;
    std::optional<WelchResult> welch; // absent when a group is too small
    std::string error;                // why welch is absent, when it is
};

namespace detail {

inline double sd_or_zero(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    return std::sqrt(sample_variance(v, mean));
}

} // namespace detail

/// Per-activity (plus pooled "All") TD-vs-DMD comparison of every feature,
/// computed from successfully extracted feature rows. TP and FI are reported
/// in display units (x1e6 and x1e3) to match the rendered tables; the Welch
/// test is scale-invariant, so p-values are unaffected.
inline std::array<double, 8> report_scaled(const FeatureVector& f) {
    auto v = f.values();
    v[3] *= features::kTpReportScale;
    v[7] *= features::kFiReportScale;
    return v;
}

inline std::vector<GroupStat> compute_group_stats(const Dataset& ds,
                                                  const features::FeatureTable& table) {
    const auto names = FeatureVector::names();

    std::vector<std::optional<ActivityKind>> blocks;
    blocks.push_back(std::nullopt);
    for (const ActivityKind k : kAllActivities) blocks.push_back(k);

    std::vector<GroupStat> out;
    for (const auto& block : blocks) {
        // samples[feature][group]
        std::vector<std::array<std::vector<double>, 2>> samples(names.size());
        for (const auto& row : table.rows) {
            if (block && row.activity != *block) continue;
            const ParticipantRecord* who = ds.find_participant(row.participant_id);
            if (!who) continue;
            const auto g = static_cast<std::size_t>(who->group == Group::DMD);
            const auto values = report_scaled(row.features);
            for (std::size_t f = 0; f < names.size(); ++f) samples[f][g].push_back(values[f]);
        }
        for (std::size_t f = 0; f < names.size(); ++f) {
            GroupStat s;
            s.activity = block;
            s.feature = names[f];
            s.n_td = samples[f][0].size();
            s.n_dmd = samples[f][1].size();
            if (s.n_td + s.n_dmd == 0) continue; // activity absent entirely
            if (s.n_td > 0) {
                s.td_mean = detail::sample_mean(samples[f][0]);
                s.td_sd = detail::sd_or_zero(samples[f][0], s.td_mean);
            }
            if (s.n_dmd > 0) {
                s.dmd_mean = detail::sample_mean(samples[f][1]);
                s.dmd_sd = detail::sd_or_zero(samples[f][1], s.dmd_mean);
            }
            if (s.n_td >= 2 && s.n_dmd >= 2) {
                s.welch = welch_ttest(samples[f][0], samples[f][1]);
            } else {
                s.error = "fewer than 2 values in a group";
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class Method { CML_CF, CML_RAW, DL_RAW };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::CML_CF: return "cml-cf";
        case Method::CML_RAW: return "cml-raw";
        case Method::DL_RAW: return "dl-raw";
    }
    throw ParameterError("invalid method");
}

inline std::optional<Method> method_from_string(const std::string& s) {
    for (const Method m : {Method::CML_CF, Method::CML_RAW, Method::DL_RAW})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

struct FoldOutcome {
    std::string held_out;
    Group truth = Group::TD;
    std::optional<Group> predicted;
    std::optional<std::pair<int, int>> window_votes; // (n_dmd, n_total), raw modes
    bool skipped_single_class = false;
    std::string error; // nonempty when the fold failed
};

struct CellResult {
    ActivityKind activity = ActivityKind::SixMWT;
    Method method = Method::CML_CF;
    ml::ModelKind model = ml::ModelKind::kNN; // meaningless for DL_RAW
    ml::ProjectionKind projection = ml::ProjectionKind::None;
    std::optional<int> window_len;
    std::vector<FoldOutcome> folds;
    int correct = 0;
    int total = 0; // folds with a prediction

    double accuracy_pct() const {
        return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    }
};

struct ExperimentConfig {
    Method method = Method::CML_CF;
    ml::ModelKind model = ml::ModelKind::kNN;
    ml::ProjectionKind projection = ml::ProjectionKind::None;
    std::optional<int> window_len;                 // required for raw methods
    std::vector<ActivityKind> activities;          // empty = all present in the dataset
    std::uint64_t seed = 0;
    ml::Hyper hyper;
    dl::CnnConfig cnn;
    int threads = 1;

    void validate() const {
        if (method != Method::CML_CF && !window_len)
            throw ConfigError("raw methods require a window length");
        if (method == Method::CML_CF && window_len)
            throw ConfigError("feature-mode experiments take no window length");
        if (method == Method::DL_RAW && projection != ml::ProjectionKind::None)
            throw ConfigError("projections do not apply to the CNN pipeline");
        if (window_len && !dsp::is_canonical_window_len(static_cast<std::size_t>(*window_len)))
            throw ParameterError("window length is not one of the supported sizes");
        if (threads < 1) throw ParameterError("thread count must be positive");
    }
};

namespace detail {

/// Runs fn(0..n-1) on up to `threads` workers; slot writes keep the result
/// order deterministic regardless of scheduling.
template <typename Fn>
inline void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mu;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

struct ActivityData {
    // CF mode: one feature row per subject (first recording of the activity).
    std::map<std::string, std::vector<double>> cf_rows;
    std::map<std::string, std::string> cf_errors;
    // Raw modes: per-subject windows, each 3*len axis-major.
    std::map<std::string, std::vector<std::vector<double>>> windows;
};

inline ActivityData collect_activity_data(const Dataset& ds, ActivityKind activity,
                                          Method method, std::optional<int> window_len,
                                          const features::FeatureTable& table) {
    ActivityData out;
    if (method == Method::CML_CF) {
        for (const auto& row : table.rows)
            if (row.activity == activity && !out.cf_rows.count(row.participant_id)) {
                const auto v = row.features.values();
                out.cf_rows[row.participant_id] = std::vector<double>(v.begin(), v.end());
            }
        const std::string suffix = "/" + gaitlab::to_string(activity);
        for (const auto& err : table.errors) {
            if (err.recording.size() <= suffix.size() ||
                err.recording.compare(err.recording.size() - suffix.size(), suffix.size(),
                                      suffix) != 0)
                continue;
            const std::string pid = err.recording.substr(0, err.recording.size() - suffix.size());
            out.cf_errors.emplace(pid, err.message);
        }
        return out;
    }
    const auto len = static_cast<std::size_t>(*window_len);
    for (const auto& rec : ds.recordings) {
        if (rec.activity.kind != activity) continue;
        const dsp::WindowBatch batch = dsp::segment(rec, len);
        auto& dest = out.windows[rec.participant_id];
        for (const auto& w : batch.windows) dest.push_back(w);
    }
    return out;
}

inline FoldOutcome run_fold(const Dataset& ds, const ExperimentConfig& cfg,
                            ActivityKind activity, const ActivityData& data,
                            const Fold& fold) {
    FoldOutcome out;
    out.held_out = fold.held_out;
    out.truth = ds.find_participant(fold.held_out)->group;
    if (fold.single_class_train) {
        out.skipped_single_class = true;
        return out;
    }
    const std::uint64_t fold_seed =
        sub_seed(cfg.seed, gaitlab::to_string(activity) + "/" + fold.held_out);

    try {
        if (cfg.method == Method::CML_CF) {
            const auto it_err = data.cf_errors.find(fold.held_out);
            if (it_err != data.cf_errors.end())
                throw DataError("held-out features unavailable: " + it_err->second);
            const auto it = data.cf_rows.find(fold.held_out);
            if (it == data.cf_rows.end())
                throw DataError("held-out subject has no recording of this activity");

            ml::DesignMatrix train_m;
            bool td = false, dmd = false;
            for (const auto& id : fold.train_ids) {
                const auto row = data.cf_rows.find(id);
                if (row == data.cf_rows.end()) continue;
                const int label =
                    ds.find_participant(id)->group == Group::DMD ? ml::kLabelDMD : ml::kLabelTD;
                (label == ml::kLabelDMD ? dmd : td) = true;
                train_m.add_row(row->second, label, id);
            }
            if (!td || !dmd) {
                out.skipped_single_class = true;
                return out;
            }
            const ml::Model model =
                ml::train(cfg.model, train_m, cfg.hyper, cfg.projection, fold_seed);
            ml::DesignMatrix probe;
            probe.add_row(it->second, 0, fold.held_out);
            out.predicted =
                ml::predict(model, probe)[0] == ml::kLabelDMD ? Group::DMD : Group::TD;
            return out;
        }

        const auto held_it = data.windows.find(fold.held_out);
        if (held_it == data.windows.end() || held_it->second.empty())
            throw DataError("held-out subject has no complete windows of this activity");

        std::vector<std::vector<double>> train_w;
        std::vector<int> train_y;
        bool td = false, dmd = false;
        for (const auto& id : fold.train_ids) {
            const auto it = data.windows.find(id);
            if (it == data.windows.end()) continue;
            const int label =
                ds.find_participant(id)->group == Group::DMD ? ml::kLabelDMD : ml::kLabelTD;
            for (const auto& w : it->second) {
                train_w.push_back(w);
                train_y.push_back(label);
            }
            if (!it->second.empty()) (label == ml::kLabelDMD ? dmd : td) = true;
        }
        if (!td || !dmd) {
            out.skipped_single_class = true;
            return out;
        }

        std::vector<int> votes;
        if (cfg.method == Method::CML_RAW) {
            ml::DesignMatrix train_m;
            for (std::size_t i = 0; i < train_w.size(); ++i)
                train_m.add_row(train_w[i], train_y[i], "w");
            const ml::Model model =
                ml::train(cfg.model, train_m, cfg.hyper, cfg.projection, fold_seed);
            ml::DesignMatrix probe;
            for (const auto& w : held_it->second) probe.add_row(w, 0, fold.held_out);
            votes = ml::predict(model, probe);
        } else {
            const auto len = static_cast<std::size_t>(*cfg.window_len);
            const dl::Cnn net = dl::train_cnn(train_w, train_y, len, cfg.cnn, fold_seed);
            votes = dl::cnn_predict(net, held_it->second);
        }
        int n_dmd = 0;
        for (const int v : votes) n_dmd += v != 0;
        out.window_votes = {n_dmd, static_cast<int>(votes.size())};
        out.predicted = aggregate_votes(votes);
        return out;
    } catch (const Error& e) {
        out.error = e.what();
        out.predicted.reset();
        return out;
    }
}

} // namespace detail

/// Full LOO experiment for one pipeline configuration across activities.
/// Preprocessing (scaler, projection, CNN normalizer) is fit inside each
/// training fold only; fold failures are recorded, never dropped.
inline std::vector<CellResult> run_experiment(const Dataset& ds, const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<Fold> folds = loo_split(ds);

    // Leakage guard: folds must partition the subjects.
    {
        std::set<std::string> seen;
        for (const Fold& f : folds) {
            if (!seen.insert(f.held_out).second)
                throw DataError("duplicate held-out subject in fold plan");
            for (const auto& id : f.train_ids)
                if (id == f.held_out) throw DataError("subject leaked into its own training fold");
        }
        if (seen.size() != ds.participants.size())
            throw DataError("fold plan does not cover every subject");
    }

    std::vector<ActivityKind> activities = cfg.activities;
    if (activities.empty()) {
        std::set<ActivityKind> present;
        for (const auto& rec : ds.recordings) present.insert(rec.activity.kind);
        activities.assign(present.begin(), present.end());
    }

    features::FeatureTable table;
    if (cfg.method == Method::CML_CF) table = features::feature_table(ds);

    std::vector<CellResult> cells;
    for (const ActivityKind activity : activities) {
        const detail::ActivityData data =
            detail::collect_activity_data(ds, activity, cfg.method, cfg.window_len, table);

        CellResult cell;
        cell.activity = activity;
        cell.method = cfg.method;
        cell.model = cfg.model;
        cell.projection = cfg.method == Method::DL_RAW ? ml::ProjectionKind::None : cfg.projection;
        cell.window_len = cfg.window_len;
        cell.folds.resize(folds.size());

        detail::parallel_for(folds.size(), cfg.threads, [&](std::size_t i) {
            cell.folds[i] = detail::run_fold(ds, cfg, activity, data, folds[i]);
        });

        for (const FoldOutcome& f : cell.folds) {
            if (!f.predicted) continue;
            ++cell.total;
            cell.correct += *f.predicted == f.truth;
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Report assembly and rendering
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<GroupStat> stats;
    std::vector<CellResult> cells;
};

namespace detail {

inline std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

inline std::string pad(std::string s, std::size_t width) {
    // Overflowing cells still get one separating space.
    s.append(s.size() < width ? width - s.size() : 1, ' ');
    return s;
}

inline std::string p_cell(const std::optional<WelchResult>& w) {
    if (!w) return "-";
    if (w->p >= 0.05) return "NS";
    if (w->p < 0.0005) return "<0.001";
    return fmt("%.3f", w->p);
}

} // namespace detail

inline std::string activity_label(const std::optional<ActivityKind>& a) {
    return a ? gaitlab::to_string(*a) : "All";
}

/// Plain-text group-comparison table: one row per (activity, feature) with
/// mean (SD) per group and the Welch p-value, "NS" at p >= 0.05. Activities
/// with no extracted rows are listed in a footnote instead of the body.
inline std::string render_group_table(const std::vector<GroupStat>& stats) {
    std::string out;
    out += "Gait features by activity: TD vs DMD, mean (SD), Welch two-tailed p\n";
    out += detail::pad("activity", 10) + detail::pad("feature", 9) + detail::pad("TD", 18) +
           detail::pad("DMD", 18) + "p\n";

    std::set<std::string> missing;
    for (const GroupStat& s : stats) {
        if (s.n_td + s.n_dmd == 0) {
            missing.insert(activity_label(s.activity));
            continue;
        }
        std::string td = s.n_td ? detail::fmt("%.2f", s.td_mean) + " (" +
                                      detail::fmt("%.2f", s.td_sd) + ")"
                                : "-";
        std::string dmd = s.n_dmd ? detail::fmt("%.2f", s.dmd_mean) + " (" +
                                        detail::fmt("%.2f", s.dmd_sd) + ")"
                                  : "-";
        out += detail::pad(activity_label(s.activity), 10) + detail::pad(s.feature, 9) +
               detail::pad(td, 18) + detail::pad(dmd, 18) + detail::p_cell(s.welch) + "\n";
    }
    if (!missing.empty()) {
        out += "note: no data for ";
        bool first = true;
        for (const auto& a : missing) {
            if (!first) out += ", ";
            out += a;
            first = false;
        }
        out += "\n";
    }
    return out;
}

/// Plain-text best-accuracy table: one row per activity, one column per
/// method, each cell the best accuracy across that method's runs with the
/// configurations that achieved it.
inline std::string render_accuracy_table(const std::vector<CellResult>& cells) {
    std::string out;
    out += "Best leave-one-subject-out accuracy (percent) by method\n";
    out += detail::pad("activity", 10);
    for (const Method m : {Method::CML_CF, Method::CML_RAW, Method::DL_RAW})
        out += detail::pad(to_string(m), 26);
    out += "\n";

    std::set<ActivityKind> acts;
    for (const CellResult& c : cells) acts.insert(c.activity);

    for (const ActivityKind a : acts) {
        out += detail::pad(gaitlab::to_string(a), 10);
        for (const Method m : {Method::CML_CF, Method::CML_RAW, Method::DL_RAW}) {
            double best = -1.0;
            for (const CellResult& c : cells)
                if (c.activity == a && c.method == m && c.total > 0)
                    best = std::max(best, c.accuracy_pct());
            if (best < 0.0) {
                out += detail::pad("-", 26);
                continue;
            }
            // Everything that ties for the best accuracy contributes its
            // model kind and window length to the cell annotation.
            std::set<std::string> kinds;
            std::set<int> tws;
            for (const CellResult& c : cells)
                if (c.activity == a && c.method == m && c.total > 0 &&
                    c.accuracy_pct() == best) {
                    if (m != Method::DL_RAW) kinds.insert(ml::to_string(c.model));
                    if (c.window_len) tws.insert(*c.window_len);
                }
            std::string cell = detail::fmt("%.2f", best);
            std::string note;
            for (const auto& k : kinds) note += (note.empty() ? "" : ",") + k;
            if (!tws.empty()) {
                note += note.empty() ? "TW " : "; TW ";
                bool first = true;
                for (const int t : tws) {
                    if (!first) note += ",";
                    note += std::to_string(t);
                    first = false;
                }
            }
            if (!note.empty()) cell += " (" + note + ")";
            out += detail::pad(cell, 26);
        }
        out += "\n";
    }
    return out;
}

/// Per-recording feature rows joined with group and clinical score, for
/// external feature-vs-speed scatter plots.
inline std::string render_scatter_csv(const Dataset& ds, const features::FeatureTable& table) {
    std::string out = "participant_id,group,activity,nsaa,sp,sf,sl,tp,vp,mp,ap,fi\n";
    for (const auto& row : table.rows) {
        const ParticipantRecord* who = ds.find_participant(row.participant_id);
        if (!who) continue;
        out += row.participant_id + "," + gaitlab::to_string(who->group) + "," +
               gaitlab::to_string(row.activity) + ",";
        out += who->nsaa ? std::to_string(*who->nsaa) : std::string("");
        for (const double v : report_scaled(row.features)) out += "," + detail::fmt("%.10g", v);
        out += "\n";
    }
    return out;
}

inline nlohmann::json to_json(const WelchResult& w) {
    return {{"t", w.t}, {"df", w.df}, {"p", w.p}};
}

inline nlohmann::json to_json(const GroupStat& s) {
    nlohmann::json j;
    j["activity"] = activity_label(s.activity);
    j["feature"] = s.feature;
    j["n_td"] = s.n_td;
    j["n_dmd"] = s.n_dmd;
    j["td_mean"] = s.td_mean;
    j["td_sd"] = s.td_sd;
    j["dmd_mean"] = s.dmd_mean;
    j["dmd_sd"] = s.dmd_sd;
    j["welch"] = s.welch ? to_json(*s.welch) : nlohmann::json(nullptr);
    if (!s.error.empty()) j["error"] = s.error;
    return j;
}

inline nlohmann::json to_json(const FoldOutcome& f) {
    nlohmann::json j;
    j["held_out"] = f.held_out;
    j["truth"] = gaitlab::to_string(f.truth);
    j["predicted"] = f.predicted ? nlohmann::json(gaitlab::to_string(*f.predicted))
                                 : nlohmann::json(nullptr);
    if (f.window_votes)
        j["window_votes"] = {{"dmd", f.window_votes->first}, {"total", f.window_votes->second}};
    if (f.skipped_single_class) j["skipped_single_class"] = true;
    if (!f.error.empty()) j["error"] = f.error;
    return j;
}

inline nlohmann::json to_json(const CellResult& c) {
    nlohmann::json j;
    j["activity"] = gaitlab::to_string(c.activity);
    j["method"] = to_string(c.method);
    if (c.method != Method::DL_RAW) {
        j["model"] = ml::to_string(c.model);
        j["projection"] = ml::to_string(c.projection);
    }
    j["window_len"] = c.window_len ? nlohmann::json(*c.window_len) : nlohmann::json(nullptr);
    j["correct"] = c.correct;
    j["total"] = c.total;
    j["accuracy_pct"] = c.accuracy_pct();
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldOutcome& f : c.folds) folds.push_back(to_json(f));
    j["folds"] = folds;
    return j;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    nlohmann::json stats = nlohmann::json::array();
    for (const GroupStat& s : r.stats) stats.push_back(to_json(s));
    nlohmann::json cells = nlohmann::json::array();
    for (const CellResult& c : r.cells) cells.push_back(to_json(c));
    j["stats"] = stats;
    j["experiments"] = cells;
    return j;
}

/// Parses one experiment cell back from its JSON form (the inverse of
/// to_json(CellResult) as far as rendering needs go).
inline CellResult cell_from_json(const nlohmann::json& j) {
    try {
        CellResult c;
        const auto act = activity_from_string(j.at("activity").get<std::string>());
        if (!act) throw ParseError("experiment cell names an unknown activity");
        c.activity = *act;
        const auto method = method_from_string(j.at("method").get<std::string>());
        if (!method) throw ParseError("experiment cell names an unknown method");
        c.method = *method;
        if (c.method != Method::DL_RAW) {
            const auto kind = ml::model_kind_from_string(j.at("model").get<std::string>());
            const auto proj =
                ml::projection_kind_from_string(j.at("projection").get<std::string>());
            if (!kind || !proj) throw ParseError("experiment cell names an unknown model");
            c.model = *kind;
            c.projection = *proj;
        }
        if (!j.at("window_len").is_null()) c.window_len = j["window_len"].get<int>();
        c.correct = j.at("correct").get<int>();
        c.total = j.at("total").get<int>();
        for (const auto& jf : j.at("folds")) {
            FoldOutcome f;
            f.held_out = jf.at("held_out").get<std::string>();
            f.truth = group_from_string(jf.at("truth").get<std::string>());
            if (!jf.at("predicted").is_null())
                f.predicted = group_from_string(jf["predicted"].get<std::string>());
            if (jf.contains("window_votes"))
                f.window_votes = {jf["window_votes"].at("dmd").get<int>(),
                                  jf["window_votes"].at("total").get<int>()};
            if (jf.contains("skipped_single_class"))
                f.skipped_single_class = jf["skipped_single_class"].get<bool>();
            if (jf.contains("error")) f.error = jf["error"].get<std::string>();
            c.folds.push_back(std::move(f));
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad experiment cell: ") + e.what());
    }
}

} // namespace gaitlab::eval
