#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaitlab/types.hpp"

namespace gaitlab::io {

namespace fs = std::filesystem;

/// Timestamps are treated as uniform when successive gaps stay within this
/// tolerance of 1/rate; beyond it the series is resampled.
inline constexpr double kJitterToleranceS = 1e-5;

struct RawSeries {
    std::vector<double> t;
    std::array<std::vector<double>, 3> axes;
};

/// Writes `content` to `path` atomically (temp file + rename).
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Parses a raw-signal CSV (`t_s,ax_g,ay_g,az_g`). Timestamps must be
/// nondecreasing.
inline RawSeries read_signal_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing CSV: " + path.string());
    RawSeries s;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    // Tolerate an optional \r from foreign line endings.
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t_s,ax_g,ay_g,az_g")
        throw ParseError(path.string() + ": bad header '" + line + "'");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        double v[4];
        const char* p = line.c_str();
        char* end = nullptr;
        for (int i = 0; i < 4; ++i) {
            v[i] = std::strtod(p, &end);
            if (end == p)
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": expected number in column " + std::to_string(i + 1));
            p = end;
            if (i < 3) {
                if (*p != ',')
                    throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                     ": expected ',' after column " + std::to_string(i + 1));
                ++p;
            }
        }
        if (!s.t.empty() && v[0] < s.t.back())
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": timestamps must be nondecreasing");
        s.t.push_back(v[0]);
        for (int a = 0; a < 3; ++a) s.axes[a].push_back(v[a + 1]);
    }
    return s;
}

inline std::string format_signal_csv(const Recording& r) {
    std::string out = "t_s,ax_g,ay_g,az_g\n";
    out.reserve(out.size() + r.size() * 32);
    char buf[96];
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double t = static_cast<double>(i) / r.rate_hz;
        std::snprintf(buf, sizeof(buf), "%.6f,%.3f,%.3f,%.3f\n", t,
                      quantize_g(r.axes[0][i]), quantize_g(r.axes[1][i]),
                      quantize_g(r.axes[2][i]));
        out += buf;
    }
    return out;
}

/// True when the gaps between successive timestamps all match 1/rate.
inline bool is_uniform(const std::vector<double>& t, double rate_hz) {
    const double dt = 1.0 / rate_hz;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (std::fabs((t[i] - t[i - 1]) - dt) > kJitterToleranceS) return false;
    return true;
}

/// Linear interpolation of a jittered series onto the uniform grid
/// t[0] + k/rate. The grid covers [t.front(), t.back()].
inline std::array<std::vector<double>, 3> resample_linear(const RawSeries& s, double rate_hz) {
    if (s.t.size() < 2) throw ValidationError("resampling needs at least 2 samples");
    const double t0 = s.t.front();
    const double span = s.t.back() - t0;
    const std::size_t n_out = static_cast<std::size_t>(std::floor(span * rate_hz + 1e-9)) + 1;
    std::array<std::vector<double>, 3> out;
    for (auto& a : out) a.resize(n_out);
    std::size_t seg = 0;
    for (std::size_t k = 0; k < n_out; ++k) {
        const double tk = t0 + static_cast<double>(k) / rate_hz;
        while (seg + 2 < s.t.size() && s.t[seg + 1] < tk) ++seg;
        const double ta = s.t[seg], tb = s.t[seg + 1];
        double w = tb > ta ? (tk - ta) / (tb - ta) : 0.0;
        w = std::clamp(w, 0.0, 1.0);
        for (int a = 0; a < 3; ++a)
            out[a][k] = s.axes[a][seg] + w * (s.axes[a][seg + 1] - s.axes[a][seg]);
    }
    return out;
}

inline nlohmann::json manifest_to_json(const Dataset& d,
                                       const std::vector<std::string>& csv_paths) {
    nlohmann::json j;
    j["participants"] = nlohmann::json::array();
    for (const auto& p : d.participants) {
        nlohmann::json jp = {{"id", p.id},
                             {"group", to_string(p.group)},
                             {"age", p.age_years},
                             {"weight_kg", p.weight_kg},
                             {"height_m", p.height_m}};
        if (p.nsaa) jp["nsaa"] = *p.nsaa;
        j["participants"].push_back(jp);
    }
    j["recordings"] = nlohmann::json::array();
    for (std::size_t i = 0; i < d.recordings.size(); ++i) {
        const Recording& r = d.recordings[i];
        nlohmann::json jr = {{"participant_id", r.participant_id},
                             {"activity", to_string(r.activity.kind)},
                             {"csv_path", csv_paths[i]},
                             {"rate_hz", r.rate_hz}};
        if (r.annotations.observed_steps) jr["observed_steps"] = *r.annotations.observed_steps;
        if (r.annotations.measured_distance_m)
            jr["measured_distance_m"] = *r.annotations.measured_distance_m;
        if (r.annotations.truncated) jr["truncated"] = true;
        j["recordings"].push_back(jr);
    }
    return j;
}

/// Writes manifest.json plus one CSV per recording next to it.
/// Returns the csv paths used (relative to the manifest directory).
inline std::vector<std::string> write_manifest(const Dataset& d, const fs::path& manifest_path) {
    for (const auto& p : d.participants) p.validate();
    {
        std::set<std::string> ids;
        for (const auto& p : d.participants)
            if (!ids.insert(p.id).second)
                throw ValidationError("duplicate participant id: " + p.id);
    }
    for (const auto& r : d.recordings) r.validate();

    const fs::path dir = manifest_path.parent_path().empty() ? fs::path(".")
                                                             : manifest_path.parent_path();
    fs::create_directories(dir);

    std::vector<std::string> csv_paths;
    std::set<std::string> used;
    for (const auto& r : d.recordings) {
        std::string base = r.participant_id + "_" + to_string(r.activity.kind);
        std::string name = base + ".csv";
        for (int k = 2; used.count(name); ++k) name = base + "_" + std::to_string(k) + ".csv";
        used.insert(name);
        csv_paths.push_back(name);
        write_file_atomic(dir / name, format_signal_csv(r));
    }
    write_file_atomic(manifest_path, manifest_to_json(d, csv_paths).dump(2) + "\n");
    return csv_paths;
}

/// Loads and validates a manifest and every referenced CSV. Jittered series
/// are resampled onto the declared uniform grid.
inline Dataset load_manifest(const fs::path& manifest_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }

    Dataset d;
    const fs::path dir = manifest_path.parent_path().empty() ? fs::path(".")
                                                             : manifest_path.parent_path();
    try {
        for (const auto& jp : j.at("participants")) {
            ParticipantRecord p;
            p.id = jp.at("id").get<std::string>();
            p.group = group_from_string(jp.at("group").get<std::string>());
            p.age_years = jp.at("age").get<int>();
            p.weight_kg = jp.at("weight_kg").get<double>();
            p.height_m = jp.at("height_m").get<double>();
            if (jp.contains("nsaa") && !jp["nsaa"].is_null()) p.nsaa = jp["nsaa"].get<int>();
            p.validate();
            d.participants.push_back(std::move(p));
        }
        std::set<std::string> ids;
        for (const auto& p : d.participants)
            if (!ids.insert(p.id).second)
                throw ValidationError("duplicate participant id: " + p.id);

        for (const auto& jr : j.at("recordings")) {
            Recording r;
            r.participant_id = jr.at("participant_id").get<std::string>();
            const std::string act = jr.at("activity").get<std::string>();
            const auto kind = activity_from_string(act);
            if (!kind) throw ValidationError("unknown activity: '" + act + "'");
            r.activity = Activity::of(*kind);
            r.rate_hz = jr.at("rate_hz").get<double>();
            if (!(r.rate_hz > 0.0)) throw ValidationError("rate_hz must be positive");
            if (jr.contains("observed_steps"))
                r.annotations.observed_steps = jr["observed_steps"].get<int>();
            if (jr.contains("measured_distance_m"))
                r.annotations.measured_distance_m = jr["measured_distance_m"].get<double>();
            if (jr.contains("truncated")) r.annotations.truncated = jr["truncated"].get<bool>();

            const RawSeries s = read_signal_csv(dir / jr.at("csv_path").get<std::string>());
            if (s.t.size() >= 2 && !is_uniform(s.t, r.rate_hz)) {
                r.axes = resample_linear(s, r.rate_hz);
            } else {
                r.axes = s.axes;
            }
            r.validate();
            d.recordings.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    return d;
}

} // namespace gaitlab::io
