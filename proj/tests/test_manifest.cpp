#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gaitlab/manifest.hpp"
#include "gaitlab/rng.hpp"

namespace io = gaitlab::io;
namespace fs = std::filesystem;
using Catch::Matchers::WithinAbs;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("gaitlab_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

gaitlab::Dataset small_dataset() {
    gaitlab::Dataset d;
    d.participants.push_back({"td01", gaitlab::Group::TD, 8, 28.5, 1.31, std::nullopt});
    d.participants.push_back({"dmd01", gaitlab::Group::DMD, 9, 32.0, 1.28, 22});

    gaitlab::Rng rng(11);
    for (const auto* id : {"td01", "dmd01"}) {
        gaitlab::Recording r;
        r.participant_id = id;
        r.activity = gaitlab::Activity::of(gaitlab::ActivityKind::SixMWT);
        r.rate_hz = 30.0;
        for (int a = 0; a < 3; ++a) {
            r.axes[a].resize(90);
            for (auto& v : r.axes[a]) v = gaitlab::quantize_g(rng.uniform(-1.5, 1.5));
        }
        r.annotations.observed_steps = 12;
        d.recordings.push_back(std::move(r));
    }
    d.recordings[1].annotations.measured_distance_m = 310.0;
    return d;
}

} // namespace

TEST_CASE("manifest round-trips a dataset bit-exactly", "[manifest]") {
    const fs::path dir = fresh_dir("roundtrip");
    const auto d = small_dataset();
    const auto paths = io::write_manifest(d, dir / "manifest.json");
    REQUIRE(paths == std::vector<std::string>({"td01_6MWT.csv", "dmd01_6MWT.csv"}));
    REQUIRE(fs::exists(dir / "td01_6MWT.csv"));

    const auto loaded = io::load_manifest(dir / "manifest.json");
    REQUIRE(loaded.participants.size() == 2);
    REQUIRE(loaded.participants[0].id == "td01");
    REQUIRE(loaded.participants[1].group == gaitlab::Group::DMD);
    REQUIRE(loaded.participants[1].nsaa == 22);
    REQUIRE_THAT(loaded.participants[0].height_m, WithinAbs(1.31, 1e-12));

    REQUIRE(loaded.recordings.size() == 2);
    const auto& r0 = loaded.recordings[0];
    REQUIRE(r0.participant_id == "td01");
    REQUIRE(r0.activity.kind == gaitlab::ActivityKind::SixMWT);
    REQUIRE(r0.rate_hz == 30.0);
    REQUIRE(r0.annotations.observed_steps == 12);
    REQUIRE_FALSE(r0.annotations.measured_distance_m.has_value());
    REQUIRE(loaded.recordings[1].annotations.measured_distance_m == 310.0);

    // Values were quantized before writing, so the reload is exact.
    for (std::size_t i = 0; i < 2; ++i)
        for (int a = 0; a < 3; ++a) {
            REQUIRE(loaded.recordings[i].axes[a].size() == d.recordings[i].axes[a].size());
            for (std::size_t k = 0; k < 90; ++k) {
                CAPTURE(i, a, k);
                REQUIRE(loaded.recordings[i].axes[a][k] == d.recordings[i].axes[a][k]);
            }
        }
}

TEST_CASE("speed-calibration activities carry the course length", "[manifest]") {
    const fs::path dir = fresh_dir("course");
    auto d = small_dataset();
    d.recordings[0].activity = gaitlab::Activity::of(gaitlab::ActivityKind::SC_L3);
    io::write_manifest(d, dir / "manifest.json");
    const auto loaded = io::load_manifest(dir / "manifest.json");
    REQUIRE(loaded.recordings[0].activity.nominal_distance_m == 25.0);
    REQUIRE_FALSE(loaded.recordings[1].activity.nominal_distance_m.has_value());
}

TEST_CASE("duplicate csv names get disambiguated", "[manifest]") {
    const fs::path dir = fresh_dir("dup_csv");
    auto d = small_dataset();
    d.recordings.push_back(d.recordings[0]); // same participant + activity twice
    const auto paths = io::write_manifest(d, dir / "manifest.json");
    REQUIRE(paths.size() == 3);
    REQUIRE(paths[0] != paths[2]);
    REQUIRE(io::load_manifest(dir / "manifest.json").recordings.size() == 3);
}

TEST_CASE("duplicate participant ids are rejected", "[manifest]") {
    const fs::path dir = fresh_dir("dup_id");
    auto d = small_dataset();
    d.participants.push_back(d.participants[0]);
    REQUIRE_THROWS_AS(io::write_manifest(d, dir / "manifest.json"), gaitlab::ValidationError);
}

TEST_CASE("out-of-range samples are rejected at write time", "[manifest]") {
    const fs::path dir = fresh_dir("range");
    auto d = small_dataset();
    d.recordings[0].axes[2][5] = 2.5;
    REQUIRE_THROWS_AS(io::write_manifest(d, dir / "manifest.json"), gaitlab::ValidationError);
}

TEST_CASE("recordings shorter than two seconds are rejected", "[manifest]") {
    const fs::path dir = fresh_dir("short");
    auto d = small_dataset();
    for (int a = 0; a < 3; ++a) d.recordings[0].axes[a].resize(59);
    REQUIRE_THROWS_AS(io::write_manifest(d, dir / "manifest.json"), gaitlab::ValidationError);
}

TEST_CASE("csv parser reports malformed rows with location", "[manifest]") {
    const fs::path dir = fresh_dir("badcsv");
    std::ofstream(dir / "bad.csv") << "t_s,ax_g,ay_g,az_g\n0.0,0.1,0.2,oops\n";
    try {
        io::read_signal_csv(dir / "bad.csv");
        FAIL("expected ParseError");
    } catch (const gaitlab::ParseError& e) {
        REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("csv parser rejects a wrong header", "[manifest]") {
    const fs::path dir = fresh_dir("badheader");
    std::ofstream(dir / "bad.csv") << "time,x,y,z\n0.0,0.1,0.2,0.3\n";
    REQUIRE_THROWS_AS(io::read_signal_csv(dir / "bad.csv"), gaitlab::ParseError);
}

TEST_CASE("csv parser rejects decreasing timestamps", "[manifest]") {
    const fs::path dir = fresh_dir("backwards");
    std::ofstream(dir / "bad.csv")
        << "t_s,ax_g,ay_g,az_g\n0.000000,0.1,0.2,0.3\n0.033333,0.1,0.2,0.3\n0.020000,0.1,0.2,0.3\n";
    REQUIRE_THROWS_AS(io::read_signal_csv(dir / "bad.csv"), gaitlab::ParseError);
}

TEST_CASE("csv parser tolerates CRLF endings", "[manifest]") {
    const fs::path dir = fresh_dir("crlf");
    std::ofstream(dir / "ok.csv")
        << "t_s,ax_g,ay_g,az_g\r\n0.000000,0.100,0.200,0.300\r\n0.033333,0.101,0.201,0.301\r\n";
    const auto s = io::read_signal_csv(dir / "ok.csv");
    REQUIRE(s.t.size() == 2);
    REQUIRE(s.axes[2][1] == 0.301);
}

TEST_CASE("resample_linear interpolates onto the uniform grid", "[manifest]") {
    io::RawSeries s;
    s.t = {0.0, 0.04, 0.1};
    for (int a = 0; a < 3; ++a)
        for (const double t : s.t) s.axes[a].push_back(10.0 * t + a);
    const auto out = io::resample_linear(s, 30.0);
    // span 0.1 s at 30 Hz -> grid {0, 1/30, 2/30, 0.1 (just beyond 2/30)}.
    REQUIRE(out[0].size() == 4);
    const std::vector<double> grid = {0.0, 1.0 / 30.0, 2.0 / 30.0, 0.1};
    for (int a = 0; a < 3; ++a)
        for (std::size_t k = 0; k < grid.size(); ++k) {
            CAPTURE(a, k);
            REQUIRE_THAT(out[a][k], WithinAbs(10.0 * grid[k] + a, 1e-12));
        }
}

TEST_CASE("jittered timestamps trigger resampling on load", "[manifest]") {
    const fs::path dir = fresh_dir("jitter");
    const auto d = small_dataset();
    io::write_manifest(d, dir / "manifest.json");

    // Rewrite one CSV with a visibly jittered middle timestamp.
    {
        const auto orig = io::read_signal_csv(dir / "td01_6MWT.csv");
        std::ofstream out(dir / "td01_6MWT.csv");
        out << "t_s,ax_g,ay_g,az_g\n";
        char buf[96];
        for (std::size_t i = 0; i < orig.t.size(); ++i) {
            double t = orig.t[i];
            if (i == 40) t += 0.011; // ~1/3 of a sample period
            std::snprintf(buf, sizeof(buf), "%.6f,%.3f,%.3f,%.3f\n", t, orig.axes[0][i],
                          orig.axes[1][i], orig.axes[2][i]);
            out << buf;
        }
    }
    const auto loaded = io::load_manifest(dir / "manifest.json");
    const auto& r = loaded.recordings[0];
    REQUIRE(r.size() == 90); // same span, same grid length
    // Untouched leading samples are preserved verbatim by interpolation.
    REQUIRE(r.axes[0][0] == d.recordings[0].axes[0][0]);
    // The shifted neighborhood actually changed.
    bool changed = false;
    for (std::size_t k = 38; k <= 42; ++k)
        changed = changed || std::fabs(r.axes[0][k] - d.recordings[0].axes[0][k]) > 1e-9;
    REQUIRE(changed);
}

TEST_CASE("clean files reload without resampling", "[manifest]") {
    // A written file's %.6f timestamps must parse back as uniform, otherwise
    // every round-trip would silently interpolate.
    const fs::path dir = fresh_dir("uniform");
    io::write_manifest(small_dataset(), dir / "manifest.json");
    const auto s = io::read_signal_csv(dir / "td01_6MWT.csv");
    REQUIRE(io::is_uniform(s.t, 30.0));
}

TEST_CASE("loading a missing manifest raises an io error", "[manifest]") {
    REQUIRE_THROWS_AS(io::load_manifest("/nonexistent/manifest.json"), gaitlab::IoError);
}

TEST_CASE("malformed manifest json raises a parse error", "[manifest]") {
    const fs::path dir = fresh_dir("badjson");
    std::ofstream(dir / "manifest.json") << "{ not json";
    REQUIRE_THROWS_AS(io::load_manifest(dir / "manifest.json"), gaitlab::ParseError);
}

TEST_CASE("manifest with missing fields raises a parse error", "[manifest]") {
    const fs::path dir = fresh_dir("missingfield");
    std::ofstream(dir / "manifest.json")
        << R"({"participants":[{"id":"a","group":"TD"}],"recordings":[]})";
    REQUIRE_THROWS_AS(io::load_manifest(dir / "manifest.json"), gaitlab::ParseError);
}

TEST_CASE("recordings may reference participants absent from the manifest", "[manifest]") {
    // Ingested sessions can arrive before any roster is known; the loader
    // keeps them and downstream stages decide what to do.
    const fs::path dir = fresh_dir("orphan");
    auto d = small_dataset();
    d.participants.clear();
    io::write_manifest(d, dir / "manifest.json");
    const auto loaded = io::load_manifest(dir / "manifest.json");
    REQUIRE(loaded.participants.empty());
    REQUIRE(loaded.recordings.size() == 2);
    REQUIRE(loaded.find_participant("td01") == nullptr);
}
