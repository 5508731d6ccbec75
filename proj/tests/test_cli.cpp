#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "gaitlab/cnn.hpp"
#include "gaitlab/manifest.hpp"
#include "gaitlab/ml.hpp"

using namespace gaitlab;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp_or_empty(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Runs one shell command, capturing exit code, stdout, and stderr.
CmdResult run_cmd(const std::string& cmd) {
    static int counter = 0;
    const fs::path dir = fs::path("cli_test") / "io";
    fs::create_directories(dir);
    const fs::path so = dir / ("out" + std::to_string(counter));
    const fs::path se = dir / ("err" + std::to_string(counter));
    ++counter;
    const std::string full = cmd + " >" + so.string() + " 2>" + se.string();
    const int rc = std::system(full.c_str());
    CmdResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp_or_empty(so);
    r.err = slurp_or_empty(se);
    return r;
}

const std::string kBin = GAITLAB_BIN;

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path("cli_test") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// One small dataset shared by the read-only subcommand tests.
fs::path shared_dataset() {
    static fs::path dir;
    if (dir.empty()) {
        dir = fresh_dir("shared_ds");
        const auto r = run_cmd(kBin + " synth --preset clinical-shape --seed 11 --out " +
                               dir.string());
        REQUIRE(r.code == 0);
    }
    return dir;
}

/// Sorted (path, bytes) snapshot of a directory tree.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> snap;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            snap[e.path().lexically_relative(dir).string()] = slurp_or_empty(e.path());
    return snap;
}

} // namespace

TEST_CASE("synth writes a loadable reproducible dataset", "[cli]") {
    const fs::path a = fresh_dir("synth_a");
    const fs::path b = fresh_dir("synth_b");
    const std::string flags = " synth --preset clinical-shape --seed 11 --out ";
    REQUIRE(run_cmd(kBin + flags + a.string()).code == 0);
    REQUIRE(run_cmd(kBin + flags + b.string()).code == 0);

    const Dataset ds = io::load_manifest(a / "manifest.json");
    REQUIRE(ds.participants.size() == 12);
    REQUIRE(ds.recordings.size() == 12);

    // Same seed, same bytes (run.json records the out dir, so compare the rest).
    auto sa = snapshot(a), sb = snapshot(b);
    sa.erase("run.json");
    sb.erase("run.json");
    REQUIRE(sa == sb);

    const nlohmann::json run = nlohmann::json::parse(slurp_or_empty(a / "run.json"));
    REQUIRE(run["subcommand"] == "synth");
    REQUIRE(run["seed"] == 11);
    REQUIRE(run["preset"] == "clinical-shape");
}

TEST_CASE("bad flags exit one with a pointed message", "[cli]") {
    const auto bad_preset = run_cmd(kBin + " synth --preset mystery --seed 1 --out cli_test/x");
    REQUIRE(bad_preset.code == 1);
    REQUIRE(bad_preset.err.find("--preset") != std::string::npos);

    const auto no_sub = run_cmd(kBin);
    REQUIRE(no_sub.code == 1);

    const auto unknown = run_cmd(kBin + " frobnicate");
    REQUIRE(unknown.code == 1);

    const auto help = run_cmd(kBin + " --help");
    REQUIRE(help.code == 0);
    REQUIRE(help.out.find("synth") != std::string::npos);
    REQUIRE(help.out.find("eval") != std::string::npos);
}

TEST_CASE("eval without a window length names the missing flag", "[cli]") {
    const fs::path ds = shared_dataset();
    const auto r = run_cmd(kBin + " eval --data " + ds.string() +
                           " --method dl-raw --seed 1 --out cli_test/never");
    REQUIRE(r.code == 1);
    REQUIRE(r.err.find("--tw") != std::string::npos);

    const auto bad_tw = run_cmd(kBin + " eval --data " + ds.string() +
                                " --method cml-raw --tw 77 --seed 1 --out cli_test/never");
    REQUIRE(bad_tw.code == 1);
    REQUIRE(bad_tw.err.find("--tw") != std::string::npos);
}

TEST_CASE("missing data paths are runtime errors", "[cli]") {
    const auto r = run_cmd(kBin + " stats --data cli_test/no_such_dir --out cli_test/never");
    REQUIRE(r.code == 2);
    REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("extract emits the feature table", "[cli]") {
    const fs::path ds = shared_dataset();
    const fs::path out = fresh_dir("extract_out");
    const auto r = run_cmd(kBin + " extract --data " + ds.string() + " --out " + out.string());
    REQUIRE(r.code == 0);

    const std::string csv = slurp_or_empty(out / "features.csv");
    REQUIRE(csv.rfind("participant_id,activity,sp,sf,sl,tp,vp,mp,ap,fi\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 13); // header + 12 rows
    REQUIRE(fs::exists(out / "run.json"));
}

TEST_CASE("stats renders group tables and scatter data", "[cli]") {
    const fs::path ds = shared_dataset();
    const fs::path out = fresh_dir("stats_out");
    const auto r = run_cmd(kBin + " stats --data " + ds.string() + " --out " + out.string());
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("Welch two-tailed p") != std::string::npos);
    REQUIRE(r.out.find("All") != std::string::npos);

    REQUIRE(slurp_or_empty(out / "stats.txt") == r.out);
    const nlohmann::json stats = nlohmann::json::parse(slurp_or_empty(out / "stats.json"));
    REQUIRE(stats.is_array());
    REQUIRE(stats.size() == 16); // pooled block + 6MWT block
    const std::string scatter = slurp_or_empty(out / "scatter.csv");
    REQUIRE(scatter.rfind("participant_id,group,activity,nsaa,", 0) == 0);
}

TEST_CASE("eval runs feature mode and records the full config", "[cli]") {
    const fs::path ds = shared_dataset();
    const fs::path out = fresh_dir("eval_cf");
    const auto r = run_cmd(kBin + " eval --data " + ds.string() +
                           " --method cml-cf --model knn --seed 11 --out " + out.string());
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("Best leave-one-subject-out accuracy") != std::string::npos);

    const nlohmann::json j = nlohmann::json::parse(slurp_or_empty(out / "eval.json"));
    REQUIRE(j["experiments"].size() == 1);
    REQUIRE(j["experiments"][0]["folds"].size() == 12);
    REQUIRE(j["experiments"][0]["total"] == 12);

    const nlohmann::json run = nlohmann::json::parse(slurp_or_empty(out / "run.json"));
    REQUIRE(run["method"] == "cml-cf");
    REQUIRE(run["model"] == "knn");
    REQUIRE(run["tw"].is_null());
    REQUIRE(run["seed"] == 11);
}

TEST_CASE("window flags accept second aliases", "[cli]") {
    const fs::path ds = shared_dataset();
    const fs::path out = fresh_dir("eval_alias");
    const auto r = run_cmd(kBin + " eval --data " + ds.string() +
                           " --method cml-raw --model dt --tw 5 --seed 3 --out " +
                           out.string());
    REQUIRE(r.code == 0);
    const nlohmann::json run = nlohmann::json::parse(slurp_or_empty(out / "run.json"));
    REQUIRE(run["tw"] == 150); // "5" seconds -> 150 samples
    const nlohmann::json j = nlohmann::json::parse(slurp_or_empty(out / "eval.json"));
    REQUIRE(j["experiments"][0]["window_len"] == 150);
    REQUIRE(j["experiments"][0]["folds"][0].contains("window_votes"));
}

TEST_CASE("eval results are reproducible and inputs stay untouched", "[cli]") {
    const fs::path ds = shared_dataset();
    const auto before = snapshot(ds);

    const fs::path o1 = fresh_dir("eval_rep1");
    const fs::path o2 = fresh_dir("eval_rep2");
    const std::string flags = " eval --data " + ds.string() +
                              " --method cml-cf --model rf --projection pca2 --seed 4 --out ";
    REQUIRE(run_cmd(kBin + flags + o1.string()).code == 0);
    REQUIRE(run_cmd(kBin + flags + o2.string()).code == 0);
    REQUIRE(slurp_or_empty(o1 / "eval.json") == slurp_or_empty(o2 / "eval.json"));

    REQUIRE(snapshot(ds) == before); // no subcommand mutates its input
}

TEST_CASE("deep evaluation runs through the cli", "[cli]") {
    const fs::path ds = fresh_dir("dl_ds");
    REQUIRE(run_cmd(kBin + " synth --preset clinical-shape --seed 5 --n-per-group 2"
                           " --duration 10 --out " +
                    ds.string())
                .code == 0);
    const fs::path out = fresh_dir("dl_out");
    const auto r = run_cmd(kBin + " eval --data " + ds.string() +
                           " --method dl-raw --tw 150 --seed 5 --epochs 2 --out " +
                           out.string());
    REQUIRE(r.code == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp_or_empty(out / "eval.json"));
    REQUIRE(j["experiments"][0]["total"] == 4);
    REQUIRE_FALSE(j["experiments"][0].contains("model"));
}

TEST_CASE("train saves loadable model artifacts", "[cli]") {
    const fs::path ds = shared_dataset();

    const fs::path m_out = fresh_dir("train_cf");
    const auto r1 = run_cmd(kBin + " train --data " + ds.string() +
                            " --method cml-cf --model svm --projection lda1 --seed 9 --out " +
                            m_out.string());
    REQUIRE(r1.code == 0);
    const auto model = ml::model_from_json(
        nlohmann::json::parse(slurp_or_empty(m_out / "model.json")));
    REQUIRE(model.kind == ml::ModelKind::SVM);
    REQUIRE(model.projection.has_value());
    REQUIRE(model.dim_in == 8);

    const fs::path c_out = fresh_dir("train_dl");
    const auto r2 = run_cmd(kBin + " train --data " + ds.string() +
                            " --method dl-raw --tw 50 --seed 9 --epochs 2 --out " +
                            c_out.string());
    REQUIRE(r2.code == 0);
    const dl::Cnn net = dl::load_checkpoint((c_out / "cnn.json").string());
    REQUIRE(net.len == 50);
    REQUIRE(net.train_loss.size() == 3); // initial + 2 epochs

    const auto r3 = run_cmd(kBin + " train --data " + ds.string() +
                            " --method cml-cf --tw 30 --seed 9 --out cli_test/never");
    REQUIRE(r3.code == 1); // --tw is rejected for feature mode
}

TEST_CASE("report merges stats with evaluation results", "[cli]") {
    const fs::path ds = shared_dataset();
    const fs::path e1 = fresh_dir("rep_e1");
    const fs::path e2 = fresh_dir("rep_e2");
    REQUIRE(run_cmd(kBin + " eval --data " + ds.string() +
                    " --method cml-cf --model knn --seed 11 --out " + e1.string())
                .code == 0);
    REQUIRE(run_cmd(kBin + " eval --data " + ds.string() +
                    " --method cml-raw --model dt --tw 90 --seed 11 --out " + e2.string())
                .code == 0);

    const fs::path out = fresh_dir("rep_out");
    const auto r = run_cmd(kBin + " report --data " + ds.string() + " --eval " +
                           (e1 / "eval.json").string() + " --eval " +
                           (e2 / "eval.json").string() + " --out " + out.string());
    REQUIRE(r.code == 0);

    const std::string text = slurp_or_empty(out / "report.txt");
    REQUIRE(text.find("Gait features by activity") != std::string::npos);
    REQUIRE(text.find("Best leave-one-subject-out accuracy") != std::string::npos);
    REQUIRE(text.find("(knn)") != std::string::npos);
    REQUIRE(text.find("TW 90") != std::string::npos);

    const nlohmann::json j = nlohmann::json::parse(slurp_or_empty(out / "report.json"));
    REQUIRE(j["experiments"].size() == 2);
    REQUIRE(j["stats"].size() == 16);
    REQUIRE(fs::exists(out / "scatter.csv"));
}

TEST_CASE("serve starts and stops cleanly from the cli", "[cli]") {
    const fs::path root = fresh_dir("serve_root");
    const auto r = run_cmd("timeout --preserve-status -s INT 2 " + kBin +
                           " serve --root " + root.string());
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("listening tcp=127.0.0.1:") != std::string::npos);
    REQUIRE(r.out.find("stored 0 sessions") != std::string::npos);

    // Storage root can come from the environment; an explicit flag wins.
    const fs::path env_root = fresh_dir("serve_env");
    const auto r2 = run_cmd("GAITLAB_STORAGE_ROOT=" + env_root.string() +
                            " timeout --preserve-status -s INT 2 " + kBin + " serve");
    REQUIRE(r2.code == 0);
    REQUIRE(r2.out.find("root=" + env_root.string()) != std::string::npos);

    const auto r3 = run_cmd(kBin + " serve");
    REQUIRE(r3.code == 1); // no --root anywhere
    REQUIRE(r3.err.find("--root") != std::string::npos);
}
