/// gaitlab — single-accelerometer gait analysis toolkit.
///
/// Subcommands cover the full pipeline: synthesize cohorts, serve the
/// streaming ingest endpoint, extract gait features, compute group
/// statistics, train individual models, run leave-one-subject-out
/// evaluations, and render combined reports. Every run writes a run.json
/// capturing the full configuration and seed so results can be reproduced
/// from the output directory alone.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gaitlab/cnn.hpp"
#include "gaitlab/dsp.hpp"
#include "gaitlab/errors.hpp"
#include "gaitlab/eval.hpp"
#include "gaitlab/features.hpp"
#include "gaitlab/ingest.hpp"
#include "gaitlab/manifest.hpp"
#include "gaitlab/ml.hpp"
#include "gaitlab/synth.hpp"
#include "gaitlab/types.hpp"

namespace fs = std::filesystem;
using namespace gaitlab;

namespace {

std::atomic<bool> g_shutdown{false};
void handle_signal(int) { g_shutdown = true; }

/// Window length flag: sample counts {10,30,50,90,100,150} or the
/// second-based aliases 0.3, 1, 1.6, 3, 3.3, 5 (at the 30 Hz rate).
int parse_window_flag(const std::string& s) {
    static const std::vector<std::pair<std::string, int>> seconds = {
        {"0.3", 10}, {"1", 30}, {"1.6", 50}, {"3", 90}, {"3.3", 100}, {"5", 150}};
    for (const auto& [alias, samples] : seconds)
        if (s == alias) return samples;
    try {
        const int n = std::stoi(s);
        if (std::to_string(n) == s && dsp::is_canonical_window_len(static_cast<std::size_t>(n)))
            return n;
    } catch (const std::exception&) {
    }
    throw ParameterError("--tw must be one of 10, 30, 50, 90, 100, 150 samples "
                         "(or 0.3, 1, 1.6, 3, 3.3, 5 seconds); got '" +
                         s + "'");
}

std::vector<ActivityKind> parse_activities(const std::string& csv) {
    std::vector<ActivityKind> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        const std::string token = csv.substr(pos, comma - pos);
        pos = comma + 1;
        if (token.empty()) continue;
        const auto kind = activity_from_string(token);
        if (!kind) throw ParameterError("unknown activity '" + token + "'");
        out.push_back(*kind);
    }
    if (out.empty()) throw ParameterError("--activities must name at least one activity");
    return out;
}

Dataset load_dataset(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) p /= "manifest.json";
    return io::load_manifest(p);
}

void write_run_json(const fs::path& out_dir, const nlohmann::json& config) {
    io::write_file_atomic(out_dir / "run.json", config.dump(2) + "\n");
}

/// Collects raw windows of one length across recordings, with labels from
/// the participant group; activities empty = use every recording.
struct RawTrainingSet {
    std::vector<std::vector<double>> windows;
    std::vector<int> labels;
};

RawTrainingSet collect_windows(const Dataset& ds, int window_len,
                               const std::vector<ActivityKind>& activities) {
    RawTrainingSet set;
    for (const auto& rec : ds.recordings) {
        if (!activities.empty() &&
            std::find(activities.begin(), activities.end(), rec.activity.kind) ==
                activities.end())
            continue;
        const auto* p = ds.find_participant(rec.participant_id);
        if (!p) continue;
        const int label = p->group == Group::DMD ? ml::kLabelDMD : ml::kLabelTD;
        const auto batch = dsp::segment(rec, static_cast<std::size_t>(window_len));
        for (const auto& w : batch.windows) {
            set.windows.push_back(w);
            set.labels.push_back(label);
        }
    }
    return set;
}

int cmd_synth(const std::string& preset, std::uint64_t seed, const std::string& out,
              int n_per_group, double duration, bool verbose) {
    synth::CohortSpec spec;
    if (preset == "clinical-shape") {
        spec = synth::clinical_shape_spec();
    } else if (preset == "clinical-shape-full") {
        spec = synth::clinical_shape_full_spec();
    } else if (preset == "null-shape") {
        spec = synth::null_shape_spec();
    } else {
        throw ParameterError("--preset must be clinical-shape, clinical-shape-full, "
                             "or null-shape; got '" +
                             preset + "'");
    }
    if (n_per_group > 0) spec.n_per_group = n_per_group;
    if (duration > 0) spec.timed_duration_s = duration;

    const Dataset ds = synth::gen_cohort(spec, seed);
    const fs::path out_dir(out);
    io::write_manifest(ds, out_dir / "manifest.json");

    nlohmann::json run = {{"subcommand", "synth"},
                          {"preset", preset},
                          {"seed", seed},
                          {"n_per_group", spec.n_per_group},
                          {"timed_duration_s", spec.timed_duration_s},
                          {"out", out}};
    write_run_json(out_dir, run);
    if (verbose)
        std::cerr << "wrote " << ds.recordings.size() << " recordings for "
                  << ds.participants.size() << " participants\n";
    std::cout << (out_dir / "manifest.json").string() << "\n";
    return 0;
}

int cmd_serve(const std::string& addr, int port, int http_port, const std::string& root,
              int max_sessions, bool verbose) {
    if (root.empty())
        throw ParameterError("--root is required (or set GAITLAB_STORAGE_ROOT)");
    ingest::ServerConfig cfg;
    cfg.bind_address = addr;
    cfg.tcp_port = port;
    cfg.http_port = http_port;
    cfg.storage_root = root;
    cfg.max_sessions = max_sessions;
    if (!verbose) cfg.log = [](const std::string& msg) { std::cerr << msg << "\n"; };

    ingest::IngestServer server(cfg);
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    server.start();
    std::cout << "listening tcp=" << addr << ":" << server.tcp_port()
              << " http=" << addr << ":" << server.http_port() << " root=" << root
              << std::endl;
    while (!g_shutdown) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    std::cout << "stored " << server.store().sessions().size() << " sessions\n";
    return 0;
}

int cmd_extract(const std::string& data, const std::string& out, bool verbose) {
    const Dataset ds = load_dataset(data);
    const auto table = features::feature_table(ds);

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    io::write_file_atomic(out_dir / "features.csv", features::feature_table_csv(table));
    if (!table.errors.empty()) {
        nlohmann::json errs = nlohmann::json::array();
        for (const auto& e : table.errors)
            errs.push_back({{"recording", e.recording}, {"message", e.message}});
        io::write_file_atomic(out_dir / "extract_errors.json", errs.dump(2) + "\n");
        for (const auto& e : table.errors)
            std::cerr << "skipped " << e.recording << ": " << e.message << "\n";
    }
    write_run_json(out_dir, {{"subcommand", "extract"}, {"data", data}, {"out", out}});
    if (verbose)
        std::cerr << table.rows.size() << " feature rows, " << table.errors.size()
                  << " skipped recordings\n";
    std::cout << (out_dir / "features.csv").string() << "\n";
    return 0;
}

int cmd_stats(const std::string& data, const std::string& out, bool verbose) {
    const Dataset ds = load_dataset(data);
    const auto table = features::feature_table(ds);
    const auto stats = eval::compute_group_stats(ds, table);

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    const std::string group_table = eval::render_group_table(stats);
    nlohmann::json jstats = nlohmann::json::array();
    for (const auto& s : stats) jstats.push_back(eval::to_json(s));
    io::write_file_atomic(out_dir / "stats.txt", group_table);
    io::write_file_atomic(out_dir / "stats.json", jstats.dump(2) + "\n");
    io::write_file_atomic(out_dir / "scatter.csv", eval::render_scatter_csv(ds, table));
    write_run_json(out_dir, {{"subcommand", "stats"}, {"data", data}, {"out", out}});
    std::cout << group_table;
    if (verbose) std::cerr << stats.size() << " stat rows\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& method_s, const std::string& model_s,
              const std::string& proj_s, const std::string& tw, const std::string& acts,
              std::uint64_t seed, int epochs, const std::string& out, bool verbose) {
    const auto method = eval::method_from_string(method_s);
    if (!method) throw ParameterError("unknown --method '" + method_s + "'");
    const auto model_kind = ml::model_kind_from_string(model_s);
    if (!model_kind) throw ParameterError("unknown --model '" + model_s + "'");
    const auto projection = ml::projection_kind_from_string(proj_s);
    if (!projection) throw ParameterError("unknown --projection '" + proj_s + "'");
    std::optional<int> window_len;
    if (!tw.empty()) window_len = parse_window_flag(tw);
    if (*method != eval::Method::CML_CF && !window_len)
        throw ParameterError("--tw is required for raw methods (cml-raw, dl-raw)");
    if (*method == eval::Method::CML_CF && window_len)
        throw ParameterError("--tw does not apply to cml-cf");
    if (*method == eval::Method::DL_RAW && *projection != ml::ProjectionKind::None)
        throw ParameterError("--projection does not apply to dl-raw");
    if (epochs < 1) throw ParameterError("--epochs must be positive");

    std::vector<ActivityKind> activities;
    if (!acts.empty()) activities = parse_activities(acts);

    const Dataset ds = load_dataset(data);
    const fs::path out_dir(out);
    fs::create_directories(out_dir);

    nlohmann::json run = {{"subcommand", "train"}, {"data", data},
                          {"method", method_s},   {"model", model_s},
                          {"projection", proj_s}, {"tw", window_len ? nlohmann::json(*window_len)
                                                                    : nlohmann::json(nullptr)},
                          {"activities", acts},   {"seed", seed},
                          {"epochs", epochs},     {"out", out}};

    std::string artifact;
    if (*method == eval::Method::DL_RAW) {
        const auto set = collect_windows(ds, *window_len, activities);
        dl::CnnConfig cnn;
        cnn.epochs = epochs;
        const dl::Cnn net = dl::train_cnn(set.windows, set.labels,
                                          static_cast<std::size_t>(*window_len), cnn, seed);
        dl::save_checkpoint(net, (out_dir / "cnn.json").string(), "cnn.bin");
        artifact = (out_dir / "cnn.json").string();
        if (verbose)
            std::cerr << "trained on " << set.windows.size() << " windows; final loss "
                      << net.train_loss.back() << "\n";
    } else {
        ml::DesignMatrix matrix;
        if (*method == eval::Method::CML_CF) {
            const auto table = features::feature_table(ds);
            const auto names = FeatureVector::names();
            matrix.n_cols = names.size();
            matrix.column_names.assign(names.begin(), names.end());
            for (const auto& row : table.rows) {
                if (!activities.empty() &&
                    std::find(activities.begin(), activities.end(), row.activity) ==
                        activities.end())
                    continue;
                const auto* p = ds.find_participant(row.participant_id);
                if (!p) continue;
                const auto vals = row.features.values();
                matrix.add_row(std::vector<double>(vals.begin(), vals.end()),
                               p->group == Group::DMD ? ml::kLabelDMD : ml::kLabelTD,
                               row.participant_id);
            }
        } else {
            const auto set = collect_windows(ds, *window_len, activities);
            matrix.n_cols = static_cast<std::size_t>(*window_len) * 3;
            for (std::size_t i = 0; i < set.windows.size(); ++i)
                matrix.add_row(set.windows[i], set.labels[i], "");
        }
        const ml::Model model = ml::train(*model_kind, matrix, ml::Hyper{}, *projection, seed);
        io::write_file_atomic(out_dir / "model.json", ml::to_json(model).dump(2) + "\n");
        artifact = (out_dir / "model.json").string();
        if (verbose) std::cerr << "trained on " << matrix.n_rows << " rows\n";
    }
    write_run_json(out_dir, run);
    std::cout << artifact << "\n";
    return 0;
}

int cmd_eval(const std::string& data, const std::string& method_s, const std::string& model_s,
             const std::string& proj_s, const std::string& tw, const std::string& acts,
             std::uint64_t seed, int epochs, int threads, const std::string& out,
             bool verbose) {
    const auto method = eval::method_from_string(method_s);
    if (!method) throw ParameterError("unknown --method '" + method_s + "'");
    const auto model_kind = ml::model_kind_from_string(model_s);
    if (!model_kind) throw ParameterError("unknown --model '" + model_s + "'");
    const auto projection = ml::projection_kind_from_string(proj_s);
    if (!projection) throw ParameterError("unknown --projection '" + proj_s + "'");
    if (*method != eval::Method::CML_CF && tw.empty())
        throw ParameterError("--tw is required for raw methods (cml-raw, dl-raw)");
    if (epochs < 1) throw ParameterError("--epochs must be positive");

    eval::ExperimentConfig cfg;
    cfg.method = *method;
    cfg.model = *model_kind;
    cfg.projection = *projection;
    if (!tw.empty()) cfg.window_len = parse_window_flag(tw);
    if (!acts.empty()) cfg.activities = parse_activities(acts);
    cfg.seed = seed;
    cfg.cnn.epochs = epochs;
    cfg.threads = threads;
    cfg.validate(); // before any data is touched

    const Dataset ds = load_dataset(data);
    const auto cells = eval::run_experiment(ds, cfg);

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    eval::EvalReport report;
    report.cells = cells;
    io::write_file_atomic(out_dir / "eval.json", eval::to_json(report).dump(2) + "\n");
    const std::string accuracy_table = eval::render_accuracy_table(cells);
    io::write_file_atomic(out_dir / "accuracy.txt", accuracy_table);

    nlohmann::json run = {{"subcommand", "eval"}, {"data", data},
                          {"method", method_s},  {"model", model_s},
                          {"projection", proj_s},
                          {"tw", cfg.window_len ? nlohmann::json(*cfg.window_len)
                                                : nlohmann::json(nullptr)},
                          {"activities", acts},  {"seed", seed},
                          {"epochs", epochs},    {"threads", threads},
                          {"out", out}};
    write_run_json(out_dir, run);

    std::cout << accuracy_table;
    if (verbose)
        for (const auto& c : cells)
            std::cerr << gaitlab::to_string(c.activity) << ": " << c.correct << "/" << c.total
                      << "\n";
    return 0;
}

int cmd_report(const std::string& data, const std::vector<std::string>& eval_files,
               const std::string& out, bool verbose) {
    const Dataset ds = load_dataset(data);
    const auto table = features::feature_table(ds);

    eval::EvalReport report;
    report.stats = eval::compute_group_stats(ds, table);
    for (const auto& path : eval_files) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(io::read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what());
        }
        if (!j.contains("experiments"))
            throw ParseError(path + ": not an evaluation result file");
        for (const auto& jc : j["experiments"])
            report.cells.push_back(eval::cell_from_json(jc));
    }

    std::string text = eval::render_group_table(report.stats);
    if (!report.cells.empty()) text += "\n" + eval::render_accuracy_table(report.cells);

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    io::write_file_atomic(out_dir / "report.txt", text);
    io::write_file_atomic(out_dir / "report.json", eval::to_json(report).dump(2) + "\n");
    io::write_file_atomic(out_dir / "scatter.csv", eval::render_scatter_csv(ds, table));

    nlohmann::json run = {{"subcommand", "report"},
                          {"data", data},
                          {"eval", eval_files},
                          {"out", out}};
    write_run_json(out_dir, run);
    std::cout << text;
    if (verbose) std::cerr << report.cells.size() << " experiment cells merged\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-accelerometer gait analysis toolkit"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log progress details to standard error");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic cohort dataset");
    std::string sy_preset, sy_out;
    std::uint64_t sy_seed = 0;
    int sy_n = 0;
    double sy_duration = 0;
    synth_cmd->add_option("--preset", sy_preset,
                          "Cohort preset: clinical-shape, clinical-shape-full, null-shape")
        ->required();
    synth_cmd->add_option("--seed", sy_seed, "Master random seed")->required();
    synth_cmd->add_option("--out", sy_out, "Output dataset directory")->required();
    synth_cmd->add_option("--n-per-group", sy_n, "Override participants per group");
    synth_cmd->add_option("--duration", sy_duration, "Override timed-activity duration (s)");

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Run the streaming ingest server");
    std::string sv_addr = "127.0.0.1", sv_root;
    int sv_port = 0, sv_http_port = 0, sv_max = 32;
    serve_cmd->add_option("--addr", sv_addr, "Bind address");
    serve_cmd->add_option("--port", sv_port, "TCP stream port (0 picks one)");
    serve_cmd->add_option("--http-port", sv_http_port, "HTTP port (0 picks one)");
    serve_cmd->add_option("--root", sv_root, "Session storage root")
        ->envname("GAITLAB_STORAGE_ROOT");
    serve_cmd->add_option("--max-sessions", sv_max, "Concurrent session cap");

    // extract
    auto* extract_cmd = app.add_subcommand("extract", "Extract gait features to CSV");
    std::string ex_data, ex_out;
    extract_cmd->add_option("--data", ex_data, "Dataset directory or manifest path")
        ->required();
    extract_cmd->add_option("--out", ex_out, "Output directory")->required();

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "Group statistics tables");
    std::string st_data, st_out;
    stats_cmd->add_option("--data", st_data, "Dataset directory or manifest path")->required();
    stats_cmd->add_option("--out", st_out, "Output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train one model on a whole dataset");
    std::string tr_data, tr_method, tr_model = "knn", tr_proj = "none", tr_tw, tr_acts, tr_out;
    std::uint64_t tr_seed = 0;
    int tr_epochs = 30;
    train_cmd->add_option("--data", tr_data, "Dataset directory or manifest path")->required();
    train_cmd->add_option("--method", tr_method, "cml-cf, cml-raw, or dl-raw")->required();
    train_cmd->add_option("--model", tr_model, "rf, dt, svm, knn, gnb, lr");
    train_cmd->add_option("--projection", tr_proj, "none, pca2, lda1");
    train_cmd->add_option("--tw", tr_tw, "Window length (samples or seconds)");
    train_cmd->add_option("--activities", tr_acts, "Comma-separated activity filter");
    train_cmd->add_option("--seed", tr_seed, "Master random seed");
    train_cmd->add_option("--epochs", tr_epochs, "Training epochs (dl-raw)");
    train_cmd->add_option("--out", tr_out, "Output directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Leave-one-subject-out evaluation");
    std::string ev_data, ev_method, ev_model = "knn", ev_proj = "none", ev_tw, ev_acts, ev_out;
    std::uint64_t ev_seed = 0;
    int ev_epochs = 30, ev_threads = 1;
    eval_cmd->add_option("--data", ev_data, "Dataset directory or manifest path")->required();
    eval_cmd->add_option("--method", ev_method, "cml-cf, cml-raw, or dl-raw")->required();
    eval_cmd->add_option("--model", ev_model, "rf, dt, svm, knn, gnb, lr (cml methods)");
    eval_cmd->add_option("--projection", ev_proj, "none, pca2, lda1 (cml methods)");
    eval_cmd->add_option("--tw", ev_tw, "Window length (samples or seconds)");
    eval_cmd->add_option("--activities", ev_acts, "Comma-separated activity filter");
    eval_cmd->add_option("--seed", ev_seed, "Master random seed");
    eval_cmd->add_option("--epochs", ev_epochs, "CNN training epochs (dl-raw)");
    eval_cmd->add_option("--threads", ev_threads, "Parallelism across folds")
        ->envname("GAITLAB_THREADS");
    eval_cmd->add_option("--out", ev_out, "Output directory")->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "Combined statistics + accuracy report");
    std::string rp_data, rp_out;
    std::vector<std::string> rp_evals;
    report_cmd->add_option("--data", rp_data, "Dataset directory or manifest path")
        ->required();
    report_cmd->add_option("--eval", rp_evals, "eval.json files to merge (repeatable)");
    report_cmd->add_option("--out", rp_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd)
            return cmd_synth(sy_preset, sy_seed, sy_out, sy_n, sy_duration, verbose);
        if (*serve_cmd)
            return cmd_serve(sv_addr, sv_port, sv_http_port, sv_root, sv_max, verbose);
        if (*extract_cmd) return cmd_extract(ex_data, ex_out, verbose);
        if (*stats_cmd) return cmd_stats(st_data, st_out, verbose);
        if (*train_cmd)
            return cmd_train(tr_data, tr_method, tr_model, tr_proj, tr_tw, tr_acts, tr_seed,
                             tr_epochs, tr_out, verbose);
        if (*eval_cmd)
            return cmd_eval(ev_data, ev_method, ev_model, ev_proj, ev_tw, ev_acts, ev_seed,
                            ev_epochs, ev_threads, ev_out, verbose);
        if (*report_cmd) return cmd_report(rp_data, rp_evals, rp_out, verbose);
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
