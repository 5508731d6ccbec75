#pragma once
/// Streaming ingestion endpoint: phones stream newline-delimited JSON frames
/// (header, samples, terminator) over raw TCP or as an HTTP POST body; each
/// completed session is persisted as a quantized signal CSV plus an entry in
/// a sessions manifest. Client timestamps are authoritative; the load path
/// resamples jittered series, not the server.
///
/// A connection that drops before the terminator is persisted with a
/// truncated marker when it already carried the two-second minimum; protocol
/// errors (bad frame, unknown activity) abort the session without persisting.
/// The HTTP route requires complete framing in the body — a request that dies
/// mid-transfer never reaches the handler, so truncation semantics live on
/// the TCP path.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "gaitlab/errors.hpp"
#include "gaitlab/manifest.hpp"
#include "gaitlab/types.hpp"

namespace gaitlab::ingest {

/// Sessions shorter than this are rejected outright (and dropped connections
/// below it are discarded rather than persisted as truncated).
inline constexpr double kMinSessionS = 2.0;

struct SessionHeader {
    std::string participant_id;
    ActivityKind activity = ActivityKind::SixMWT;
    double rate_hz = 0.0;
    std::string started_at; // optional wall-clock stamp, kept verbatim
};

struct StreamSample {
    double t = 0.0; // seconds, client clock
    double x = 0.0, y = 0.0, z = 0.0; // g units
};

struct Terminator {};

using Frame = std::variant<SessionHeader, StreamSample, Terminator>;

/// Decodes one newline-delimited JSON frame. Throws ParseError for anything
/// that is not exactly one of the three frame shapes, ValidationError when a
/// header carries an unknown activity or an out-of-range rate.
inline Frame decode_frame(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad frame: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("bad frame: expected a JSON object");
    try {
        if (j.contains("end")) {
            if (!j["end"].is_boolean() || !j["end"].get<bool>())
                throw ParseError("bad frame: \"end\" must be true");
            return Terminator{};
        }
        if (j.contains("participant_id") || j.contains("activity") || j.contains("rate_hz")) {
            SessionHeader h;
            h.participant_id = j.at("participant_id").get<std::string>();
            if (h.participant_id.empty())
                throw ParseError("bad frame: participant_id must be non-empty");
            const auto act = j.at("activity").get<std::string>();
            const auto kind = activity_from_string(act);
            if (!kind) throw ValidationError("unknown activity: " + act);
            h.activity = *kind;
            h.rate_hz = j.at("rate_hz").get<double>();
            if (!(h.rate_hz >= 1.0 && h.rate_hz <= 200.0))
                throw ValidationError("rate_hz must lie in [1, 200]");
            if (j.contains("started_at")) h.started_at = j["started_at"].get<std::string>();
            return h;
        }
        if (j.contains("t")) {
            StreamSample s;
            s.t = j.at("t").get<double>();
            s.x = j.at("x").get<double>();
            s.y = j.at("y").get<double>();
            s.z = j.at("z").get<double>();
            return s;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad frame: ") + e.what());
    }
    throw ParseError("bad frame: unrecognized shape");
}

struct SessionInfo {
    std::string participant_id;
    ActivityKind activity = ActivityKind::SixMWT;
    double rate_hz = 0.0;
    std::string started_at;
    std::string csv_path; // relative to the storage root
    std::size_t rows = 0;
    std::size_t dropped_samples = 0; // out-of-range readings discarded
    bool truncated = false;          // connection closed before the terminator
};

/// Persists completed sessions under one storage root: a CSV per session in
/// the standard signal layout plus an atomically rewritten sessions.json.
/// Thread-safe; one store is shared by all connections of a server.
class SessionStore {
  public:
    explicit SessionStore(io::fs::path root) : root_(std::move(root)) {
        io::fs::create_directories(root_);
        manifest_path_ = root_ / "sessions.json";
    }

    const io::fs::path& root() const { return root_; }
    io::fs::path manifest_path() const { return manifest_path_; }

    /// Validates, writes the CSV, and appends the manifest entry. Throws
    /// DataError for sessions under the two-second minimum and
    /// ValidationError when timestamps run backwards.
    SessionInfo add_session(const SessionHeader& h, const std::vector<StreamSample>& samples,
                            bool truncated, std::size_t dropped) {
        if (samples.size() < 2 || samples.back().t - samples.front().t < kMinSessionS)
            throw DataError("session for '" + h.participant_id + "' is shorter than " +
                            std::to_string(kMinSessionS) + " s");
        for (std::size_t i = 1; i < samples.size(); ++i)
            if (samples[i].t < samples[i - 1].t)
                throw ValidationError("sample timestamps must be nondecreasing");

        std::string csv = "t_s,ax_g,ay_g,az_g\n";
        csv.reserve(csv.size() + samples.size() * 32);
        char buf[128];
        for (const auto& s : samples) {
            std::snprintf(buf, sizeof(buf), "%.6f,%.3f,%.3f,%.3f\n", s.t, quantize_g(s.x),
                          quantize_g(s.y), quantize_g(s.z));
            csv += buf;
        }

        SessionInfo info;
        info.participant_id = h.participant_id;
        info.activity = h.activity;
        info.rate_hz = h.rate_hz;
        info.started_at = h.started_at;
        info.rows = samples.size();
        info.dropped_samples = dropped;
        info.truncated = truncated;

        std::lock_guard<std::mutex> lock(mu_);
        const std::string base = h.participant_id + "_" + to_string(h.activity);
        std::string name = base + ".csv";
        for (int k = 2; used_names_.count(name); ++k)
            name = base + "_" + std::to_string(k) + ".csv";
        used_names_.insert(name);
        info.csv_path = name;
        io::write_file_atomic(root_ / name, csv);
        sessions_.push_back(info);
        io::write_file_atomic(manifest_path_, manifest_json_locked().dump(2) + "\n");
        return info;
    }

    std::vector<SessionInfo> sessions() const {
        std::lock_guard<std::mutex> lock(mu_);
        return sessions_;
    }

    nlohmann::json manifest_json() const {
        std::lock_guard<std::mutex> lock(mu_);
        return manifest_json_locked();
    }

  private:
    nlohmann::json manifest_json_locked() const {
        nlohmann::json j;
        j["sessions"] = nlohmann::json::array();
        for (const auto& s : sessions_) {
            nlohmann::json e = {{"participant_id", s.participant_id},
                                {"activity", to_string(s.activity)},
                                {"csv_path", s.csv_path},
                                {"rate_hz", s.rate_hz},
                                {"rows", s.rows}};
            if (!s.started_at.empty()) e["started_at"] = s.started_at;
            if (s.dropped_samples > 0) e["dropped_samples"] = s.dropped_samples;
            if (s.truncated) e["truncated"] = true;
            j["sessions"].push_back(e);
        }
        return j;
    }

    io::fs::path root_;
    io::fs::path manifest_path_;
    mutable std::mutex mu_;
    std::vector<SessionInfo> sessions_;
    std::set<std::string> used_names_;
};

namespace detail {

/// Accumulates one session's frames in arrival order. Out-of-range or
/// non-finite samples are counted and skipped; everything else that is wrong
/// throws, which aborts the session.
class SessionAssembler {
  public:
    /// Feeds one line. Returns true once the terminator has arrived.
    bool feed_line(const std::string& line) {
        if (done_) throw ParseError("frame after terminator");
        const Frame f = decode_frame(line);
        if (std::holds_alternative<SessionHeader>(f)) {
            if (header_) throw ParseError("duplicate session header");
            header_ = std::get<SessionHeader>(f);
            return false;
        }
        if (!header_) throw ParseError("first frame must be the session header");
        if (std::holds_alternative<Terminator>(f)) {
            done_ = true;
            return true;
        }
        const auto& s = std::get<StreamSample>(f);
        const bool finite =
            std::isfinite(s.t) && std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.z);
        if (!finite || std::fabs(s.x) > kSensorRangeG || std::fabs(s.y) > kSensorRangeG ||
            std::fabs(s.z) > kSensorRangeG) {
            ++dropped_;
            return false;
        }
        samples_.push_back(s);
        return false;
    }

    bool done() const { return done_; }
    bool has_header() const { return header_.has_value(); }
    const SessionHeader& header() const { return *header_; }
    const std::vector<StreamSample>& samples() const { return samples_; }
    std::size_t dropped() const { return dropped_; }

  private:
    std::optional<SessionHeader> header_;
    std::vector<StreamSample> samples_;
    std::size_t dropped_ = 0;
    bool done_ = false;
};

} // namespace detail

struct ServerConfig {
    std::string bind_address = "127.0.0.1";
    int tcp_port = 0;  // 0 picks a free port; read back via tcp_port()
    int http_port = 0; // likewise via http_port()
    io::fs::path storage_root;
    int max_sessions = 32; // concurrent session cap across both listeners
    std::function<void(const std::string&)> log; // defaults to stderr
};

/// Serves the stream protocol on a raw TCP port and, with identical framing,
/// as HTTP POST /v1/stream; GET /v1/sessions returns the manifest and
/// GET /healthz answers 200. start() binds and spawns the listener threads;
/// stop() shuts both down and joins every connection.
class IngestServer {
  public:
    explicit IngestServer(ServerConfig cfg)
        : cfg_(std::move(cfg)), store_(cfg_.storage_root) {
        if (cfg_.max_sessions < 1) throw ParameterError("max_sessions must be at least 1");
        if (!cfg_.log)
            cfg_.log = [](const std::string& msg) {
                static std::mutex mu;
                std::lock_guard<std::mutex> lock(mu);
                std::cerr << msg << "\n";
            };
    }

    ~IngestServer() { stop(); }

    IngestServer(const IngestServer&) = delete;
    IngestServer& operator=(const IngestServer&) = delete;

    SessionStore& store() { return store_; }
    int tcp_port() const { return tcp_port_; }
    int http_port() const { return http_port_; }

    void start() {
        if (running_.exchange(true)) return;
        open_tcp_listener();
        accept_thread_ = std::thread([this] { accept_loop(); });
        setup_http();
        http_thread_ = std::thread([this] { http_.listen_after_bind(); });
        http_.wait_until_ready();
    }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
        if (accept_thread_.joinable()) accept_thread_.join();
        {
            std::lock_guard<std::mutex> lock(threads_mu_);
            for (auto& t : conn_threads_)
                if (t.joinable()) t.join();
            conn_threads_.clear();
        }
        http_.stop();
        if (http_thread_.joinable()) http_thread_.join();
    }

  private:
    void open_tcp_listener() {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw IoError("cannot create listening socket");
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.tcp_port));
        if (::inet_pton(AF_INET, cfg_.bind_address.c_str(), &addr.sin_addr) != 1)
            throw IoError("bad bind address: " + cfg_.bind_address);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw IoError("cannot bind " + cfg_.bind_address + ":" +
                          std::to_string(cfg_.tcp_port));
        if (::listen(listen_fd_, 16) != 0) throw IoError("cannot listen");
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        tcp_port_ = ntohs(addr.sin_port);
    }

    void setup_http() {
        http_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
        http_.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(store_.manifest_json().dump(2) + "\n", "application/json");
        });
        http_.Post("/v1/stream", [this](const httplib::Request& req, httplib::Response& res) {
            if (!try_enter()) {
                res.status = 503;
                res.set_content(R"({"error":"server at session capacity"})" "\n",
                                "application/json");
                return;
            }
            struct Leave {
                IngestServer* s;
                ~Leave() { s->leave(); }
            } leave{this};
            detail::SessionAssembler asm_;
            try {
                std::size_t pos = 0;
                while (pos < req.body.size()) {
                    std::size_t nl = req.body.find('\n', pos);
                    if (nl == std::string::npos) nl = req.body.size();
                    const std::string line = req.body.substr(pos, nl - pos);
                    pos = nl + 1;
                    if (line.empty()) continue;
                    if (asm_.feed_line(line)) break;
                }
                if (!asm_.done()) throw ParseError("stream body ended without terminator");
                const SessionInfo info =
                    store_.add_session(asm_.header(), asm_.samples(), false, asm_.dropped());
                log_session(info);
                nlohmann::json ok = {
                    {"ok", true}, {"rows", info.rows}, {"csv_path", info.csv_path}};
                if (info.dropped_samples > 0) ok["dropped_samples"] = info.dropped_samples;
                res.set_content(ok.dump() + "\n", "application/json");
            } catch (const Error& e) {
                res.status = 400;
                res.set_content(nlohmann::json({{"error", e.what()}}).dump() + "\n",
                                "application/json");
            }
        });
        if (cfg_.http_port == 0) {
            http_port_ = http_.bind_to_any_port(cfg_.bind_address);
            if (http_port_ < 0) throw IoError("cannot bind HTTP listener");
        } else {
            if (!http_.bind_to_port(cfg_.bind_address, cfg_.http_port))
                throw IoError("cannot bind HTTP port " + std::to_string(cfg_.http_port));
            http_port_ = cfg_.http_port;
        }
    }

    bool try_enter() {
        if (active_.fetch_add(1) < cfg_.max_sessions) return true;
        active_.fetch_sub(1);
        return false;
    }
    void leave() { active_.fetch_sub(1); }

    void accept_loop() {
        while (running_) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (!running_) break;
                continue;
            }
            std::lock_guard<std::mutex> lock(threads_mu_);
            conn_threads_.emplace_back([this, fd] { handle_conn(fd); });
        }
    }

    static void send_line(int fd, const std::string& line) {
        const std::string out = line + "\n";
        std::size_t sent = 0;
        while (sent < out.size()) {
            const ssize_t n = ::send(fd, out.data() + sent, out.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) return; // peer gone; nothing to do
            sent += static_cast<std::size_t>(n);
        }
    }

    void log_session(const SessionInfo& info) {
        std::string msg = "session " + info.participant_id + "/" + to_string(info.activity) +
                          ": " + std::to_string(info.rows) + " rows -> " + info.csv_path;
        if (info.dropped_samples > 0)
            msg += " (" + std::to_string(info.dropped_samples) + " out-of-range dropped)";
        if (info.truncated) msg += " [truncated]";
        cfg_.log(msg);
    }

    void handle_conn(int fd) {
        if (!try_enter()) {
            send_line(fd, R"({"error":"server at session capacity"})");
            ::close(fd);
            return;
        }
        detail::SessionAssembler asm_;
        bool aborted = false;
        std::string buf;
        char chunk[4096];
        while (!asm_.done()) {
            const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
            if (n <= 0) break; // disconnect (or shutdown)
            buf.append(chunk, static_cast<std::size_t>(n));
            std::size_t nl;
            while (!asm_.done() && (nl = buf.find('\n')) != std::string::npos) {
                const std::string line = buf.substr(0, nl);
                buf.erase(0, nl + 1);
                if (line.empty()) continue;
                try {
                    asm_.feed_line(line);
                } catch (const Error& e) {
                    send_line(fd, nlohmann::json({{"error", e.what()}}).dump());
                    cfg_.log(std::string("session aborted: ") + e.what());
                    aborted = true;
                    break;
                }
            }
            if (aborted) break;
        }
        if (!aborted) {
            if (asm_.done()) {
                try {
                    const SessionInfo info =
                        store_.add_session(asm_.header(), asm_.samples(), false, asm_.dropped());
                    log_session(info);
                    nlohmann::json ok = {
                        {"ok", true}, {"rows", info.rows}, {"csv_path", info.csv_path}};
                    if (info.dropped_samples > 0) ok["dropped_samples"] = info.dropped_samples;
                    send_line(fd, ok.dump());
                } catch (const Error& e) {
                    send_line(fd, nlohmann::json({{"error", e.what()}}).dump());
                    cfg_.log(std::string("session rejected: ") + e.what());
                }
            } else if (asm_.has_header()) {
                // Dropped connection: keep what arrived if it clears the floor.
                try {
                    const SessionInfo info =
                        store_.add_session(asm_.header(), asm_.samples(), true, asm_.dropped());
                    log_session(info);
                } catch (const Error& e) {
                    cfg_.log(std::string("truncated session discarded: ") + e.what());
                }
            }
        }
        ::close(fd);
        leave();
    }

    ServerConfig cfg_;
    SessionStore store_;
    std::atomic<bool> running_{false};
    std::atomic<int> active_{0};
    int listen_fd_ = -1;
    int tcp_port_ = 0;
    int http_port_ = 0;
    std::thread accept_thread_;
    std::mutex threads_mu_;
    std::vector<std::thread> conn_threads_;
    httplib::Server http_;
    std::thread http_thread_;
};

} // namespace gaitlab::ingest
