#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaitlab/errors.hpp"
#include "gaitlab/rng.hpp"

namespace gaitlab::dl {

// A window is one flat vector of 3*len samples, axis-major: the vertical
// channel first, then mediolateral, then anteroposterior.

struct CnnConfig {
    int conv1_filters = 16;
    int conv2_filters = 32;
    int kernel = 5;       // odd, zero-padded "same" convolutions
    double lr = 1e-3;     // Adam step size
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    int epochs = 30;

    void validate() const {
        if (conv1_filters < 1 || conv2_filters < 1)
            throw ParameterError("filter counts must be positive");
        if (kernel < 1 || kernel % 2 == 0) throw ParameterError("kernel must be odd");
        if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
        if (batch_size < 1) throw ParameterError("batch size must be positive");
        if (epochs < 0) throw ParameterError("epoch count must be nonnegative");
    }
};

/// Small two-block temporal CNN over triaxial windows:
/// conv(k) -> ReLU -> max-pool(2) -> conv(k) -> ReLU -> global average pool
/// -> dense -> softmax over {TD, DMD}. All parameters live in one flat vector
/// so optimizer state and finite-difference probes can address them by index.
struct Cnn {
    CnnConfig cfg;
    std::size_t len = 0;    // input samples per channel
    std::size_t pooled = 0; // len / 2, odd tail dropped by the pool

    // Per-channel z-score fit on training windows; scale 0 marks a constant
    // channel whose normalized output is 0.
    std::array<double, 3> norm_mean{};
    std::array<double, 3> norm_scale{};

    std::vector<double> params;
    std::size_t o_w1 = 0, o_b1 = 0, o_w2 = 0, o_b2 = 0, o_wd = 0, o_bd = 0;

    std::vector<double> train_loss; // full-set loss before training, then per epoch

    std::size_t n_params() const { return params.size(); }

    double w1(int f, int c, int k) const {
        return params[o_w1 + (static_cast<std::size_t>(f) * 3 + static_cast<std::size_t>(c)) *
                                 static_cast<std::size_t>(cfg.kernel) +
                      static_cast<std::size_t>(k)];
    }
    double w2(int g, int f, int k) const {
        return params[o_w2 +
                      (static_cast<std::size_t>(g) * static_cast<std::size_t>(cfg.conv1_filters) +
                       static_cast<std::size_t>(f)) *
                          static_cast<std::size_t>(cfg.kernel) +
                      static_cast<std::size_t>(k)];
    }
    double wd(int j, int g) const {
        return params[o_wd + static_cast<std::size_t>(j) *
                                 static_cast<std::size_t>(cfg.conv2_filters) +
                      static_cast<std::size_t>(g)];
    }
};

namespace detail {

/// Scratch activations for one window, reused across the batch.
struct CnnWorkspace {
    std::vector<double> xn;   // 3 x L normalized input
    std::vector<double> h1;   // F1 x L pre-activation
    std::vector<double> a1;   // F1 x L
    std::vector<double> pool; // F1 x P
    std::vector<int> argp;    // F1 x P index (0/1) of the max within the pair
    std::vector<double> h2;   // F2 x P
    std::vector<double> a2;   // F2 x P
    std::vector<double> gap;  // F2
    std::array<double, 2> logits{};
    std::array<double, 2> probs{};

    void resize(const Cnn& net) {
        const auto f1 = static_cast<std::size_t>(net.cfg.conv1_filters);
        const auto f2 = static_cast<std::size_t>(net.cfg.conv2_filters);
        xn.assign(3 * net.len, 0.0);
        h1.assign(f1 * net.len, 0.0);
        a1.assign(f1 * net.len, 0.0);
        pool.assign(f1 * net.pooled, 0.0);
        argp.assign(f1 * net.pooled, 0);
        h2.assign(f2 * net.pooled, 0.0);
        a2.assign(f2 * net.pooled, 0.0);
        gap.assign(f2, 0.0);
    }
};

inline void cnn_forward(const Cnn& net, const std::vector<double>& window, CnnWorkspace& ws) {
    const int f1 = net.cfg.conv1_filters, f2 = net.cfg.conv2_filters, kk = net.cfg.kernel;
    const int half = kk / 2;
    const auto len = static_cast<int>(net.len);
    const auto pln = static_cast<int>(net.pooled);

    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < len; ++t)
            ws.xn[static_cast<std::size_t>(c * len + t)] =
                (window[static_cast<std::size_t>(c * len + t)] - net.norm_mean[static_cast<std::size_t>(c)]) *
                net.norm_scale[static_cast<std::size_t>(c)];

    for (int f = 0; f < f1; ++f) {
        const double bias = net.params[net.o_b1 + static_cast<std::size_t>(f)];
        for (int t = 0; t < len; ++t) {
            double acc = bias;
            for (int c = 0; c < 3; ++c)
                for (int k = 0; k < kk; ++k) {
                    const int src = t + k - half;
                    if (src < 0 || src >= len) continue;
                    acc += net.w1(f, c, k) * ws.xn[static_cast<std::size_t>(c * len + src)];
                }
            ws.h1[static_cast<std::size_t>(f * len + t)] = acc;
            ws.a1[static_cast<std::size_t>(f * len + t)] = acc > 0.0 ? acc : 0.0;
        }
        for (int u = 0; u < pln; ++u) {
            const double l = ws.a1[static_cast<std::size_t>(f * len + 2 * u)];
            const double r = ws.a1[static_cast<std::size_t>(f * len + 2 * u + 1)];
            ws.pool[static_cast<std::size_t>(f * pln + u)] = l >= r ? l : r;
            ws.argp[static_cast<std::size_t>(f * pln + u)] = l >= r ? 0 : 1;
        }
    }

    for (int g = 0; g < f2; ++g) {
        const double bias = net.params[net.o_b2 + static_cast<std::size_t>(g)];
        double sum = 0.0;
        for (int u = 0; u < pln; ++u) {
            double acc = bias;
            for (int f = 0; f < f1; ++f)
                for (int k = 0; k < kk; ++k) {
                    const int src = u + k - half;
                    if (src < 0 || src >= pln) continue;
                    acc += net.w2(g, f, k) * ws.pool[static_cast<std::size_t>(f * pln + src)];
                }
            ws.h2[static_cast<std::size_t>(g * pln + u)] = acc;
            const double a = acc > 0.0 ? acc : 0.0;
            ws.a2[static_cast<std::size_t>(g * pln + u)] = a;
            sum += a;
        }
        ws.gap[static_cast<std::size_t>(g)] = sum / static_cast<double>(pln);
    }

    for (int j = 0; j < 2; ++j) {
        double acc = net.params[net.o_bd + static_cast<std::size_t>(j)];
        for (int g = 0; g < f2; ++g) acc += net.wd(j, g) * ws.gap[static_cast<std::size_t>(g)];
        ws.logits[static_cast<std::size_t>(j)] = acc;
    }
    const double mx = std::max(ws.logits[0], ws.logits[1]);
    const double e0 = std::exp(ws.logits[0] - mx), e1 = std::exp(ws.logits[1] - mx);
    ws.probs[0] = e0 / (e0 + e1);
    ws.probs[1] = e1 / (e0 + e1);
}

/// Accumulates dLoss/dParams for one window into `grad` (same layout as
/// params), where Loss is this window's cross entropy. Returns the loss.
inline double cnn_backward(const Cnn& net, const std::vector<double>& window, int label,
                           CnnWorkspace& ws, std::vector<double>& grad) {
    cnn_forward(net, window, ws);
    const int f1 = net.cfg.conv1_filters, f2 = net.cfg.conv2_filters, kk = net.cfg.kernel;
    const int half = kk / 2;
    const auto len = static_cast<int>(net.len);
    const auto pln = static_cast<int>(net.pooled);

    const double p_true = ws.probs[static_cast<std::size_t>(label)];
    const double loss = -std::log(std::max(p_true, 1e-300));

    std::array<double, 2> dz = {ws.probs[0], ws.probs[1]};
    dz[static_cast<std::size_t>(label)] -= 1.0;

    std::vector<double> dgap(static_cast<std::size_t>(f2), 0.0);
    for (int j = 0; j < 2; ++j) {
        grad[net.o_bd + static_cast<std::size_t>(j)] += dz[static_cast<std::size_t>(j)];
        for (int g = 0; g < f2; ++g) {
            grad[net.o_wd + static_cast<std::size_t>(j * f2 + g)] +=
                dz[static_cast<std::size_t>(j)] * ws.gap[static_cast<std::size_t>(g)];
            dgap[static_cast<std::size_t>(g)] +=
                dz[static_cast<std::size_t>(j)] * net.wd(j, g);
        }
    }

    std::vector<double> dpool(static_cast<std::size_t>(f1) * static_cast<std::size_t>(pln), 0.0);
    for (int g = 0; g < f2; ++g) {
        const double da2_row = dgap[static_cast<std::size_t>(g)] / static_cast<double>(pln);
        for (int u = 0; u < pln; ++u) {
            if (ws.h2[static_cast<std::size_t>(g * pln + u)] <= 0.0) continue;
            const double dh2 = da2_row;
            grad[net.o_b2 + static_cast<std::size_t>(g)] += dh2;
            for (int f = 0; f < f1; ++f)
                for (int k = 0; k < kk; ++k) {
                    const int src = u + k - half;
                    if (src < 0 || src >= pln) continue;
                    grad[net.o_w2 +
                         (static_cast<std::size_t>(g) * static_cast<std::size_t>(f1) +
                          static_cast<std::size_t>(f)) *
                             static_cast<std::size_t>(kk) +
                         static_cast<std::size_t>(k)] +=
                        dh2 * ws.pool[static_cast<std::size_t>(f * pln + src)];
                    dpool[static_cast<std::size_t>(f * pln + src)] += dh2 * net.w2(g, f, k);
                }
        }
    }

    for (int f = 0; f < f1; ++f) {
        for (int u = 0; u < pln; ++u) {
            const double dp = dpool[static_cast<std::size_t>(f * pln + u)];
            if (dp == 0.0) continue;
            const int t = 2 * u + ws.argp[static_cast<std::size_t>(f * pln + u)];
            if (ws.h1[static_cast<std::size_t>(f * len + t)] <= 0.0) continue;
            grad[net.o_b1 + static_cast<std::size_t>(f)] += dp;
            for (int c = 0; c < 3; ++c)
                for (int k = 0; k < kk; ++k) {
                    const int src = t + k - half;
                    if (src < 0 || src >= len) continue;
                    grad[net.o_w1 +
                         (static_cast<std::size_t>(f) * 3 + static_cast<std::size_t>(c)) *
                             static_cast<std::size_t>(kk) +
                         static_cast<std::size_t>(k)] +=
                        dp * ws.xn[static_cast<std::size_t>(c * len + src)];
                }
        }
    }
    return loss;
}

inline void check_windows(const std::vector<std::vector<double>>& windows, std::size_t len) {
    if (len < 6) throw ParameterError("window length must be at least 6 samples");
    for (const auto& w : windows)
        if (w.size() != 3 * len) throw ShapeError("window size does not match 3 x length");
}

} // namespace detail

/// Allocates a network for the given window length with He-normal weights
/// and zero biases, deterministically from the seed.
inline Cnn make_cnn(std::size_t len, const CnnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (len < 6) throw ParameterError("window length must be at least 6 samples");
    Cnn net;
    net.cfg = cfg;
    net.len = len;
    net.pooled = len / 2;
    if (net.pooled < static_cast<std::size_t>(cfg.kernel))
        throw ParameterError("window too short for the pooled convolution");

    const auto f1 = static_cast<std::size_t>(cfg.conv1_filters);
    const auto f2 = static_cast<std::size_t>(cfg.conv2_filters);
    const auto kk = static_cast<std::size_t>(cfg.kernel);
    const std::size_t n_w1 = f1 * 3 * kk, n_w2 = f2 * f1 * kk, n_wd = 2 * f2;
    net.o_w1 = 0;
    net.o_b1 = net.o_w1 + n_w1;
    net.o_w2 = net.o_b1 + f1;
    net.o_b2 = net.o_w2 + n_w2;
    net.o_wd = net.o_b2 + f2;
    net.o_bd = net.o_wd + n_wd;
    net.params.assign(net.o_bd + 2, 0.0);

    Rng rng(sub_seed(seed, "init"));
    const double s1 = std::sqrt(2.0 / (3.0 * static_cast<double>(kk)));
    const double s2 = std::sqrt(2.0 / (static_cast<double>(f1) * static_cast<double>(kk)));
    const double sd = std::sqrt(2.0 / static_cast<double>(f2));
    for (std::size_t i = 0; i < n_w1; ++i) net.params[net.o_w1 + i] = s1 * rng.normal();
    for (std::size_t i = 0; i < n_w2; ++i) net.params[net.o_w2 + i] = s2 * rng.normal();
    for (std::size_t i = 0; i < n_wd; ++i) net.params[net.o_wd + i] = sd * rng.normal();
    net.norm_mean = {0.0, 0.0, 0.0};
    net.norm_scale = {1.0, 1.0, 1.0};
    return net;
}

/// Fits the per-channel z-score on training windows.
inline void fit_normalizer(Cnn& net, const std::vector<std::vector<double>>& windows) {
    if (windows.empty()) throw DataError("cannot fit normalizer on zero windows");
    detail::check_windows(windows, net.len);
    const double n = static_cast<double>(windows.size() * net.len);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (const auto& w : windows)
            for (std::size_t t = 0; t < net.len; ++t)
                mean += w[static_cast<std::size_t>(c) * net.len + t];
        mean /= n;
        double var = 0.0;
        for (const auto& w : windows)
            for (std::size_t t = 0; t < net.len; ++t) {
                const double d = w[static_cast<std::size_t>(c) * net.len + t] - mean;
                var += d * d;
            }
        const double sd = std::sqrt(var / n);
        net.norm_mean[static_cast<std::size_t>(c)] = mean;
        net.norm_scale[static_cast<std::size_t>(c)] = sd > 0.0 ? 1.0 / sd : 0.0;
    }
}

/// Mean cross entropy over the given windows (evaluation mode).
inline double cnn_loss(const Cnn& net, const std::vector<std::vector<double>>& windows,
                       const std::vector<int>& labels) {
    if (windows.empty()) throw DataError("loss needs at least one window");
    if (labels.size() != windows.size()) throw ShapeError("label count does not match windows");
    detail::check_windows(windows, net.len);
    detail::CnnWorkspace ws;
    ws.resize(net);
    double total = 0.0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        detail::cnn_forward(net, windows[i], ws);
        total += -std::log(std::max(ws.probs[static_cast<std::size_t>(labels[i])], 1e-300));
    }
    return total / static_cast<double>(windows.size());
}

/// Mean cross entropy and its analytic gradient over the given windows.
inline double cnn_loss_grad(const Cnn& net, const std::vector<std::vector<double>>& windows,
                            const std::vector<int>& labels, std::vector<double>& grad) {
    if (windows.empty()) throw DataError("loss needs at least one window");
    if (labels.size() != windows.size()) throw ShapeError("label count does not match windows");
    detail::check_windows(windows, net.len);
    grad.assign(net.n_params(), 0.0);
    detail::CnnWorkspace ws;
    ws.resize(net);
    double total = 0.0;
    for (std::size_t i = 0; i < windows.size(); ++i)
        total += detail::cnn_backward(net, windows[i], labels[i], ws, grad);
    const double inv = 1.0 / static_cast<double>(windows.size());
    for (double& g : grad) g *= inv;
    return total * inv;
}

/// Trains a fresh network with Adam over a fixed epoch budget. The recorded
/// curve holds the full-set loss before training and after every epoch.
inline Cnn train_cnn(const std::vector<std::vector<double>>& windows,
                     const std::vector<int>& labels, std::size_t len, const CnnConfig& cfg,
                     std::uint64_t seed) {
    if (windows.size() < 2) throw DataError("training needs at least 2 windows");
    if (labels.size() != windows.size())
        throw ConfigError("label count does not match training windows");
    if (len < 6) throw ParameterError("window length must be at least 6 samples");
    for (const auto& w : windows)
        if (w.size() != 3 * len)
            throw ConfigError("training window size does not match 3 x length");
    bool td = false, dmd = false;
    for (const int y : labels) {
        if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
        (y == 1 ? dmd : td) = true;
    }
    if (!td || !dmd) throw DataError("training set contains a single class");

    Cnn net = make_cnn(len, cfg, seed);
    fit_normalizer(net, windows);

    const std::size_t n = windows.size();
    const std::size_t np = net.n_params();
    std::vector<double> grad(np), m1(np, 0.0), m2(np, 0.0);
    detail::CnnWorkspace ws;
    ws.resize(net);

    net.train_loss.push_back(cnn_loss(net, windows, labels));

    Rng shuffle_rng(sub_seed(seed, "shuffle"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    long adam_t = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i)
                detail::cnn_backward(net, windows[order[i]], labels[order[i]], ws, grad);
            const double inv = 1.0 / static_cast<double>(stop - start);
            ++adam_t;
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
            for (std::size_t p = 0; p < np; ++p) {
                const double g = grad[p] * inv;
                m1[p] = cfg.beta1 * m1[p] + (1.0 - cfg.beta1) * g;
                m2[p] = cfg.beta2 * m2[p] + (1.0 - cfg.beta2) * g * g;
                net.params[p] -= cfg.lr * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + cfg.adam_eps);
            }
        }
        const double epoch_loss = cnn_loss(net, windows, labels);
        if (!std::isfinite(epoch_loss))
            throw NumericError("training loss became non-finite at epoch " +
                               std::to_string(epoch));
        net.train_loss.push_back(epoch_loss);
    }
    return net;
}

/// Central-difference check (h = 1e-5) of the analytic gradient on up to
/// `n_probes` randomly chosen parameters; returns the worst relative error.
inline double cnn_gradcheck(const Cnn& net, const std::vector<std::vector<double>>& windows,
                            const std::vector<int>& labels, std::size_t n_probes,
                            std::uint64_t seed) {
    std::vector<double> grad;
    cnn_loss_grad(net, windows, labels, grad);

    std::vector<std::size_t> idx(net.n_params());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(std::min(n_probes, idx.size()));

    Cnn probe = net;
    const double h = 1e-5;
    double worst = 0.0;
    for (const std::size_t i : idx) {
        const double saved = net.params[i];
        probe.params[i] = saved + h;
        const double fp = cnn_loss(probe, windows, labels);
        probe.params[i] = saved - h;
        const double fm = cnn_loss(probe, windows, labels);
        probe.params[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max(std::fabs(fd) + std::fabs(grad[i]), 1e-8);
        worst = std::max(worst, std::fabs(fd - grad[i]) / denom);
    }
    return worst;
}

inline std::vector<std::array<double, 2>> cnn_predict_proba(
    const Cnn& net, const std::vector<std::vector<double>>& windows) {
    detail::check_windows(windows, net.len);
    detail::CnnWorkspace ws;
    ws.resize(net);
    std::vector<std::array<double, 2>> out(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        detail::cnn_forward(net, windows[i], ws);
        out[i] = ws.probs;
    }
    return out;
}

/// Hard labels; exact ties go to DMD.
inline std::vector<int> cnn_predict(const Cnn& net,
                                    const std::vector<std::vector<double>>& windows) {
    const auto proba = cnn_predict_proba(net, windows);
    std::vector<int> labels(proba.size());
    for (std::size_t i = 0; i < proba.size(); ++i) labels[i] = proba[i][1] >= proba[i][0];
    return labels;
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON description plus a raw weight blob next to it.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a_bytes(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string sibling_path(const std::string& anchor, const std::string& name) {
    const std::size_t slash = anchor.find_last_of('/');
    return slash == std::string::npos ? name : anchor.substr(0, slash + 1) + name;
}

} // namespace detail

/// Writes `<json_path>` plus a binary weight blob alongside it. The blob is
/// the flat parameter vector as native-endian IEEE doubles.
inline void save_checkpoint(const Cnn& net, const std::string& json_path,
                            const std::string& blob_name) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(net.params.data());
    const std::size_t n_bytes = net.params.size() * sizeof(double);

    nlohmann::json j;
    j["format"] = "gaitlab-cnn-v1";
    j["config"] = {{"conv1_filters", net.cfg.conv1_filters},
                   {"conv2_filters", net.cfg.conv2_filters},
                   {"kernel", net.cfg.kernel},
                   {"lr", net.cfg.lr},
                   {"beta1", net.cfg.beta1},
                   {"beta2", net.cfg.beta2},
                   {"adam_eps", net.cfg.adam_eps},
                   {"batch_size", net.cfg.batch_size},
                   {"epochs", net.cfg.epochs}};
    j["input_len"] = net.len;
    j["layers"] = {
        "conv1d(" + std::to_string(net.cfg.conv1_filters) + ",k" +
            std::to_string(net.cfg.kernel) + ",same)",
        "relu",
        "maxpool(2)",
        "conv1d(" + std::to_string(net.cfg.conv2_filters) + ",k" +
            std::to_string(net.cfg.kernel) + ",same)",
        "relu",
        "global_average_pool",
        "dense(2)",
        "softmax"};
    j["norm_mean"] = net.norm_mean;
    j["norm_scale"] = net.norm_scale;
    j["param_count"] = net.params.size();
    j["blob"] = blob_name;
    j["blob_fnv1a"] = detail::fnv1a_bytes(bytes, n_bytes);
    j["train_loss"] = net.train_loss;

    const std::string blob_path = detail::sibling_path(json_path, blob_name);
    {
        std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint blob: " + blob_path);
        out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(n_bytes));
        if (!out) throw IoError("short write on checkpoint blob: " + blob_path);
    }
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + json_path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write on checkpoint: " + json_path);
}

inline Cnn load_checkpoint(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open checkpoint: " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed checkpoint " + json_path + ": " + e.what());
    }
    try {
        if (j.at("format") != "gaitlab-cnn-v1")
            throw ParseError("unsupported checkpoint format in " + json_path);
        CnnConfig cfg;
        const auto& c = j.at("config");
        cfg.conv1_filters = c.at("conv1_filters").get<int>();
        cfg.conv2_filters = c.at("conv2_filters").get<int>();
        cfg.kernel = c.at("kernel").get<int>();
        cfg.lr = c.at("lr").get<double>();
        cfg.beta1 = c.at("beta1").get<double>();
        cfg.beta2 = c.at("beta2").get<double>();
        cfg.adam_eps = c.at("adam_eps").get<double>();
        cfg.batch_size = c.at("batch_size").get<int>();
        cfg.epochs = c.at("epochs").get<int>();

        Cnn net = make_cnn(j.at("input_len").get<std::size_t>(), cfg, 0);
        net.norm_mean = j.at("norm_mean").get<std::array<double, 3>>();
        net.norm_scale = j.at("norm_scale").get<std::array<double, 3>>();
        net.train_loss = j.at("train_loss").get<std::vector<double>>();

        const auto count = j.at("param_count").get<std::size_t>();
        if (count != net.n_params())
            throw ParseError("checkpoint parameter count does not match its architecture");

        const std::string blob_path =
            detail::sibling_path(json_path, j.at("blob").get<std::string>());
        std::ifstream blob(blob_path, std::ios::binary);
        if (!blob) throw IoError("cannot open checkpoint blob: " + blob_path);
        blob.read(reinterpret_cast<char*>(net.params.data()),
                  static_cast<std::streamsize>(count * sizeof(double)));
        if (blob.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
            throw ParseError("checkpoint blob is truncated: " + blob_path);

        const auto want = j.at("blob_fnv1a").get<std::uint64_t>();
        const auto got = detail::fnv1a_bytes(
            reinterpret_cast<const unsigned char*>(net.params.data()), count * sizeof(double));
        if (want != got) throw ParseError("checkpoint blob checksum mismatch: " + blob_path);
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed checkpoint " + json_path + ": " + e.what());
    }
}

} // namespace gaitlab::dl
