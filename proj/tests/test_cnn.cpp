#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gaitlab/cnn.hpp"
#include "gaitlab/rng.hpp"

using namespace gaitlab;
using namespace gaitlab::dl;

namespace {

struct Planted {
    std::vector<std::vector<double>> windows;
    std::vector<int> labels;
};

/// Windows whose label is a linear rule on the first channel's mean: class 1
/// sits at +shift, class 0 at -shift, with i.i.d. noise on every channel.
Planted make_planted(std::size_t n, std::size_t len, double shift, double noise,
                     std::uint64_t seed) {
    Rng rng(seed);
    Planted out;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        std::vector<double> w(3 * len);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < len; ++t)
                w[c * len + t] = rng.normal() * noise +
                                 (c == 0 ? (label == 1 ? shift : -shift) : 0.0);
        out.windows.push_back(std::move(w));
        out.labels.push_back(label);
    }
    return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

} // namespace

TEST_CASE("gradient check passes at a random initialization", "[cnn]") {
    Planted batch = make_planted(6, 30, 0.5, 0.3, 8001);
    Cnn net = make_cnn(30, CnnConfig{}, 8002);
    // Move biases off zero so no ReLU or pooling input sits exactly at a kink.
    Rng rng(8003);
    for (double& p : net.params) p += 0.05 * rng.normal();
    fit_normalizer(net, batch.windows);

    const double err = cnn_gradcheck(net, batch.windows, batch.labels, 250, 8004);
    INFO("max relative error " << err);
    REQUIRE(err < 1e-4);
}

TEST_CASE("gradient check on the bias-only path is near exact", "[cnn]") {
    // All-zero inputs silence every weight, leaving the pure bias network,
    // which is linear up to the ReLUs; biases are set away from the kinks.
    std::vector<std::vector<double>> windows(4, std::vector<double>(3 * 30, 0.0));
    const std::vector<int> labels = {0, 1, 0, 1};

    Cnn net = make_cnn(30, CnnConfig{}, 8005);
    fit_normalizer(net, windows);
    Rng rng(8006);
    for (std::size_t i = net.o_b1; i < net.o_b1 + 16; ++i)
        net.params[i] = 0.3 + 0.1 * rng.uniform();
    for (std::size_t i = net.o_b2; i < net.o_b2 + 32; ++i)
        net.params[i] = 0.2 + 0.1 * rng.uniform();
    net.params[net.o_bd] = 0.1;
    net.params[net.o_bd + 1] = -0.2;

    std::vector<double> grad;
    cnn_loss_grad(net, windows, labels, grad);
    Cnn probe = net;
    double worst = 0.0;
    const double h = 1e-5;
    const std::pair<std::size_t, std::size_t> spans[] = {
        {net.o_b1, std::size_t{16}}, {net.o_b2, std::size_t{32}}, {net.o_bd, std::size_t{2}}};
    for (const auto& [base, span] : spans) {
        for (std::size_t i = base; i < base + span; ++i) {
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
    }
    INFO("max relative error on bias paths " << worst);
    REQUIRE(worst < 1e-6);
}

TEST_CASE("gradient check still passes after a few training steps", "[cnn]") {
    Planted batch = make_planted(8, 30, 0.5, 0.3, 8007);
    CnnConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8; // one step per epoch -> 5 optimizer steps
    const Cnn net = train_cnn(batch.windows, batch.labels, 30, cfg, 8008);
    const double err = cnn_gradcheck(net, batch.windows, batch.labels, 250, 8009);
    INFO("max relative error " << err);
    REQUIRE(err < 1e-4);
}

TEST_CASE("planted linear rule is learned within the epoch budget", "[cnn]") {
    Planted train_set = make_planted(400, 30, 0.5, 0.4, 8010);
    const Cnn net = train_cnn(train_set.windows, train_set.labels, 30, CnnConfig{}, 8011);

    REQUIRE(net.train_loss.size() == 31);
    REQUIRE(net.train_loss.back() <= net.train_loss.front());
    REQUIRE(accuracy(cnn_predict(net, train_set.windows), train_set.labels) >= 0.95);

    // Held-out windows from the same rule.
    Planted probe = make_planted(100, 30, 0.5, 0.4, 8012);
    REQUIRE(accuracy(cnn_predict(net, probe.windows), probe.labels) >= 0.9);

    const auto proba = cnn_predict_proba(net, probe.windows);
    for (const auto& p : proba) {
        REQUIRE(p[0] + p[1] == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(p[0] > 0.0);
        REQUIRE(p[1] > 0.0);
    }
}

TEST_CASE("training is bit-reproducible for a fixed seed", "[cnn]") {
    Planted data = make_planted(24, 10, 0.5, 0.3, 8013);
    CnnConfig cfg;
    cfg.epochs = 3;
    const Cnn a = train_cnn(data.windows, data.labels, 10, cfg, 77);
    const Cnn b = train_cnn(data.windows, data.labels, 10, cfg, 77);
    REQUIRE(a.params == b.params);
    REQUIRE(a.train_loss == b.train_loss);

    const Cnn c = train_cnn(data.windows, data.labels, 10, cfg, 78);
    REQUIRE(a.params != c.params);
}

TEST_CASE("zeroed dense layer scores every window fifty-fifty", "[cnn]") {
    Cnn net = make_cnn(10, CnnConfig{}, 8014);
    for (std::size_t i = net.o_wd; i < net.n_params(); ++i) net.params[i] = 0.0;
    Planted data = make_planted(3, 10, 0.5, 0.3, 8015);
    fit_normalizer(net, data.windows);
    const auto proba = cnn_predict_proba(net, data.windows);
    for (const auto& p : proba) {
        REQUIRE(p[0] == 0.5);
        REQUIRE(p[1] == 0.5);
    }
    // An exact tie resolves to the positive class.
    REQUIRE(cnn_predict(net, data.windows) == std::vector<int>{1, 1, 1});
}

TEST_CASE("shifting a window by one sample barely moves the scores", "[cnn]") {
    Planted train_set = make_planted(200, 30, 0.5, 0.4, 8016);
    const Cnn net = train_cnn(train_set.windows, train_set.labels, 30, CnnConfig{}, 8017);

    Planted probe = make_planted(40, 30, 0.5, 0.4, 8018);
    const auto base = cnn_predict_proba(net, probe.windows);
    std::vector<std::vector<double>> shifted = probe.windows;
    for (auto& w : shifted)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 29; t > 0; --t) w[c * 30 + t] = w[c * 30 + t - 1];
    const auto moved = cnn_predict_proba(net, shifted);
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double tv =
            0.5 * (std::fabs(base[i][0] - moved[i][0]) + std::fabs(base[i][1] - moved[i][1]));
        REQUIRE(tv < 0.2);
    }
}

TEST_CASE("per-axis affine rescaling of inputs does not change predictions", "[cnn]") {
    Planted data = make_planted(60, 30, 0.5, 0.4, 8019);
    CnnConfig cfg;
    cfg.epochs = 10;
    const Cnn base = train_cnn(data.windows, data.labels, 30, cfg, 5);

    const double scale[3] = {3.0, 0.5, 7.0};
    const double offset[3] = {1.0, -2.0, 0.25};
    std::vector<std::vector<double>> warped = data.windows;
    for (auto& w : warped)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 30; ++t) w[c * 30 + t] = w[c * 30 + t] * scale[c] + offset[c];
    const Cnn retrained = train_cnn(warped, data.labels, 30, cfg, 5);

    const auto pa = cnn_predict_proba(base, data.windows);
    const auto pb = cnn_predict_proba(retrained, warped);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i][0] == Catch::Approx(pb[i][0]).margin(1e-9));
        REQUIRE(pa[i][1] == Catch::Approx(pb[i][1]).margin(1e-9));
    }
}

TEST_CASE("degenerate training inputs are rejected", "[cnn]") {
    Planted data = make_planted(8, 10, 0.5, 0.3, 8020);

    std::vector<int> ones(8, 1);
    REQUIRE_THROWS_AS(train_cnn(data.windows, ones, 10, CnnConfig{}, 1), DataError);

    std::vector<int> short_labels(7, 0);
    REQUIRE_THROWS_AS(train_cnn(data.windows, short_labels, 10, CnnConfig{}, 1), ConfigError);

    REQUIRE_THROWS_AS(train_cnn(data.windows, data.labels, 12, CnnConfig{}, 1), ConfigError);

    CnnConfig bad;
    bad.kernel = 4;
    REQUIRE_THROWS_AS(train_cnn(data.windows, data.labels, 10, bad, 1), ParameterError);
}

TEST_CASE("prediction validates window width and passes empty batches through", "[cnn]") {
    Planted data = make_planted(8, 10, 0.5, 0.3, 8021);
    CnnConfig cfg;
    cfg.epochs = 1;
    const Cnn net = train_cnn(data.windows, data.labels, 10, cfg, 1);

    std::vector<std::vector<double>> narrow = {std::vector<double>(3 * 9, 0.0)};
    REQUIRE_THROWS_AS(cnn_predict(net, narrow), ShapeError);
    REQUIRE(cnn_predict(net, {}).empty());
    REQUIRE(cnn_predict_proba(net, {}).empty());
}

TEST_CASE("checkpoints round trip bitwise through JSON plus blob", "[cnn]") {
    Planted data = make_planted(16, 10, 0.5, 0.3, 8022);
    CnnConfig cfg;
    cfg.epochs = 2;
    const Cnn net = train_cnn(data.windows, data.labels, 10, cfg, 31);

    const std::string dir = "cnn_ckpt_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(net, dir + "/model.json", "model.bin");

    const Cnn back = load_checkpoint(dir + "/model.json");
    REQUIRE(back.params == net.params);
    REQUIRE(back.len == net.len);
    REQUIRE(back.norm_mean == net.norm_mean);
    REQUIRE(back.norm_scale == net.norm_scale);
    REQUIRE(back.train_loss == net.train_loss);

    const auto pa = cnn_predict_proba(net, data.windows);
    const auto pb = cnn_predict_proba(back, data.windows);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i][0] == pb[i][0]);
        REQUIRE(pa[i][1] == pb[i][1]);
    }

    // A truncated blob must be detected.
    {
        std::ofstream trunc(dir + "/model.bin", std::ios::binary | std::ios::trunc);
        trunc << "short";
    }
    REQUIRE_THROWS_AS(load_checkpoint(dir + "/model.json"), ParseError);
}

TEST_CASE("parameter count is reported and stays modest", "[cnn]") {
    const Cnn net = make_cnn(150, CnnConfig{}, 1);
    REQUIRE(net.n_params() == 16 * 3 * 5 + 16 + 32 * 16 * 5 + 32 + 2 * 32 + 2);
    REQUIRE(net.n_params() < 10000);
}
