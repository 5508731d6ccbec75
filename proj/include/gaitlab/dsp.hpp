#pragma once

#include <algorithm>
#include <complex>
#include <numeric>
#include <span>
#include <vector>

#include "gaitlab/types.hpp"

namespace gaitlab::dsp {

/// Cutoff used by the step detector; cadences top out near 3 steps/s, so
/// 5 Hz keeps the fundamental and first harmonic structure.
inline constexpr double kStepFilterCutoffHz = 5.0;

/// Peak threshold as a fraction of the filtered signal's standard deviation.
inline constexpr double kPeakThresholdFraction = 0.3;

/// Minimum inter-peak spacing in seconds (max credible cadence 4 steps/s).
inline constexpr double kMinPeakSpacingS = 0.25;

/// Canonical window lengths in samples; the seconds-based labels 0.3, 1,
/// 1.6, 3, 3.3, 5 map onto these counts.
inline constexpr std::array<int, 6> kWindowLengths = {10, 30, 50, 90, 100, 150};

inline double mean(std::span<const double> x) {
    return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Biased (1/N) variance, the quantity tied to the PSD integral by Parseval.
inline double variance_biased(std::span<const double> x) {
    const double m = mean(x);
    double acc = 0.0;
    for (const double v : x) acc += (v - m) * (v - m);
    return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

inline std::vector<double> remove_mean(std::span<const double> x) {
    const double m = mean(x);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - m;
    return out;
}

// ---------------------------------------------------------------------------
// FFT: iterative radix-2 for powers of two, Bluestein chirp-z for the rest.
// ---------------------------------------------------------------------------

namespace detail {

inline void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse)
        for (auto& v : a) v /= static_cast<double>(n);
}

/// Chirp phase exp(sign * i*pi*k^2/n), with k^2 reduced mod 2n to keep the
/// argument small for long inputs.
inline std::complex<double> chirp(std::size_t k, std::size_t n, double sign) {
    const unsigned long long r = (static_cast<unsigned long long>(k) * k) %
                                 (2ull * static_cast<unsigned long long>(n));
    const double ang = sign * M_PI * static_cast<double>(r) / static_cast<double>(n);
    return {std::cos(ang), std::sin(ang)};
}

inline std::vector<std::complex<double>> fft_bluestein(
    const std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    std::vector<std::complex<double>> a(m), b(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp(k, n, -1.0);
    b[0] = {1.0, 0.0};
    for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = chirp(k, n, +1.0);
    fft_pow2(a, false);
    fft_pow2(b, false);
    for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
    fft_pow2(a, true);
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp(k, n, -1.0);
    return out;
}

} // namespace detail

/// Forward DFT of a real series, any length >= 1.
inline std::vector<std::complex<double>> dft(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = {x[i], 0.0};
    if (n < 2) return a;
    if ((n & (n - 1)) == 0) {
        detail::fft_pow2(a, false);
        return a;
    }
    return detail::fft_bluestein(a);
}

// ---------------------------------------------------------------------------
// Power spectral density
// ---------------------------------------------------------------------------

/// One-sided periodogram of the mean-removed input, rectangular window.
/// Calibrated so that integral() equals the biased sample variance; Welch
/// averaging would smooth the spectrum but break that identity.
struct PowerSpectrum {
    std::vector<double> freqs;   // Hz, 0..rate/2
    std::vector<double> density; // power per Hz
    double bin_width = 0.0;      // Hz

    double integral() const {
        double acc = 0.0;
        for (const double d : density) acc += d;
        return acc * bin_width;
    }
};

inline PowerSpectrum psd(std::span<const double> signal, double rate_hz) {
    if (signal.size() < 2) throw ParameterError("psd: need at least 2 samples");
    if (!(rate_hz > 0.0)) throw ParameterError("psd: rate must be positive");
    const std::size_t n = signal.size();
    const std::vector<double> centered = remove_mean(signal);
    const auto spectrum = dft(centered);

    PowerSpectrum ps;
    ps.bin_width = rate_hz / static_cast<double>(n);
    const std::size_t half = n / 2; // highest one-sided bin index
    ps.freqs.resize(half + 1);
    ps.density.resize(half + 1);
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n) * ps.bin_width);
    for (std::size_t k = 0; k <= half; ++k) {
        ps.freqs[k] = static_cast<double>(k) * ps.bin_width;
        const bool unique_bin = (k == 0) || (n % 2 == 0 && k == half);
        ps.density[k] = std::norm(spectrum[k]) * scale * (unique_bin ? 1.0 : 2.0);
    }
    return ps;
}

// ---------------------------------------------------------------------------
// Zero-phase low-pass filter (2nd-order Butterworth, forward-backward)
// ---------------------------------------------------------------------------

struct Biquad {
    double b0, b1, b2; // numerator
    double a1, a2;     // denominator (a0 normalized to 1)
};

inline Biquad butterworth_lowpass(double cutoff_hz, double rate_hz) {
    if (!(cutoff_hz > 0.0) || !(cutoff_hz < rate_hz / 2.0))
        throw ParameterError("lowpass: cutoff must lie in (0, rate/2)");
    const double k = std::tan(M_PI * cutoff_hz / rate_hz);
    const double sqrt2 = std::sqrt(2.0);
    const double norm = 1.0 / (1.0 + sqrt2 * k + k * k);
    Biquad f;
    f.b0 = k * k * norm;
    f.b1 = 2.0 * f.b0;
    f.b2 = f.b0;
    f.a1 = 2.0 * (k * k - 1.0) * norm;
    f.a2 = (1.0 - sqrt2 * k + k * k) * norm;
    return f;
}

/// Squared magnitude response of one forward pass at frequency f.
/// The two-pass amplitude gain of filtfilt is this value.
inline double biquad_power_response(const Biquad& f, double freq_hz, double rate_hz) {
    const double w = 2.0 * M_PI * freq_hz / rate_hz;
    const std::complex<double> z1 = std::polar(1.0, -w);
    const std::complex<double> z2 = z1 * z1;
    const std::complex<double> num = f.b0 + f.b1 * z1 + f.b2 * z2;
    const std::complex<double> den = 1.0 + f.a1 * z1 + f.a2 * z2;
    return std::norm(num / den);
}

namespace detail {

/// Direct-form-II-transposed single pass with caller-provided initial state.
inline void filter_pass(const Biquad& f, std::vector<double>& x, double z1_0, double z2_0) {
    double z1 = z1_0, z2 = z2_0;
    for (double& v : x) {
        const double in = v;
        const double out = f.b0 * in + z1;
        z1 = f.b1 * in - f.a1 * out + z2;
        z2 = f.b2 * in - f.a2 * out;
        v = out;
    }
}

/// Steady-state filter state for a unit step input (matches lfilter_zi).
inline std::pair<double, double> unit_step_state(const Biquad& f) {
    const double z2 = f.b2 - f.a2;
    const double z1 = f.b1 - f.a1 + z2;
    return {z1, z2};
}

} // namespace detail

/// Forward-backward application of a biquad: zero phase, squared magnitude.
/// Ends are extended by odd reflection before filtering to suppress edge
/// transients, mirroring the usual filtfilt construction.
inline std::vector<double> filtfilt(const Biquad& f, std::span<const double> x) {
    if (x.size() < 9) throw ParameterError("filtfilt: need at least 9 samples");
    const std::size_t pad = std::min<std::size_t>(9, x.size() - 1);
    const std::size_t n = x.size();

    std::vector<double> ext(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
    for (std::size_t i = 0; i < n; ++i) ext[pad + i] = x[i];
    for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

    const auto [z1, z2] = detail::unit_step_state(f);
    detail::filter_pass(f, ext, z1 * ext.front(), z2 * ext.front());
    std::reverse(ext.begin(), ext.end());
    detail::filter_pass(f, ext, z1 * ext.front(), z2 * ext.front());
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                               ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

/// Zero-phase low-pass; same length as the input, DC gain 1.
inline std::vector<double> lowpass(std::span<const double> signal, double rate_hz,
                                   double cutoff_hz) {
    return filtfilt(butterworth_lowpass(cutoff_hz, rate_hz), signal);
}

// ---------------------------------------------------------------------------
// Step detection
// ---------------------------------------------------------------------------

/// Indices of accepted peaks in the mean-removed, low-pass-filtered signal.
/// A peak is a local maximum above kPeakThresholdFraction of the filtered
/// signal's standard deviation; candidates closer than the minimum spacing
/// are resolved in favor of the taller one.
inline std::vector<std::size_t> detect_step_peaks(std::span<const double> z_signal,
                                                  double rate_hz) {
    if (static_cast<double>(z_signal.size()) < 2.0 * rate_hz)
        throw ParameterError("count_steps: need at least 2 s of signal");
    const std::vector<double> centered = remove_mean(z_signal);
    const std::vector<double> y = lowpass(centered, rate_hz, kStepFilterCutoffHz);

    const double sd = std::sqrt(variance_biased(y));
    const double threshold = kPeakThresholdFraction * sd;

    std::vector<std::size_t> candidates;
    for (std::size_t i = 1; i + 1 < y.size(); ++i)
        if (y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > threshold) candidates.push_back(i);

    // Tallest-first greedy selection under the spacing constraint.
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (y[candidates[a]] != y[candidates[b]]) return y[candidates[a]] > y[candidates[b]];
        return candidates[a] < candidates[b];
    });
    const double min_gap = kMinPeakSpacingS * rate_hz;
    std::vector<std::size_t> accepted;
    for (const std::size_t oi : order) {
        const std::size_t idx = candidates[oi];
        bool ok = true;
        for (const std::size_t a : accepted) {
            const double gap = idx > a ? static_cast<double>(idx - a) : static_cast<double>(a - idx);
            if (gap < min_gap) {
                ok = false;
                break;
            }
        }
        if (ok) accepted.push_back(idx);
    }
    std::sort(accepted.begin(), accepted.end());
    return accepted;
}

/// Number of detected steps: one step per peak of the anteroposterior signal.
inline int count_steps(std::span<const double> z_signal, double rate_hz) {
    return static_cast<int>(detect_step_peaks(z_signal, rate_hz).size());
}

// ---------------------------------------------------------------------------
// Time windowing
// ---------------------------------------------------------------------------

struct WindowProvenance {
    std::string participant_id;
    ActivityKind activity = ActivityKind::SC_L1;
};

/// Fixed-length raw-signal windows, non-overlapping and consecutive; a
/// trailing partial window is discarded. Each window is stored axis-major:
/// [x(0..L-1), y(0..L-1), z(0..L-1)], values in g-units as recorded.
struct WindowBatch {
    int window_len = 0;
    std::vector<std::vector<double>> windows; // each 3 * window_len
    std::vector<WindowProvenance> provenance;
    bool short_input = false; // a recording shorter than one window was seen

    std::size_t size() const { return windows.size(); }

    void append(const WindowBatch& other) {
        if (window_len != other.window_len)
            throw ParameterError("WindowBatch::append: window_len mismatch");
        windows.insert(windows.end(), other.windows.begin(), other.windows.end());
        provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
        short_input = short_input || other.short_input;
    }
};

inline bool is_canonical_window_len(int window_len) {
    return std::find(kWindowLengths.begin(), kWindowLengths.end(), window_len) !=
           kWindowLengths.end();
}

inline WindowBatch segment(const Recording& r, int window_len) {
    if (!is_canonical_window_len(window_len))
        throw ParameterError("segment: window_len must be one of {10,30,50,90,100,150}, got " +
                             std::to_string(window_len));
    WindowBatch batch;
    batch.window_len = window_len;
    const std::size_t L = static_cast<std::size_t>(window_len);
    const std::size_t n_windows = r.size() / L;
    if (n_windows == 0) {
        batch.short_input = true;
        return batch;
    }
    batch.windows.reserve(n_windows);
    for (std::size_t w = 0; w < n_windows; ++w) {
        std::vector<double> win(3 * L);
        for (int a = 0; a < 3; ++a)
            for (std::size_t i = 0; i < L; ++i)
                win[static_cast<std::size_t>(a) * L + i] = r.axes[a][w * L + i];
        batch.windows.push_back(std::move(win));
        batch.provenance.push_back({r.participant_id, r.activity.kind});
    }
    return batch;
}

} // namespace gaitlab::dsp
