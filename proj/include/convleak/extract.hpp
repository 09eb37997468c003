/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * This file is part of convleak.
 */

#pragma once

#include "convleak/accel_sim.hpp"
#include "convleak/binary_io.hpp"
#include "convleak/error.hpp"
#include "convleak/meas_chain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace convleak {

class AlignmentError : public DataError {
public:
    explicit AlignmentError(const std::string &what) : DataError(what) {}
};

// Windowed-sinc (Hamming) low-pass taps with unit DC gain. cutoff is a
// fraction of the Nyquist frequency.
inline std::vector<double> lowpass_taps(double cutoff, std::size_t order) {
    const std::size_t n = order + 1;
    const double fc = cutoff / 2.0; // cycles per sample
    const double mid = static_cast<double>(order) / 2.0;
    std::vector<double> h(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) - mid;
        const double sinc =
            x == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * x) / (std::numbers::pi * x);
        const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                static_cast<double>(order));
        h[i] = sinc * w;
        sum += h[i];
    }
    for (double &v : h)
        v /= sum;
    return h;
}

// Zero-phase FIR low-pass: the windowed-sinc filter is run forward and then
// backward over an edge-extended copy of the trace.
inline RawTrace lowpass(const RawTrace &in, double cutoff, std::size_t order = 127) {
    if (!(cutoff > 0.0 && cutoff < 1.0))
        throw ConfigError("low-pass cutoff must lie in (0, 1) of Nyquist");
    if (in.samples.size() < order)
        throw LengthError("trace of " + std::to_string(in.samples.size()) +
                          " samples is shorter than the filter order " + std::to_string(order));
    const std::vector<double> h = lowpass_taps(cutoff, order);
    const std::size_t taps = h.size();
    const std::size_t pad = 3 * taps;
    const std::size_t n = in.samples.size();

    std::vector<double> x(n + 2 * pad);
    std::fill(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(pad), in.samples.front());
    std::copy(in.samples.begin(), in.samples.end(), x.begin() + static_cast<std::ptrdiff_t>(pad));
    std::fill(x.end() - static_cast<std::ptrdiff_t>(pad), x.end(), in.samples.back());

    auto causal = [&](const std::vector<double> &src) {
        std::vector<double> dst(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            const std::size_t kmax = std::min(taps, i + 1);
            double acc = 0.0;
            for (std::size_t k = 0; k < kmax; ++k)
                acc += h[k] * src[i - k];
            // Before the start, treat the signal as continuing at its first value.
            for (std::size_t k = kmax; k < taps; ++k)
                acc += h[k] * src.front();
            dst[i] = acc;
        }
        return dst;
    };

    std::vector<double> y = causal(x);
    std::reverse(y.begin(), y.end());
    y = causal(y);
    std::reverse(y.begin(), y.end());

    RawTrace out = in;
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(pad), n, out.samples.begin());
    return out;
}

// Exact recursive inverse of apply_highpass with the same impulse response:
// r(n) = x(n) - sum_{i<n} r(i) h(n-i).
inline RawTrace restore_dc(const RawTrace &in, double tau) {
    if (!(tau > 0.0))
        throw ConfigError("high-pass time constant must be positive");
    const double g = in.sample_interval / tau;
    const double decay = std::exp(-g);
    RawTrace out = in;
    double history = 0.0;
    for (std::size_t n = 0; n < in.samples.size(); ++n) {
        if (n > 0)
            history = decay * (history + out.samples[n - 1]);
        out.samples[n] = in.samples[n] + g * history;
    }
    return out;
}

struct AlignConfig {
    double min_correlation = 0.5;
    double min_separation = 0.8; // in cycles
    std::size_t template_candidates = 32;
    std::uint64_t seed = 0;
    // Explicit template start sample (overrides auto-selection).
    std::optional<std::size_t> template_start;
};

struct AlignmentPoints {
    std::vector<std::size_t> indices;
    std::vector<double> templ;
};

// Pearson correlation of a template against every offset of a signal.
inline std::vector<double> sliding_pearson(const std::vector<double> &x,
                                           const std::vector<double> &templ,
                                           std::size_t last_offset) {
    const std::size_t m = templ.size();
    if (x.size() < m)
        return {};
    last_offset = std::min(last_offset, x.size() - m);
    double tmean = 0.0;
    for (double v : templ)
        tmean += v;
    tmean /= static_cast<double>(m);
    std::vector<double> tc(m);
    double tnorm = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        tc[i] = templ[i] - tmean;
        tnorm += tc[i] * tc[i];
    }
    tnorm = std::sqrt(tnorm);

    std::vector<double> corr(last_offset + 1, 0.0);
    if (tnorm == 0.0)
        return corr;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        s1 += x[i];
        s2 += x[i] * x[i];
    }
    const double dm = static_cast<double>(m);
    for (std::size_t o = 0; o <= last_offset; ++o) {
        if (o > 0) {
            const double out = x[o - 1], in = x[o + m - 1];
            s1 += in - out;
            s2 += in * in - out * out;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            dot += tc[i] * x[o + i];
        const double var = s2 - s1 * s1 / dm;
        // Windows with (numerically) no variation have no defined correlation.
        if (var > 1e-12 * std::max(1.0, s2))
            corr[o] = dot / (tnorm * std::sqrt(var));
    }
    return corr;
}

namespace detail {

inline double pearson(const double *a, const double *b, std::size_t n) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

// Among randomly sampled cycle-length windows, the one most correlated on
// average with the others, shifted so that it starts at its steepest rise.
inline std::size_t auto_template_start(const RawTrace &t, const AlignConfig &cfg) {
    const std::size_t ns = t.samples_per_cycle;
    const std::size_t span = std::min(t.active_samples(), t.samples.size());
    if (span < 2 * ns)
        throw AlignmentError("trace too short to select an alignment template");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, span - ns);
    std::vector<std::size_t> starts(std::max<std::size_t>(cfg.template_candidates, 2));
    for (std::size_t &s : starts)
        s = pick(rng);

    std::size_t best = starts[0];
    double best_score = -2.0;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        double score = 0.0;
        for (std::size_t j = 0; j < starts.size(); ++j)
            if (i != j)
                score += pearson(&t.samples[starts[i]], &t.samples[starts[j]], ns);
        if (score > best_score) {
            best_score = score;
            best = starts[i];
        }
    }

    std::size_t rise = best;
    double steepest = -std::numeric_limits<double>::infinity();
    for (std::size_t i = std::max<std::size_t>(best, 1); i < best + ns; ++i) {
        const double d = t.samples[i] - t.samples[i - 1];
        if (d > steepest) {
            steepest = d;
            rise = i;
        }
    }
    // The pulse starts right after the trough that precedes its steepest rise.
    std::size_t trough = rise - 1;
    for (std::size_t i = rise - 1; i + ns / 4 >= rise && i > 0; --i)
        if (t.samples[i - 1] < t.samples[trough])
            trough = i - 1;
    std::size_t onset = trough + 1;
    if (onset + ns > span)
        onset -= ns;
    return onset;
}

} // namespace detail

// Cycle-start detection by template matching. Correlation peaks above the
// threshold are kept greedily (strongest first) subject to a minimum
// separation; the result is then regularized to exactly t.cycles points by
// walking the nominal clock period and snapping to a detected peak within
// 20% of a cycle.
inline AlignmentPoints align(const RawTrace &t, const AlignConfig &cfg = {},
                             const std::vector<double> *templ = nullptr) {
    const std::size_t ns = t.samples_per_cycle;
    if (t.samples.size() < 3 * ns)
        throw LengthError("trace must span at least three cycles to align");

    AlignmentPoints out;
    if (templ) {
        out.templ = *templ;
    } else {
        const std::size_t start =
            cfg.template_start ? *cfg.template_start : detail::auto_template_start(t, cfg);
        if (start + ns > t.samples.size())
            throw AlignmentError("template start beyond the trace");
        out.templ.assign(t.samples.begin() + static_cast<std::ptrdiff_t>(start),
                         t.samples.begin() + static_cast<std::ptrdiff_t>(start + ns));
    }
    if (out.templ.size() < 2)
        throw AlignmentError("alignment template is empty");

    const std::size_t last = t.cycles > 0 ? t.cycles * ns - 1 : t.samples.size();
    const std::vector<double> corr = sliding_pearson(t.samples, out.templ, last);

    std::vector<std::size_t> peaks;
    for (std::size_t o = 0; o < corr.size(); ++o) {
        if (corr[o] < cfg.min_correlation)
            continue;
        const bool left_ok = o == 0 || corr[o] >= corr[o - 1];
        const bool right_ok = o + 1 == corr.size() || corr[o] > corr[o + 1];
        if (left_ok && right_ok)
            peaks.push_back(o);
    }
    std::stable_sort(peaks.begin(), peaks.end(),
                     [&](std::size_t a, std::size_t b) { return corr[a] > corr[b]; });
    const double min_sep = cfg.min_separation * static_cast<double>(ns);
    std::vector<std::size_t> kept;
    for (std::size_t p : peaks) {
        bool clear = true;
        for (std::size_t q : kept)
            if (std::abs(static_cast<double>(p) - static_cast<double>(q)) < min_sep) {
                clear = false;
                break;
            }
        if (clear)
            kept.push_back(p);
    }
    std::sort(kept.begin(), kept.end());
    if (kept.size() < 2)
        throw AlignmentError("found " + std::to_string(kept.size()) +
                             " alignment point(s); need at least 2");
    if (t.cycles == 0) {
        out.indices = kept;
        return out;
    }

    const auto tolerance = static_cast<std::ptrdiff_t>(std::floor(0.2 * static_cast<double>(ns)));
    const auto step = static_cast<std::ptrdiff_t>(ns);
    const auto first = static_cast<std::ptrdiff_t>(kept.front());
    std::ptrdiff_t expected = first - step * static_cast<std::ptrdiff_t>(std::lround(
                                              static_cast<double>(first) / static_cast<double>(ns)));
    expected = std::max<std::ptrdiff_t>(expected, 0);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < t.cycles; ++k) {
        while (cursor < kept.size() &&
               static_cast<std::ptrdiff_t>(kept[cursor]) < expected - tolerance)
            ++cursor;
        std::ptrdiff_t point = expected;
        std::ptrdiff_t best_gap = tolerance + 1;
        for (std::size_t c = cursor; c < kept.size(); ++c) {
            const auto gap = static_cast<std::ptrdiff_t>(kept[c]) - expected;
            if (gap > tolerance)
                break;
            if (std::abs(gap) < std::abs(best_gap)) {
                best_gap = gap;
                point = static_cast<std::ptrdiff_t>(kept[c]);
            }
        }
        out.indices.push_back(static_cast<std::size_t>(point));
        expected = point + step;
    }
    return out;
}

// Cycle starts at a fixed phase, for traces whose clock is known.
inline AlignmentPoints nominal_alignment(const RawTrace &t, std::size_t first = 0) {
    AlignmentPoints a;
    for (std::size_t k = 0; k < t.cycles; ++k)
        a.indices.push_back(first + k * t.samples_per_cycle);
    return a;
}

struct FitParams {
    double amplitude = 0.0; // V_p
    double tau = 0.0;       // decay constant in samples
    double residual = 0.0;  // RMS
    int iterations = 0;
    bool converged = false;
};

// Gauss-Newton fit of y(t) = V exp(-t / tau) to samples at t = 0, 1, ...
// Steps are halved until the squared error stops growing. tau is kept
// inside [tau_min, tau_max].
inline FitParams fit_decay(const double *y, std::size_t n, double tau0, double tau_min,
                           double tau_max, int max_iter = 50, double tol = 1e-8) {
    FitParams fit;
    fit.amplitude = y[0];
    for (std::size_t i = 0; i < n; ++i)
        fit.amplitude = std::max(fit.amplitude, y[i]);
    fit.tau = tau0;

    auto sse = [&](double v, double tau) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - v * std::exp(-static_cast<double>(i) / tau);
            s += r * r;
        }
        return s;
    };

    double err = sse(fit.amplitude, fit.tau);
    for (int it = 0; it < max_iter; ++it) {
        fit.iterations = it + 1;
        double a11 = 0.0, a12 = 0.0, a22 = 0.0, b1 = 0.0, b2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i);
            const double e = std::exp(-t / fit.tau);
            const double jv = e;
            const double jt = fit.amplitude * t * e / (fit.tau * fit.tau);
            const double r = y[i] - fit.amplitude * e;
            a11 += jv * jv;
            a12 += jv * jt;
            a22 += jt * jt;
            b1 += jv * r;
            b2 += jt * r;
        }
        const double det = a11 * a22 - a12 * a12;
        if (!(std::abs(det) > 1e-300) || !std::isfinite(det))
            break;
        const double dv = (a22 * b1 - a12 * b2) / det;
        const double dt = (a11 * b2 - a12 * b1) / det;

        double scale = 1.0;
        double v_new = fit.amplitude, t_new = fit.tau, err_new = err;
        for (int h = 0; h < 30; ++h) {
            v_new = fit.amplitude + scale * dv;
            t_new = std::clamp(fit.tau + scale * dt, tau_min, tau_max);
            err_new = sse(v_new, t_new);
            if (err_new <= err)
                break;
            scale *= 0.5;
        }
        if (!(err_new <= err) || !std::isfinite(err_new))
            break;
        const bool small = std::abs(v_new - fit.amplitude) <= tol * std::abs(fit.amplitude) &&
                           std::abs(t_new - fit.tau) <= tol * fit.tau;
        const bool flat = err - err_new <= tol * err;
        fit.amplitude = v_new;
        fit.tau = t_new;
        err = err_new;
        if (small || flat) {
            fit.converged = true;
            break;
        }
    }
    fit.residual = n ? std::sqrt(err / static_cast<double>(n)) : 0.0;
    if (!std::isfinite(fit.amplitude) || !std::isfinite(fit.tau))
        fit.converged = false;
    return fit;
}

struct ExtractionResult {
    CyclePowers powers;
    std::vector<FitParams> fits;
    std::vector<bool> low_confidence;
    double fit_error = 0.0; // summed squared residual of all decay fits

    std::size_t low_confidence_count() const {
        return static_cast<std::size_t>(std::count(low_confidence.begin(), low_confidence.end(), true));
    }
};

// Cycle power extraction. For each aligned cycle the post-peak samples are
// fitted with a decaying exponential, the fitted tail beyond the cycle end
// (down to 1% of the amplitude, at most five cycles) is credited to this
// cycle and removed from the following samples.
inline ExtractionResult extract_cycle_power(const RawTrace &t, const AlignmentPoints &a) {
    if (a.indices.empty())
        throw AlignmentError("no aligned cycles to extract");
    const std::size_t ns = t.samples_per_cycle;
    const double dns = static_cast<double>(ns);
    std::vector<double> p = t.samples;

    ExtractionResult out;
    out.powers.values.resize(a.indices.size());
    out.fits.resize(a.indices.size());
    out.low_confidence.assign(a.indices.size(), false);

    for (std::size_t j = 0; j < a.indices.size(); ++j) {
        const std::size_t st = std::min(a.indices[j], p.size());
        std::size_t ed = j + 1 < a.indices.size() ? a.indices[j + 1] : st + ns;
        ed = std::clamp(ed, st, p.size());

        double cycle_sum = 0.0;
        std::size_t peak = st;
        for (std::size_t i = st; i < ed; ++i) {
            cycle_sum += p[i];
            if (p[i] > p[peak])
                peak = i;
        }
        if (ed == st || p[peak] <= 0.0) {
            out.powers.values[j] = cycle_sum;
            continue;
        }
        if (ed - peak < 3) {
            out.powers.values[j] = cycle_sum;
            out.low_confidence[j] = true;
            continue;
        }

        FitParams fit = fit_decay(&p[peak], ed - peak, 0.4 * dns, 0.05 * dns, 5.0 * dns);
        out.fits[j] = fit;
        out.fit_error += fit.residual * fit.residual * static_cast<double>(ed - peak);
        if (!fit.converged || fit.amplitude < 0.0) {
            out.powers.values[j] = cycle_sum;
            out.low_confidence[j] = true;
            continue;
        }

        double trail_sum = 0.0;
        const double t0 = static_cast<double>(ed - peak);
        const double floor_level = 0.01 * fit.amplitude;
        for (std::size_t n = 0; n < 5 * ns; ++n) {
            const double v = fit.amplitude * std::exp(-(t0 + static_cast<double>(n)) / fit.tau);
            if (v < floor_level)
                break;
            trail_sum += v;
            if (ed + n < p.size())
                p[ed + n] -= v;
        }
        out.powers.values[j] = cycle_sum + trail_sum;
    }
    return out;
}

// Shifts all alignment points by the common offset (within +-radius
// samples) under which the first probe_cycles cycles are best explained by
// the pulse model. Template matching on a low-passed trace locks onto a
// consistent point of the pulse, but not necessarily onto its start.
inline AlignmentPoints refine_phase(const RawTrace &t, const AlignmentPoints &a,
                                    std::size_t radius, std::size_t probe_cycles = 160) {
    if (radius == 0 || a.indices.empty())
        return a;
    const auto r = static_cast<std::ptrdiff_t>(radius);
    auto shifted = [&](std::ptrdiff_t shift, std::size_t count) {
        AlignmentPoints s;
        s.templ = a.templ;
        for (std::size_t j = 0; j < count; ++j) {
            const auto v = static_cast<std::ptrdiff_t>(a.indices[j]) + shift;
            s.indices.push_back(static_cast<std::size_t>(std::max<std::ptrdiff_t>(v, 0)));
        }
        return s;
    };
    const std::size_t probe = std::min(probe_cycles, a.indices.size());
    std::ptrdiff_t best = 0;
    double best_error = std::numeric_limits<double>::infinity();
    for (std::ptrdiff_t d = 0; d <= r; ++d)
        for (std::ptrdiff_t shift : {-d, d}) {
            if (d == 0 && shift < 0)
                continue;
            const double e = extract_cycle_power(t, shifted(shift, probe)).fit_error;
            if (e < best_error) {
                best_error = e;
                best = shift;
            }
        }
    return shifted(best, a.indices.size());
}

struct ExtractConfig {
    bool lowpass = true;
    double lowpass_cutoff = 0.3;
    std::size_t lowpass_order = 127;
    bool restore_dc = true;
    double highpass_tau = 200 * 64 * 0.4e-9;
    AlignConfig align;
    std::size_t phase_radius = 4; // samples; 0 disables phase refinement
};

// Low-pass, DC restoration, alignment and cycle power extraction.
inline ExtractionResult extract_trace(const RawTrace &raw, const ExtractConfig &cfg) {
    RawTrace t = cfg.lowpass ? lowpass(raw, cfg.lowpass_cutoff, cfg.lowpass_order) : raw;
    if (cfg.restore_dc)
        t = restore_dc(t, cfg.highpass_tau);
    return extract_cycle_power(t, refine_phase(t, align(t, cfg.align), cfg.phase_radius));
}

// PCYC cycle power files.
inline std::vector<std::uint8_t> encode_cycle_powers(const CyclePowers &p) {
    io::Writer out;
    out.put_magic("PCYC");
    out.put<std::uint64_t>(p.values.size());
    for (double v : p.values)
        out.put<float>(static_cast<float>(v));
    return out.take();
}

inline CyclePowers decode_cycle_powers(const std::vector<std::uint8_t> &bytes,
                                       const std::string &source) {
    io::Reader in(bytes, source);
    in.expect_magic("PCYC");
    const auto count = in.get<std::uint64_t>();
    if (in.remaining() != count * sizeof(float))
        throw LengthError(source + ": expected " + std::to_string(count) + " cycle powers");
    CyclePowers p;
    p.values.resize(count);
    for (double &v : p.values)
        v = in.get<float>();
    return p;
}

inline void save_cycle_powers(const CyclePowers &p, const std::filesystem::path &path) {
    io::write_file(path, encode_cycle_powers(p));
}

inline CyclePowers load_cycle_powers(const std::filesystem::path &path) {
    return decode_cycle_powers(io::read_file(path), path.string());
}

} // namespace convleak
