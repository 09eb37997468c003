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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace convleak {

struct ChainConfig {
    std::size_t samples_per_cycle = 64;
    double sample_interval = 0.4e-9; // seconds

    // Pulse shape, in fractions of a clock cycle.
    double rise_tau = 0.08;
    double decay_tau = 0.40;
    double peak_fraction = 0.25;

    // AC-coupled amplifier. The default is a desk-scale 200 clock periods;
    // the board's 250 Hz corner corresponds to 640e-6.
    bool highpass = true;
    double highpass_tau = 200 * 64 * 0.4e-9;

    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    // Idle cycles rendered after the last active cycle so that its
    // trailing power is not cut off.
    std::size_t drain_cycles = 16;

    double cycle_period() const { return sample_interval * static_cast<double>(samples_per_cycle); }
};

inline void validate(const ChainConfig &cfg) {
    if (cfg.samples_per_cycle < 8)
        throw ConfigError("samples_per_cycle must be >= 8");
    if (!(cfg.sample_interval > 0.0))
        throw ConfigError("sample_interval must be positive");
    if (!(cfg.rise_tau > 0.0) || !(cfg.rise_tau < cfg.decay_tau))
        throw ConfigError("need 0 < rise_tau < decay_tau");
    if (!(cfg.peak_fraction > 0.0) || !(cfg.peak_fraction < 1.0))
        throw ConfigError("peak_fraction must lie in (0, 1)");
    if (cfg.highpass && !(cfg.highpass_tau > 10.0 * cfg.cycle_period()))
        throw ConfigError("highpass_tau must be much longer than a clock cycle");
    if (!(cfg.noise_sigma >= 0.0))
        throw ConfigError("noise_sigma must be >= 0");
}

// Sampled voltage-like waveform. The first cycles * samples_per_cycle
// samples cover the active cycles; anything after is drain.
struct RawTrace {
    std::vector<double> samples;
    double sample_interval = 0.4e-9;
    std::size_t cycles = 0;
    std::size_t samples_per_cycle = 64;

    std::size_t active_samples() const { return cycles * samples_per_cycle; }
};

// Unit-area pulse of one clock cycle: exponential charge up to the peak,
// exponential discharge afterwards, sampled at n + 1 during the rise.
inline std::vector<double> pulse_shape(const ChainConfig &cfg) {
    const double ns = static_cast<double>(cfg.samples_per_cycle);
    const double rise = cfg.rise_tau * ns;
    const double decay = cfg.decay_tau * ns;
    const auto peak = static_cast<std::size_t>(std::lround(cfg.peak_fraction * ns));
    const auto tail = static_cast<std::size_t>(std::ceil(40.0 * decay));
    std::vector<double> shape(peak + tail);
    for (std::size_t n = 0; n < peak; ++n)
        shape[n] = 1.0 - std::exp(-static_cast<double>(n + 1) / rise);
    for (std::size_t n = peak; n < shape.size(); ++n)
        shape[n] = std::exp(-static_cast<double>(n - peak) / decay);
    double total = 0.0;
    for (double v : shape)
        total += v;
    for (double &v : shape)
        v /= total;
    return shape;
}

// Power-distribution-network smearing: each cycle emits a pulse whose
// samples sum to that cycle's power; pulses superpose.
inline RawTrace render_pdn(const CyclePowers &p, const ChainConfig &cfg) {
    validate(cfg);
    const std::vector<double> shape = pulse_shape(cfg);
    const std::size_t ns = cfg.samples_per_cycle;
    RawTrace t;
    t.sample_interval = cfg.sample_interval;
    t.samples_per_cycle = ns;
    t.cycles = p.values.size();
    t.samples.assign((t.cycles + cfg.drain_cycles) * ns, 0.0);
    for (std::size_t j = 0; j < t.cycles; ++j) {
        const double a = p.values[j];
        if (a == 0.0)
            continue;
        const std::size_t start = j * ns;
        const std::size_t n = std::min(shape.size(), t.samples.size() - start);
        for (std::size_t i = 0; i < n; ++i)
            t.samples[start + i] += a * shape[i];
    }
    return t;
}

// Convolution with h(0) = 1, h(n) = -(T/tau) exp(-nT/tau) for n > 0,
// evaluated recursively.
inline RawTrace apply_highpass(const RawTrace &in, double tau) {
    if (!(tau > 0.0))
        throw ConfigError("high-pass time constant must be positive");
    const double g = in.sample_interval / tau;
    const double decay = std::exp(-g);
    RawTrace out = in;
    double history = 0.0; // sum_{i<n} x(i) exp(-(n-i)T/tau)
    for (std::size_t n = 0; n < in.samples.size(); ++n) {
        if (n > 0)
            history = decay * (history + in.samples[n - 1]);
        out.samples[n] = in.samples[n] - g * history;
    }
    return out;
}

inline RawTrace apply_highpass(const RawTrace &in, const ChainConfig &cfg) {
    return apply_highpass(in, cfg.highpass_tau);
}

inline RawTrace add_noise(const RawTrace &in, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0))
        throw ConfigError("noise sigma must be >= 0");
    RawTrace out = in;
    if (sigma == 0.0)
        return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (double &v : out.samples)
        v += gauss(rng);
    return out;
}

inline RawTrace add_noise(const RawTrace &in, const ChainConfig &cfg) {
    return add_noise(in, cfg.noise_sigma, cfg.seed);
}

inline double rms(const std::vector<double> &v, std::size_t count) {
    count = std::min(count, v.size());
    if (count == 0)
        return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i)
        s += v[i] * v[i];
    return std::sqrt(s / static_cast<double>(count));
}

// Noise standard deviation that gives the requested signal-to-noise ratio
// against the RMS of a clean trace's active region.
inline double sigma_for_snr(const RawTrace &clean, double snr_db) {
    return rms(clean.samples, clean.active_samples()) / std::pow(10.0, snr_db / 20.0);
}

// The full acquisition path: PDN smearing, amplifier high-pass, white noise.
inline RawTrace measure(const CyclePowers &p, const ChainConfig &cfg) {
    RawTrace t = render_pdn(p, cfg);
    if (cfg.highpass)
        t = apply_highpass(t, cfg);
    return add_noise(t, cfg);
}

// PTRC trace files.
inline std::vector<std::uint8_t> encode_trace(const RawTrace &t) {
    io::Writer out;
    out.put_magic("PTRC");
    out.put<std::uint16_t>(1);
    out.put<double>(t.sample_interval * 1e9);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(t.samples_per_cycle));
    out.put<std::uint64_t>(t.cycles);
    out.put<std::uint64_t>(t.samples.size());
    for (double v : t.samples)
        out.put<float>(static_cast<float>(v));
    return out.take();
}

inline RawTrace decode_trace(const std::vector<std::uint8_t> &bytes, const std::string &source) {
    io::Reader in(bytes, source);
    in.expect_magic("PTRC");
    if (const auto version = in.get<std::uint16_t>(); version != 1)
        throw FormatError(source + ": unsupported PTRC version " + std::to_string(version));
    RawTrace t;
    t.sample_interval = in.get<double>() * 1e-9;
    t.samples_per_cycle = in.get<std::uint32_t>();
    t.cycles = in.get<std::uint64_t>();
    const auto count = in.get<std::uint64_t>();
    if (t.samples_per_cycle == 0 || count < t.cycles * t.samples_per_cycle)
        throw FormatError(source + ": sample count smaller than cycles * samples_per_cycle");
    if (in.remaining() != count * sizeof(float))
        throw LengthError(source + ": expected " + std::to_string(count) + " samples");
    t.samples.resize(count);
    for (double &v : t.samples)
        v = in.get<float>();
    return t;
}

inline void save_trace(const RawTrace &t, const std::filesystem::path &path) {
    io::write_file(path, encode_trace(t));
}

inline RawTrace load_trace(const std::filesystem::path &path) {
    return decode_trace(io::read_file(path), path.string());
}

} // namespace convleak
