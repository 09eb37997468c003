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

#include "convleak/error.hpp"
#include "convleak/image.hpp"
#include "convleak/kernel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace convleak {

enum class Activation { identity, sign };
enum class Scheduling { sequential, random };

struct AccelConfig {
    // Pixels per line-buffer row; 0 means "use the image width".
    std::size_t line_size = 0;
    int kernel_size = 3;
    std::size_t input_channels = 1;
    std::size_t stride_x = 1;
    std::size_t stride_y = 1;

    // Hamming-distance weights for window registers, partial products and
    // the accumulator, plus a per-cycle constant.
    double c_window = 1.0;
    double c_product = 1.0;
    double c_accumulator = 0.5;
    double static_power = 12.0;

    Activation activation = Activation::identity;

    Scheduling scheduling = Scheduling::sequential;
    std::uint64_t schedule_seed = 0;

    bool masking = false;
    std::uint64_t mask_seed = 0;
};

// 2-D output feature map, row-major.
struct FeatureMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<int> values;

    int at(std::size_t x, std::size_t y) const { return values[y * width + x]; }

    friend bool operator==(const FeatureMap &, const FeatureMap &) = default;
};

// Maps valid cycles to image coordinates. Valid cycle v happened at clock
// cycle cycles[v]; its related pixels are the K x (K+1) register slots of
// the previous and current window, stored row by row, oldest column first.
// A slot that still held reset state (before the first pixel was fed) is -1.
struct CycleSchedule {
    std::size_t width = 0;
    std::size_t height = 0;
    int kernel_size = 3;
    std::size_t total_cycles = 0;
    std::vector<std::size_t> cycles;
    std::vector<std::uint16_t> origin_x;
    std::vector<std::uint16_t> origin_y;
    std::vector<std::int32_t> related;

    std::size_t valid_count() const { return cycles.size(); }
    std::size_t slots() const {
        return static_cast<std::size_t>(kernel_size * (kernel_size + 1));
    }
    std::span<const std::int32_t> related_pixels(std::size_t v) const {
        return {related.data() + v * slots(), slots()};
    }

    friend bool operator==(const CycleSchedule &, const CycleSchedule &) = default;
};

struct CyclePowers {
    std::vector<double> values;
    std::size_t kernel_id = 0;

    // Powers of the valid cycles only, in schedule order.
    std::vector<double> valid(const CycleSchedule &s) const {
        std::vector<double> out;
        out.reserve(s.valid_count());
        for (std::size_t c : s.cycles)
            out.push_back(values.at(c));
        return out;
    }
};

struct SimulationRun {
    CycleSchedule schedule;
    CyclePowers powers;
    FeatureMap outputs;
    double datapath_energy = 0.0;
    double static_energy = 0.0;

    double datapath_share() const {
        const double total = datapath_energy + static_energy;
        return total > 0.0 ? datapath_energy / total : 0.0;
    }
};

namespace detail {

inline void check_geometry(const Image &img, const Kernel &k, const AccelConfig &cfg) {
    validate(k);
    if (img.channels != 1 || cfg.input_channels != 1)
        throw UnsupportedError("only single-channel inputs are simulated");
    if (cfg.stride_x == 0 || cfg.stride_y == 0)
        throw ConfigError("strides must be >= 1");
    if (k.size != cfg.kernel_size)
        throw ConfigError("kernel size " + std::to_string(k.size) +
                          " does not match configured size " +
                          std::to_string(cfg.kernel_size));
    const auto K = static_cast<std::size_t>(k.size);
    if (img.width < K || img.height < K)
        throw DimensionError("image " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " is smaller than the " +
                             std::to_string(K) + "x" + std::to_string(K) + " kernel");
    if (cfg.line_size != 0 && cfg.line_size != img.width)
        throw DimensionError("line size " + std::to_string(cfg.line_size) +
                             " does not match image width " + std::to_string(img.width));
}

inline int activate(int v, Activation f) {
    return f == Activation::sign ? (v >= 0 ? 1 : -1) : v;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32)};
    std::uint64_t out = 0;
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    out = (std::uint64_t{words[0]} << 32) | words[1];
    return out;
}

// One fed pixel per clock cycle. window_valid marks cycles whose window is
// a complete, non-wrapping K x K block at (ox, oy).
struct FeedStep {
    std::int32_t pixel;
    bool window_valid;
    std::uint16_t ox, oy;
};

inline std::vector<FeedStep> build_feed(std::size_t width, std::size_t height,
                                        const AccelConfig &cfg, std::uint64_t schedule_seed) {
    const auto K = static_cast<std::size_t>(cfg.kernel_size);
    std::vector<FeedStep> feed;
    auto push_row = [&](std::size_t row, bool output_row, std::size_t oy) {
        for (std::size_t c = 0; c < width; ++c) {
            FeedStep s{static_cast<std::int32_t>(row * width + c), false, 0, 0};
            if (output_row && c + 1 >= K && (c + 1 - K) % cfg.stride_x == 0) {
                s.window_valid = true;
                s.ox = static_cast<std::uint16_t>(c + 1 - K);
                s.oy = static_cast<std::uint16_t>(oy);
            }
            feed.push_back(s);
        }
    };

    if (cfg.scheduling == Scheduling::sequential) {
        feed.reserve(width * height);
        for (std::size_t r = 0; r < height; ++r) {
            const bool out_row = r + 1 >= K && (r + 1 - K) % cfg.stride_y == 0;
            push_row(r, out_row, out_row ? r + 1 - K : 0);
        }
        return feed;
    }

    // Random scheduling: output rows are produced in a seeded random order;
    // for each one the line buffer is refilled with its K input rows.
    std::vector<std::size_t> out_rows;
    for (std::size_t oy = 0; oy + K <= height; oy += cfg.stride_y)
        out_rows.push_back(oy);
    std::mt19937_64 rng(schedule_seed);
    std::shuffle(out_rows.begin(), out_rows.end(), rng);
    feed.reserve(out_rows.size() * K * width);
    for (std::size_t oy : out_rows)
        for (std::size_t a = 0; a < K; ++a)
            push_row(oy + a, a + 1 == K, oy);
    return feed;
}

} // namespace detail

// Direct evaluation of a single-channel convolution layer without padding.
inline FeatureMap convolve_layer(const Image &img, const Kernel &k, const AccelConfig &cfg) {
    detail::check_geometry(img, k, cfg);
    const auto K = static_cast<std::size_t>(k.size);
    FeatureMap out;
    out.width = (img.width - K) / cfg.stride_x + 1;
    out.height = (img.height - K) / cfg.stride_y + 1;
    out.values.resize(out.width * out.height);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
            int acc = k.bias;
            for (std::size_t r = 0; r < K; ++r)
                for (std::size_t c = 0; c < K; ++c)
                    acc += k.weight(static_cast<int>(r), static_cast<int>(c)) *
                           img.at(x * cfg.stride_x + c, y * cfg.stride_y + r);
            out.values[y * out.width + x] = detail::activate(acc, cfg.activation);
        }
    return out;
}

// Cycle-level simulation of the line-buffer convolution unit for one kernel.
//
// The line buffer is a FIFO over the fed pixel stream, so window register
// (a, b) at cycle t holds stream element t - (K-1-a)*W - (K-1-b). Each
// cycle the power is the weighted Hamming distance between consecutive
// states of the window registers (16 bit, pixels possibly masked), partial
// products and accumulator (16-bit two's complement), plus static power.
inline SimulationRun simulate_cycles(const Image &img, const Kernel &k, const AccelConfig &cfg,
                                     std::size_t kernel_id = 0) {
    detail::check_geometry(img, k, cfg);
    const auto K = static_cast<std::size_t>(k.size);
    const std::size_t W = img.width;
    const std::size_t taps = K * K;

    const auto feed = detail::build_feed(
        img.width, img.height, cfg, detail::mix_seed(cfg.schedule_seed, kernel_id));
    std::mt19937_64 mask_rng(detail::mix_seed(cfg.mask_seed, 0x6d61736bULL + kernel_id));
    std::uniform_int_distribution<int> mask_dist(0, 255);

    SimulationRun run;
    CycleSchedule &sched = run.schedule;
    sched.width = img.width;
    sched.height = img.height;
    sched.kernel_size = k.size;
    sched.total_cycles = feed.size();
    run.powers.kernel_id = kernel_id;
    run.powers.values.resize(feed.size());
    run.outputs.width = (img.width - K) / cfg.stride_x + 1;
    run.outputs.height = (img.height - K) / cfg.stride_y + 1;
    run.outputs.values.assign(run.outputs.width * run.outputs.height, 0);

    std::vector<std::uint16_t> window(taps, 0), window_prev(taps, 0);
    std::vector<std::uint16_t> product(taps, 0), product_prev(taps, 0);
    std::uint16_t acc_prev = 0;
    std::vector<int> mask(taps, 0);

    auto stream_pixel = [&](std::ptrdiff_t pos) -> std::int32_t {
        return pos < 0 ? -1 : feed[static_cast<std::size_t>(pos)].pixel;
    };

    for (std::size_t t = 0; t < feed.size(); ++t) {
        int acc = k.bias;
        int mask_correction = 0;
        for (std::size_t a = 0; a < K; ++a)
            for (std::size_t b = 0; b < K; ++b) {
                const std::size_t i = a * K + b;
                const auto pos = static_cast<std::ptrdiff_t>(t) -
                                 static_cast<std::ptrdiff_t>((K - 1 - a) * W + (K - 1 - b));
                const std::int32_t px = stream_pixel(pos);
                int value = px < 0 ? 0 : img.pixels[static_cast<std::size_t>(px)];
                if (cfg.masking) {
                    mask[i] = mask_dist(mask_rng);
                    value += mask[i];
                    mask_correction += k.weights[i] * mask[i];
                }
                window[i] = static_cast<std::uint16_t>(value);
                const int p = k.weights[i] * value;
                product[i] = static_cast<std::uint16_t>(static_cast<std::int16_t>(p));
                acc += p;
            }
        const auto acc_bits = static_cast<std::uint16_t>(static_cast<std::int16_t>(acc));

        int hd_window = 0, hd_product = 0;
        for (std::size_t i = 0; i < taps; ++i) {
            hd_window += std::popcount(static_cast<std::uint16_t>(window[i] ^ window_prev[i]));
            hd_product += std::popcount(static_cast<std::uint16_t>(product[i] ^ product_prev[i]));
        }
        const int hd_acc = std::popcount(static_cast<std::uint16_t>(acc_bits ^ acc_prev));
        const double dynamic =
            cfg.c_window * hd_window + cfg.c_product * hd_product + cfg.c_accumulator * hd_acc;
        run.powers.values[t] = dynamic + cfg.static_power;
        run.datapath_energy += dynamic;
        run.static_energy += cfg.static_power;

        if (feed[t].window_valid) {
            const detail::FeedStep &s = feed[t];
            sched.cycles.push_back(t);
            sched.origin_x.push_back(s.ox);
            sched.origin_y.push_back(s.oy);
            for (std::size_t a = 0; a < K; ++a)
                for (std::size_t b = 0; b <= K; ++b) {
                    // b == 0 is the column that just left the window.
                    const auto pos = static_cast<std::ptrdiff_t>(t) -
                                     static_cast<std::ptrdiff_t>((K - 1 - a) * W + (K - b));
                    sched.related.push_back(stream_pixel(pos));
                }
            const std::size_t ox = s.ox / cfg.stride_x, oy = s.oy / cfg.stride_y;
            run.outputs.values[oy * run.outputs.width + ox] =
                detail::activate(acc - mask_correction, cfg.activation);
        }

        std::swap(window, window_prev);
        std::swap(product, product_prev);
        acc_prev = acc_bits;
    }
    return run;
}

struct MultiKernelRun {
    std::vector<CyclePowers> powers;
    // One schedule when every kernel shares it (sequential scheduling),
    // otherwise one per kernel.
    std::vector<CycleSchedule> schedules;
    std::vector<FeatureMap> outputs;

    const CycleSchedule &schedule() const { return schedules.front(); }
    const CycleSchedule &schedule_for(std::size_t kernel) const {
        return schedules.size() == 1 ? schedules.front() : schedules.at(kernel);
    }
};

inline MultiKernelRun run_all_kernels(const Image &img, const std::vector<Kernel> &kernels,
                                      const AccelConfig &cfg) {
    if (kernels.empty())
        throw ConfigError("run_all_kernels: no kernels");
    for (const Kernel &k : kernels)
        if (k.size != kernels.front().size)
            throw ConfigError("run_all_kernels: kernels have mixed sizes");

    MultiKernelRun out;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        SimulationRun run = simulate_cycles(img, kernels[i], cfg, i);
        out.powers.push_back(std::move(run.powers));
        out.outputs.push_back(std::move(run.outputs));
        if (out.schedules.empty() || cfg.scheduling == Scheduling::random)
            out.schedules.push_back(std::move(run.schedule));
    }
    return out;
}

} // namespace convleak
