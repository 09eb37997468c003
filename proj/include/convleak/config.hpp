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
#include "convleak/pipeline.hpp"
#include "convleak/template_attack.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace convleak {

// Everything a run needs. Every field has a default.
struct RunConfig {
    std::uint64_t seed = 20180301;

    std::filesystem::path images = "data/mnist-eval-images-idx3-ubyte";
    std::filesystem::path labels = "data/mnist-eval-labels-idx1-ubyte";
    std::filesystem::path ref_images = "data/mnist-ref-images-idx3-ubyte";
    std::filesystem::path ref_labels = "data/mnist-ref-labels-idx1-ubyte";
    std::size_t first = 0;
    std::size_t count = 10;

    std::filesystem::path kernel_file; // empty: random binary kernels
    std::size_t kernel_count = 9;
    std::uint64_t kernel_seed = 1;

    std::filesystem::path out = "run";

    PipelineConfig pipeline;

    double bg_bin_size = 0.0; // 0: (max - min) / 100
    Marker bg_border = Marker::background;
    std::size_t bg_kernel = 0;
    double sweep_from = 0.1;
    double sweep_to = 3.0;
    double sweep_step = 0.1;

    std::size_t group_size = 3;
    std::string groups; // "0,1,2;3,4,5"; empty: contiguous blocks of group_size
    double delta = 1.0;
    bool normalize = true;
    bool merge_near_duplicates = false;
    std::size_t max_restarts = 64;
    std::size_t profile_first = 0;
    std::size_t profile_count = 300;
    std::size_t attack_first = 300;
    std::size_t attack_count = 200;

    std::size_t knn_k = 3;
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string &key, const std::string &text) {
    T value{};
    const char *first = text.data();
    const char *last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
        throw ConfigError("bad value '" + text + "' for " + key);
    return value;
}

inline bool parse_bool(const std::string &key, const std::string &text) {
    if (text == "1" || text == "true" || text == "on" || text == "yes")
        return true;
    if (text == "0" || text == "false" || text == "off" || text == "no")
        return false;
    throw ConfigError("bad boolean '" + text + "' for " + key);
}

} // namespace detail

class ConfigSetter {
public:
    explicit ConfigSetter(RunConfig &cfg) : cfg_(cfg) { install(); }

    void set(const std::string &key, const std::string &raw) {
        const std::string value = detail::trim(raw);
        auto it = setters_.find(key);
        if (it == setters_.end())
            throw ConfigError("unknown config key '" + key + "'");
        it->second(key, value);
    }

    // "key=value"
    void assign(const std::string &line) {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value, got '" + line + "'");
        set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    }

    void load(std::istream &in, const std::string &source) {
        std::string line;
        std::size_t number = 0;
        while (std::getline(in, line)) {
            ++number;
            if (const auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            line = detail::trim(line);
            if (line.empty())
                continue;
            try {
                assign(line);
            } catch (const ConfigError &e) {
                throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
            }
        }
    }

    void load(const std::filesystem::path &path) {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("cannot open config file " + path.string());
        load(in, path.string());
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto &[k, v] : setters_)
            out.push_back(k);
        return out;
    }

private:
    using Setter = std::function<void(const std::string &, const std::string &)>;

    template <class T>
    void number(const std::string &key, T &field) {
        setters_[key] = [&field](const std::string &k, const std::string &v) {
            field = detail::parse_number<T>(k, v);
        };
    }
    void flag(const std::string &key, bool &field) {
        setters_[key] = [&field](const std::string &k, const std::string &v) {
            field = detail::parse_bool(k, v);
        };
    }
    void path(const std::string &key, std::filesystem::path &field) {
        setters_[key] = [&field](const std::string &, const std::string &v) { field = v; };
    }

    void install() {
        RunConfig &c = cfg_;
        AccelConfig &a = c.pipeline.accel;
        ChainConfig &ch = c.pipeline.chain;
        ExtractConfig &ex = c.pipeline.extract;

        number("seed", c.seed);
        path("data.images", c.images);
        path("data.labels", c.labels);
        path("data.ref_images", c.ref_images);
        path("data.ref_labels", c.ref_labels);
        number("data.first", c.first);
        number("data.count", c.count);
        path("kernels.file", c.kernel_file);
        number("kernels.count", c.kernel_count);
        number("kernels.seed", c.kernel_seed);
        path("out", c.out);

        number("accel.line_size", a.line_size);
        number("accel.kernel_size", a.kernel_size);
        number("accel.input_channels", a.input_channels);
        number("accel.stride_x", a.stride_x);
        number("accel.stride_y", a.stride_y);
        number("accel.c_window", a.c_window);
        number("accel.c_product", a.c_product);
        number("accel.c_accumulator", a.c_accumulator);
        number("accel.static_power", a.static_power);
        setters_["accel.activation"] = [&a](const std::string &k, const std::string &v) {
            if (v == "identity")
                a.activation = Activation::identity;
            else if (v == "sign")
                a.activation = Activation::sign;
            else
                throw ConfigError("bad value '" + v + "' for " + k + " (identity|sign)");
        };
        setters_["accel.scheduling"] = [&a](const std::string &k, const std::string &v) {
            if (v == "sequential")
                a.scheduling = Scheduling::sequential;
            else if (v == "random")
                a.scheduling = Scheduling::random;
            else
                throw ConfigError("bad value '" + v + "' for " + k + " (sequential|random)");
        };
        number("accel.schedule_seed", a.schedule_seed);
        flag("accel.masking", a.masking);
        number("accel.mask_seed", a.mask_seed);

        number("chain.samples_per_cycle", ch.samples_per_cycle);
        number("chain.sample_interval", ch.sample_interval);
        number("chain.rise_tau", ch.rise_tau);
        number("chain.decay_tau", ch.decay_tau);
        number("chain.peak_fraction", ch.peak_fraction);
        flag("chain.highpass", ch.highpass);
        number("chain.highpass_tau", ch.highpass_tau);
        number("chain.noise_sigma", ch.noise_sigma);
        number("chain.drain_cycles", ch.drain_cycles);
        setters_["chain.snr_db"] = [&c](const std::string &k, const std::string &v) {
            if (v == "none" || v.empty())
                c.pipeline.snr_db.reset();
            else
                c.pipeline.snr_db = detail::parse_number<double>(k, v);
        };
        setters_["chain.source"] = [&c](const std::string &k, const std::string &v) {
            if (v == "measured")
                c.pipeline.source = PowerSource::measured;
            else if (v == "ground_truth")
                c.pipeline.source = PowerSource::ground_truth;
            else
                throw ConfigError("bad value '" + v + "' for " + k + " (measured|ground_truth)");
        };

        flag("extract.lowpass", ex.lowpass);
        number("extract.lowpass_cutoff", ex.lowpass_cutoff);
        number("extract.lowpass_order", ex.lowpass_order);
        flag("extract.restore_dc", ex.restore_dc);
        number("extract.phase_radius", ex.phase_radius);
        number("extract.min_correlation", ex.align.min_correlation);
        number("extract.template_candidates", ex.align.template_candidates);
        setters_["extract.template_start"] = [&ex](const std::string &k, const std::string &v) {
            if (v == "auto" || v.empty())
                ex.align.template_start.reset();
            else
                ex.align.template_start = detail::parse_number<std::size_t>(k, v);
        };

        number("bg.bin_size", c.bg_bin_size);
        setters_["bg.border"] = [&c](const std::string &k, const std::string &v) {
            if (v == "background")
                c.bg_border = Marker::background;
            else if (v == "foreground")
                c.bg_border = Marker::foreground;
            else
                throw ConfigError("bad value '" + v + "' for " + k + " (background|foreground)");
        };
        number("bg.kernel", c.bg_kernel);
        number("bg.sweep_from", c.sweep_from);
        number("bg.sweep_to", c.sweep_to);
        number("bg.sweep_step", c.sweep_step);

        number("template.group_size", c.group_size);
        setters_["template.groups"] = [&c](const std::string &, const std::string &v) { c.groups = v; };
        number("template.delta", c.delta);
        flag("template.normalize", c.normalize);
        flag("template.merge_near_duplicates", c.merge_near_duplicates);
        number("template.max_restarts", c.max_restarts);
        number("template.profile_first", c.profile_first);
        number("template.profile_count", c.profile_count);
        number("template.attack_first", c.attack_first);
        number("template.attack_count", c.attack_count);

        number("eval.knn_k", c.knn_k);
    }

    RunConfig &cfg_;
    std::map<std::string, Setter> setters_;
};

// Parses "0,1,2;3,4,5".
inline std::vector<std::vector<std::size_t>> parse_groups(const std::string &text) {
    std::vector<std::vector<std::size_t>> out;
    std::stringstream groups(text);
    std::string group;
    while (std::getline(groups, group, ';')) {
        out.emplace_back();
        std::stringstream items(group);
        std::string item;
        while (std::getline(items, item, ','))
            out.back().push_back(detail::parse_number<std::size_t>("template.groups", detail::trim(item)));
    }
    return out;
}

inline GroupingConfig grouping(const RunConfig &c) {
    GroupingConfig g;
    g.groups = c.groups.empty() ? contiguous_groups(c.kernel_count, c.group_size) : parse_groups(c.groups);
    g.delta = c.delta;
    g.normalize = c.normalize;
    g.merge_near_duplicates = c.merge_near_duplicates;
    return g;
}

// Seed precedence: CONVLEAK_SEED, then the config value.
inline void apply_environment(RunConfig &c) {
    if (const char *env = std::getenv("CONVLEAK_SEED"); env && *env)
        c.seed = detail::parse_number<std::uint64_t>("CONVLEAK_SEED", env);
    c.pipeline.seed = c.seed;
}

} // namespace convleak
