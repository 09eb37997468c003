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

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace convleak {

// K x K convolution kernel. weights are row-major: weight(r, c) multiplies
// the pixel r rows below and c columns right of the window origin.
struct Kernel {
    int size = 3;
    std::vector<int> weights;
    int bias = 0;

    int weight(int r, int c) const { return weights[static_cast<std::size_t>(r * size + c)]; }

    friend bool operator==(const Kernel &, const Kernel &) = default;
};

inline void validate(const Kernel &k) {
    if (k.size != 3 && k.size != 5)
        throw ConfigError("kernel size must be 3 or 5, got " + std::to_string(k.size));
    if (k.weights.size() != static_cast<std::size_t>(k.size * k.size))
        throw ConfigError("kernel has " + std::to_string(k.weights.size()) +
                          " weights, expected " + std::to_string(k.size * k.size));
}

// Binarized kernels with weights drawn uniformly from {-1, +1} and zero bias.
inline std::vector<Kernel> random_binary_kernels(std::size_t count, int size,
                                                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<Kernel> kernels(count);
    for (Kernel &k : kernels) {
        k.size = size;
        k.weights.resize(static_cast<std::size_t>(size * size));
        for (int &w : k.weights)
            w = coin(rng) ? 1 : -1;
    }
    return kernels;
}

// Kernel file: blocks of "K=<n>", n rows of n integers, "bias=<int>".
// Blank lines and '#' comments are ignored.
inline std::vector<Kernel> parse_kernels(std::istream &in, const std::string &source) {
    std::vector<Kernel> kernels;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string &msg) {
        throw FormatError(source + ":" + std::to_string(line_no) + ": " + msg);
    };
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            line.erase(0, line.find_first_not_of(" \t\r"));
            line.erase(line.find_last_not_of(" \t\r") + 1);
            if (!line.empty())
                return true;
        }
        return false;
    };
    auto parse_int = [&](const std::string &text) {
        std::size_t used = 0;
        int value = 0;
        try {
            value = std::stoi(text, &used);
        } catch (const std::exception &) {
            fail("expected an integer, got '" + text + "'");
        }
        if (used != text.size())
            fail("trailing characters after integer '" + text + "'");
        return value;
    };

    while (next_line()) {
        if (line.rfind("K=", 0) != 0)
            fail("expected 'K=<size>'");
        Kernel k;
        k.size = parse_int(line.substr(2));
        if (k.size != 3 && k.size != 5)
            fail("kernel size must be 3 or 5");
        for (int r = 0; r < k.size; ++r) {
            if (!next_line())
                fail("unexpected end of file inside kernel");
            std::istringstream row(line);
            std::string tok;
            int count = 0;
            while (row >> tok) {
                k.weights.push_back(parse_int(tok));
                ++count;
            }
            if (count != k.size)
                fail("kernel row has " + std::to_string(count) + " values, expected " +
                     std::to_string(k.size));
        }
        if (!next_line() || line.rfind("bias=", 0) != 0)
            fail("expected 'bias=<int>'");
        k.bias = parse_int(line.substr(5));
        kernels.push_back(std::move(k));
    }
    return kernels;
}

inline std::vector<Kernel> load_kernels(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open kernel file " + path.string());
    return parse_kernels(in, path.string());
}

inline std::string format_kernels(const std::vector<Kernel> &kernels) {
    std::ostringstream out;
    for (const Kernel &k : kernels) {
        out << "K=" << k.size << '\n';
        for (int r = 0; r < k.size; ++r) {
            for (int c = 0; c < k.size; ++c)
                out << (c ? " " : "") << k.weight(r, c);
            out << '\n';
        }
        out << "bias=" << k.bias << "\n\n";
    }
    return out.str();
}

inline void save_kernels(const std::vector<Kernel> &kernels,
                         const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write kernel file " + path.string());
    out << format_kernels(kernels);
}

} // namespace convleak
