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
#include "convleak/error.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace convleak {

// JSON-lines schedule sidecar: a header object, then one object per valid
// cycle with its clock index, window origin and related pixel indices.
inline void write_schedule_jsonl(std::ostream &out, const CycleSchedule &s) {
    nlohmann::json header = {{"width", s.width},
                             {"height", s.height},
                             {"kernel_size", s.kernel_size},
                             {"total_cycles", s.total_cycles},
                             {"valid_cycles", s.valid_count()}};
    out << header.dump() << '\n';
    for (std::size_t v = 0; v < s.valid_count(); ++v) {
        const auto rel = s.related_pixels(v);
        nlohmann::json row = {{"cycle", s.cycles[v]},
                              {"x", s.origin_x[v]},
                              {"y", s.origin_y[v]},
                              {"related", std::vector<std::int32_t>(rel.begin(), rel.end())}};
        out << row.dump() << '\n';
    }
}

inline CycleSchedule read_schedule_jsonl(std::istream &in, const std::string &source) {
    CycleSchedule s;
    std::string line;
    std::size_t number = 0;
    auto fail = [&](const std::string &what) {
        return FormatError(source + ":" + std::to_string(number) + ": " + what);
    };
    try {
        if (!std::getline(in, line))
            throw FormatError(source + ": empty schedule file");
        ++number;
        const auto header = nlohmann::json::parse(line);
        s.width = header.at("width").get<std::size_t>();
        s.height = header.at("height").get<std::size_t>();
        s.kernel_size = header.at("kernel_size").get<int>();
        s.total_cycles = header.at("total_cycles").get<std::size_t>();
        const auto valid = header.at("valid_cycles").get<std::size_t>();
        if (s.kernel_size != 3 && s.kernel_size != 5)
            throw fail("unsupported kernel size");
        while (std::getline(in, line)) {
            ++number;
            if (line.empty())
                continue;
            const auto row = nlohmann::json::parse(line);
            const auto rel = row.at("related").get<std::vector<std::int32_t>>();
            if (rel.size() != s.slots())
                throw fail("expected " + std::to_string(s.slots()) + " related pixels");
            for (std::int32_t px : rel)
                if (px < -1 || px >= static_cast<std::int64_t>(s.width * s.height))
                    throw fail("related pixel index out of range");
            const auto cycle = row.at("cycle").get<std::size_t>();
            if (cycle >= s.total_cycles || (!s.cycles.empty() && cycle <= s.cycles.back()))
                throw fail("cycle indices must increase and stay below total_cycles");
            s.cycles.push_back(cycle);
            s.origin_x.push_back(row.at("x").get<std::uint16_t>());
            s.origin_y.push_back(row.at("y").get<std::uint16_t>());
            s.related.insert(s.related.end(), rel.begin(), rel.end());
        }
        if (s.valid_count() != valid)
            throw FormatError(source + ": header announces " + std::to_string(valid) +
                              " valid cycles, file has " + std::to_string(s.valid_count()));
    } catch (const nlohmann::json::exception &e) {
        throw fail(e.what());
    }
    return s;
}

inline void save_schedule(const CycleSchedule &s, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    write_schedule_jsonl(out, s);
}

inline CycleSchedule load_schedule(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    return read_schedule_jsonl(in, path.string());
}

} // namespace convleak
