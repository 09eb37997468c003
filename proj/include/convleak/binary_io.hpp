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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

namespace convleak::io {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path &path,
                       const std::vector<std::uint8_t> &bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("short write to " + path.string());
}

// Append-only little-endian encoder.
class Writer {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        static_assert(std::endian::native == std::endian::little,
                      "big-endian hosts are not supported");
        const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    void put_be32(std::uint32_t value) {
        for (int shift = 24; shift >= 0; shift -= 8)
            bytes_.push_back(static_cast<std::uint8_t>(value >> shift));
    }

    void put_bytes(const void *data, std::size_t n) {
        const auto *p = static_cast<const std::uint8_t *>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }

    void put_magic(const char (&magic)[5]) { put_bytes(magic, 4); }

    const std::vector<std::uint8_t> &bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian decoder; running off the end raises
// LengthError naming the source.
class Reader {
public:
    Reader(const std::vector<std::uint8_t> &bytes, std::string source)
        : bytes_(bytes), source_(std::move(source)) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T value;
        std::memcpy(&value, take(sizeof(T)), sizeof(T));
        return value;
    }

    std::uint32_t get_be32() {
        const std::uint8_t *p = take(4);
        return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
               (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    }

    const std::uint8_t *take(std::size_t n) {
        if (remaining() < n)
            throw LengthError(source_ + ": truncated (need " +
                              std::to_string(n) + " more bytes, have " +
                              std::to_string(remaining()) + ")");
        const std::uint8_t *p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    void expect_magic(const char (&magic)[5]) {
        if (remaining() < 4 || std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
            throw FormatError(source_ + ": bad magic, expected \"" +
                              std::string(magic) + "\"");
        pos_ += 4;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string &source() const { return source_; }

private:
    const std::vector<std::uint8_t> &bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace convleak::io
