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

#include "convleak/binary_io.hpp"
#include "convleak/error.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace convleak {

// Row-major 8-bit image. Pixel (x, y) of channel c lives at
// (y * width + x) * channels + c.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::uint8_t fill = 0,
          std::size_t c = 1)
        : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

    std::size_t size() const { return width * height; }

    std::uint8_t at(std::size_t x, std::size_t y) const {
        return pixels[(y * width + x) * channels];
    }
    std::uint8_t &at(std::size_t x, std::size_t y) {
        return pixels[(y * width + x) * channels];
    }

    bool valid() const { return pixels.size() == width * height * channels; }

    friend bool operator==(const Image &, const Image &) = default;
};

enum class Marker : std::uint8_t { background = 0, foreground = 1 };

struct SilhouetteImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<Marker> markers;

    SilhouetteImage() = default;
    SilhouetteImage(std::size_t w, std::size_t h, Marker fill)
        : width(w), height(h), markers(w * h, fill) {}

    Marker at(std::size_t x, std::size_t y) const {
        return markers[y * width + x];
    }
    Marker &at(std::size_t x, std::size_t y) { return markers[y * width + x]; }

    friend bool operator==(const SilhouetteImage &,
                           const SilhouetteImage &) = default;
};

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

// Parses an IDX3 unsigned-byte image file (big-endian header).
inline std::vector<Image> parse_idx_images(const std::vector<std::uint8_t> &bytes,
                                           const std::string &source) {
    io::Reader in(bytes, source);
    if (in.remaining() < 16)
        throw FormatError(source + ": IDX header too short");
    const std::uint32_t magic = in.get_be32();
    if (magic != idx_images_magic)
        throw FormatError(source + ": IDX magic is not 0x00000803");
    const std::uint32_t count = in.get_be32();
    const std::uint32_t rows = in.get_be32();
    const std::uint32_t cols = in.get_be32();
    if (count > 0 && (rows == 0 || cols == 0))
        throw FormatError(source + ": zero image dimension");

    const std::size_t per_image = std::size_t{rows} * cols;
    if (in.remaining() < per_image * count)
        throw LengthError(source + ": payload holds " +
                          std::to_string(in.remaining()) + " bytes, header needs " +
                          std::to_string(per_image * count));

    std::vector<Image> images;
    images.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint8_t *p = in.take(per_image);
        Image img;
        img.width = cols;
        img.height = rows;
        img.pixels.assign(p, p + per_image);
        images.push_back(std::move(img));
    }
    return images;
}

inline std::vector<Image> load_idx(const std::filesystem::path &path) {
    return parse_idx_images(io::read_file(path), path.string());
}

inline std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path &path) {
    const auto bytes = io::read_file(path);
    io::Reader in(bytes, path.string());
    if (in.remaining() < 8)
        throw FormatError(path.string() + ": IDX header too short");
    if (in.get_be32() != idx_labels_magic)
        throw FormatError(path.string() + ": IDX magic is not 0x00000801");
    const std::uint32_t count = in.get_be32();
    const std::uint8_t *p = in.take(count);
    return {p, p + count};
}

inline std::vector<std::uint8_t> encode_idx_images(std::span<const Image> images) {
    io::Writer out;
    out.put_be32(idx_images_magic);
    out.put_be32(static_cast<std::uint32_t>(images.size()));
    out.put_be32(images.empty() ? 0 : static_cast<std::uint32_t>(images[0].height));
    out.put_be32(images.empty() ? 0 : static_cast<std::uint32_t>(images[0].width));
    for (const Image &img : images) {
        if (img.channels != 1 || img.width != images[0].width ||
            img.height != images[0].height)
            throw UnsupportedError("IDX images must share one single-channel shape");
        out.put_bytes(img.pixels.data(), img.pixels.size());
    }
    return out.take();
}

inline void write_idx(std::span<const Image> images,
                      const std::filesystem::path &path) {
    io::write_file(path, encode_idx_images(images));
}

// Binary PGM (P5, maxval 255).
inline std::vector<std::uint8_t> encode_pgm(const Image &img) {
    if (img.channels != 1)
        throw UnsupportedError("PGM output supports single-channel images only");
    const std::string header = "P5\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
    return bytes;
}

inline void write_pgm(const Image &img, const std::filesystem::path &path) {
    io::write_file(path, encode_pgm(img));
}

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pgm_token(const std::vector<std::uint8_t> &bytes,
                             std::size_t &pos, const std::string &source) {
    auto is_space = [](std::uint8_t c) {
        return c == ' ' || c == '\n' || c == '\r' || c == '\t';
    };
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n')
                ++pos;
        } else if (is_space(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string token;
    while (pos < bytes.size() && !is_space(bytes[pos]))
        token.push_back(static_cast<char>(bytes[pos++]));
    if (token.empty())
        throw FormatError(source + ": truncated PGM header");
    return token;
}

inline std::size_t pgm_number(const std::string &token, const std::string &source) {
    if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos)
        throw FormatError(source + ": bad PGM header field '" + token + "'");
    return std::stoul(token);
}

} // namespace detail

inline Image parse_pgm(const std::vector<std::uint8_t> &bytes,
                       const std::string &source) {
    std::size_t pos = 0;
    if (detail::pgm_token(bytes, pos, source) != "P5")
        throw FormatError(source + ": not a binary PGM (P5)");
    const std::size_t w = detail::pgm_number(detail::pgm_token(bytes, pos, source), source);
    const std::size_t h = detail::pgm_number(detail::pgm_token(bytes, pos, source), source);
    const std::size_t maxval =
        detail::pgm_number(detail::pgm_token(bytes, pos, source), source);
    if (maxval != 255)
        throw UnsupportedError(source + ": only maxval 255 is supported");
    ++pos; // single whitespace byte after maxval
    if (bytes.size() < pos || bytes.size() - pos < w * h)
        throw LengthError(source + ": PGM payload truncated");
    Image img(w, h);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), w * h,
                img.pixels.begin());
    return img;
}

inline Image load_pgm(const std::filesystem::path &path) {
    return parse_pgm(io::read_file(path), path.string());
}

inline Image binarize_markers(const SilhouetteImage &sil) {
    Image img(sil.width, sil.height);
    for (std::size_t i = 0; i < sil.markers.size(); ++i)
        img.pixels[i] = sil.markers[i] == Marker::foreground ? 255 : 0;
    return img;
}

// Tiles equally sized single-channel images into a grid, row by row, with
// a one-pixel gap of the given shade.
inline Image tile_images(std::span<const Image> images, std::size_t columns,
                         std::uint8_t gap_shade = 128) {
    if (images.empty() || columns == 0)
        return {};
    const std::size_t w = images[0].width, h = images[0].height;
    const std::size_t rows = (images.size() + columns - 1) / columns;
    Image grid(columns * (w + 1) - 1, rows * (h + 1) - 1, gap_shade);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].width != w || images[i].height != h)
            throw DimensionError("tile_images: mixed image sizes");
        const std::size_t ox = (i % columns) * (w + 1), oy = (i / columns) * (h + 1);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                grid.at(ox + x, oy + y) = images[i].at(x, y);
    }
    return grid;
}

} // namespace convleak
