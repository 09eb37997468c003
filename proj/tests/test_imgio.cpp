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

#include "convleak/binary_io.hpp"
#include "convleak/image.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace convleak;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> idx_header(std::uint32_t magic, std::uint32_t n, std::uint32_t rows,
                                     std::uint32_t cols) {
    io::Writer w;
    w.put_be32(magic);
    w.put_be32(n);
    w.put_be32(rows);
    w.put_be32(cols);
    return w.take();
}

fs::path temp_path(const std::string &name) {
    return fs::temp_directory_path() / ("convleak_imgio_" + name);
}

} // namespace

TEST(Idx, TwoThreeByThreeImagesFromRawBytes) {
    auto bytes = idx_header(0x00000803, 2, 3, 3);
    for (std::uint8_t b = 0; b < 18; ++b)
        bytes.push_back(b);
    const auto images = parse_idx_images(bytes, "hand");
    ASSERT_EQ(images.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(images[i].width, 3u);
        EXPECT_EQ(images[i].height, 3u);
        EXPECT_EQ(images[i].channels, 1u);
        for (std::size_t p = 0; p < 9; ++p)
            EXPECT_EQ(images[i].pixels[p], i * 9 + p);
    }
}

TEST(Idx, ZeroImagesIsEmpty) {
    EXPECT_TRUE(parse_idx_images(idx_header(0x00000803, 0, 28, 28), "empty").empty());
}

TEST(Idx, BadMagicIsFormatError) {
    auto bytes = idx_header(0x00000801, 1, 2, 2);
    bytes.resize(bytes.size() + 4);
    EXPECT_THROW(parse_idx_images(bytes, "labels"), FormatError);
}

TEST(Idx, ShortHeaderIsFormatError) {
    auto bytes = idx_header(0x00000803, 1, 2, 2);
    bytes.resize(10);
    EXPECT_THROW(parse_idx_images(bytes, "short"), FormatError);
}

TEST(Idx, TruncatedPayloadIsLengthError) {
    auto bytes = idx_header(0x00000803, 2, 2, 2);
    bytes.resize(bytes.size() + 7);
    EXPECT_THROW(parse_idx_images(bytes, "cut"), LengthError);
}

TEST(Idx, RoundTripThroughFile) {
    std::mt19937 rng(3);
    std::vector<Image> images;
    for (int i = 0; i < 5; ++i) {
        Image img(7, 4);
        for (auto &p : img.pixels)
            p = static_cast<std::uint8_t>(rng());
        images.push_back(img);
    }
    const fs::path p = temp_path("roundtrip.idx");
    write_idx(images, p);
    EXPECT_EQ(load_idx(p), images);
    fs::remove(p);
}

TEST(Idx, BundledDatasetShape) {
    const auto images = load_idx(fs::path(CONVLEAK_DATA_DIR) / "mnist-eval-images-idx3-ubyte");
    const auto labels = load_idx_labels(fs::path(CONVLEAK_DATA_DIR) / "mnist-eval-labels-idx1-ubyte");
    ASSERT_EQ(images.size(), 1000u);
    ASSERT_EQ(labels.size(), 1000u);
    for (const Image &img : images) {
        EXPECT_EQ(img.width, 28u);
        EXPECT_EQ(img.height, 28u);
    }
    for (std::uint8_t l : labels)
        EXPECT_LT(l, 10);
}

TEST(Pgm, MinimalImageBytes) {
    const auto bytes = encode_pgm(Image(1, 1, 0));
    const std::string expect = std::string("P5\n1 1\n255\n") + '\0';
    ASSERT_EQ(bytes.size(), 12u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.end()), expect);
}

TEST(Pgm, AllWhiteMnistSizedImage) {
    const auto bytes = encode_pgm(Image(28, 28, 255));
    const std::string header = "P5\n28 28\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 784);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i)
        EXPECT_EQ(bytes[i], 0xFF);
}

TEST(Pgm, RoundTripIsIdentity) {
    std::mt19937 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Image img(1 + rng() % 40, 1 + rng() % 40);
        for (auto &p : img.pixels)
            p = static_cast<std::uint8_t>(rng());
        EXPECT_EQ(parse_pgm(encode_pgm(img), "mem"), img);
    }
    const fs::path p = temp_path("img.pgm");
    Image img(3, 2);
    img.pixels = {0, 10, 20, 30, 40, 255};
    write_pgm(img, p);
    EXPECT_EQ(load_pgm(p), img);
    fs::remove(p);
}

TEST(Pgm, MultiChannelRejected) {
    EXPECT_THROW(encode_pgm(Image(2, 2, 0, 3)), UnsupportedError);
}

TEST(Pgm, HeaderCommentsAndErrors) {
    const std::string text = "P5\n# made by hand\n2 1\n255\n";
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    bytes.push_back(7);
    bytes.push_back(9);
    const Image img = parse_pgm(bytes, "comment");
    EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{7, 9}));

    bytes.pop_back();
    EXPECT_THROW(parse_pgm(bytes, "short"), LengthError);
    const std::string p2 = "P2\n1 1\n255\n0";
    EXPECT_THROW(parse_pgm({p2.begin(), p2.end()}, "ascii"), FormatError);
    const std::string deep = "P5\n1 1\n65535\n00";
    EXPECT_THROW(parse_pgm({deep.begin(), deep.end()}, "deep"), UnsupportedError);
}

TEST(Markers, BinarizeAllBackgroundAndForeground) {
    EXPECT_EQ(binarize_markers(SilhouetteImage(4, 3, Marker::background)), Image(4, 3, 0));
    EXPECT_EQ(binarize_markers(SilhouetteImage(4, 3, Marker::foreground)), Image(4, 3, 255));
}

TEST(Markers, CheckerboardMapsDirectly) {
    SilhouetteImage s(5, 4, Marker::background);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            s.at(x, y) = (x + y) % 2 ? Marker::foreground : Marker::background;
    const Image img = binarize_markers(s);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            EXPECT_EQ(img.at(x, y), (x + y) % 2 ? 255 : 0);
}

TEST(Tile, GridGeometry) {
    std::vector<Image> images{Image(2, 2, 1), Image(2, 2, 2), Image(2, 2, 3)};
    const Image grid = tile_images(images, 2, 128);
    EXPECT_EQ(grid.width, 5u);
    EXPECT_EQ(grid.height, 5u);
    EXPECT_EQ(grid.at(0, 0), 1);
    EXPECT_EQ(grid.at(2, 0), 128);
    EXPECT_EQ(grid.at(3, 1), 2);
    EXPECT_EQ(grid.at(1, 4), 3);
    EXPECT_EQ(grid.at(4, 4), 128);
}
