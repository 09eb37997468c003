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

#include "convleak/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

using namespace convleak;

namespace {

Image random_image(std::mt19937 &rng, std::size_t w = 28, std::size_t h = 28) {
    Image img(w, h);
    for (auto &p : img.pixels)
        p = static_cast<std::uint8_t>(rng() % 3 == 0 ? 0 : rng());
    return img;
}

} // namespace

TEST(MarkerAccuracy, PerfectAndWorst) {
    std::mt19937 rng(1);
    const Image img = random_image(rng);
    EXPECT_DOUBLE_EQ(pixel_marker_accuracy(golden_markers(img), img), 1.0);
    EXPECT_DOUBLE_EQ(pixel_marker_accuracy(SilhouetteImage(28, 28, Marker::foreground), Image(28, 28, 0)), 0.0);
}

TEST(MarkerAccuracy, MatchesCountOracle) {
    std::mt19937 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Image golden = random_image(rng);
        SilhouetteImage s(28, 28, Marker::background);
        for (auto &m : s.markers)
            m = rng() % 2 ? Marker::foreground : Marker::background;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < 784; ++i)
            hits += (golden.pixels[i] == 0) == (s.markers[i] == Marker::background);
        EXPECT_DOUBLE_EQ(pixel_marker_accuracy(s, golden), static_cast<double>(hits) / 784.0);
    }
}

TEST(MarkerAccuracy, DimensionMismatch) {
    EXPECT_THROW(pixel_marker_accuracy(SilhouetteImage(28, 28, Marker::background), Image(27, 28)),
                 DimensionError);
}

TEST(BalancedAccuracy, AveragesClassRecalls) {
    Image golden(4, 1, 0);
    golden.pixels = {0, 0, 0, 9};
    // Everything background: background recall 1, foreground recall 0.
    EXPECT_DOUBLE_EQ(balanced_marker_accuracy(SilhouetteImage(4, 1, Marker::background), golden), 0.5);
    EXPECT_DOUBLE_EQ(pixel_marker_accuracy(SilhouetteImage(4, 1, Marker::background), golden), 0.75);
    EXPECT_DOUBLE_EQ(balanced_marker_accuracy(golden_markers(golden), golden), 1.0);
    EXPECT_DOUBLE_EQ(balanced_marker_accuracy(SilhouetteImage(4, 1, Marker::background), Image(4, 1, 0)), 1.0);
}

TEST(PixelDistance, SimpleCases) {
    std::mt19937 rng(3);
    Image a = random_image(rng);
    for (auto &p : a.pixels)
        p = static_cast<std::uint8_t>(std::min<int>(p, 254));
    Image b = a;
    EXPECT_DOUBLE_EQ(pixel_value_distance(a, b), 0.0);
    for (auto &p : b.pixels)
        ++p;
    EXPECT_DOUBLE_EQ(pixel_value_distance(a, b), 1.0);
    EXPECT_THROW(pixel_value_distance(a, Image(3, 3)), DimensionError);
}

TEST(PixelDistance, IsAMetric) {
    std::mt19937 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const Image a = random_image(rng, 8, 8), b = random_image(rng, 8, 8), c = random_image(rng, 8, 8);
        const double ab = pixel_value_distance(a, b), ba = pixel_value_distance(b, a);
        EXPECT_GE(ab, 0.0);
        EXPECT_DOUBLE_EQ(ab, ba);
        EXPECT_EQ(pixel_value_distance(a, a), 0.0);
        if (!(a == b)) {
            EXPECT_GT(ab, 0.0);
        }
        EXPECT_LE(pixel_value_distance(a, c), ab + pixel_value_distance(b, c) + 1e-12);
    }
}

TEST(Knn, QueryInReferenceSet) {
    std::mt19937 rng(5);
    std::vector<Image> refs;
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 30; ++i) {
        refs.push_back(random_image(rng));
        labels.push_back(static_cast<std::uint8_t>(i % 10));
    }
    const KnnClassifier knn(refs, labels, 1);
    for (std::size_t i = 0; i < refs.size(); ++i)
        EXPECT_EQ(knn.predict(refs[i]), labels[i]);
}

TEST(Knn, NearBlackQuery) {
    const KnnClassifier knn({Image(4, 4, 0), Image(4, 4, 255)}, {0, 1}, 1);
    Image q(4, 4, 10);
    EXPECT_EQ(knn.predict(q), 0);
}

TEST(Knn, VoteTieGoesToSmallestLabel) {
    // Three equidistant references with distinct labels.
    const KnnClassifier knn({Image(1, 1, 10), Image(1, 1, 30), Image(1, 1, 30)}, {7, 3, 5}, 3);
    EXPECT_EQ(knn.predict(Image(1, 1, 20)), 3);
}

TEST(Knn, MajorityWins) {
    const KnnClassifier knn({Image(1, 1, 0), Image(1, 1, 1), Image(1, 1, 2), Image(1, 1, 200)},
                            {4, 9, 9, 4}, 3);
    EXPECT_EQ(knn.predict(Image(1, 1, 0)), 9);
}

TEST(Knn, ConfigErrors) {
    EXPECT_THROW(KnnClassifier({}, {}, 3), ConfigError);
    EXPECT_THROW(KnnClassifier({Image(1, 1)}, {1, 2}, 1), ConfigError);
    EXPECT_THROW(KnnClassifier({Image(1, 1)}, {1}, 2), ConfigError);
}

TEST(Knn, BundledReferencesRecognizeCleanDigits) {
    const std::filesystem::path dir(CONVLEAK_DATA_DIR);
    auto refs = load_idx(dir / "mnist-ref-images-idx3-ubyte");
    auto ref_labels = load_idx_labels(dir / "mnist-ref-labels-idx1-ubyte");
    const auto eval = load_idx(dir / "mnist-eval-images-idx3-ubyte");
    const auto labels = load_idx_labels(dir / "mnist-eval-labels-idx1-ubyte");
    const KnnClassifier knn(refs, ref_labels, 3);
    const std::vector<Image> subset(eval.begin(), eval.begin() + 100);
    const auto predicted = knn.predict_all(subset);
    EXPECT_GE(recognition_accuracy(predicted, std::span(labels).first(100)), 0.85);
    EXPECT_EQ(knn.predict_all(subset), predicted);
}

TEST(Map, PerfectClassifierIsIdentity) {
    std::vector<std::uint8_t> g;
    for (int i = 0; i < 50; ++i)
        g.push_back(static_cast<std::uint8_t>(i % 10));
    const ClassificationMap m = classification_map(g, g);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j)
            EXPECT_DOUBLE_EQ(m.fraction(i, j), i == j ? 1.0 : 0.0);
    EXPECT_DOUBLE_EQ(m.diagonal_mean(), 1.0);
    EXPECT_EQ(m.diagonal_dominant(), 10u);
}

TEST(Map, AllEightsFillRowEight) {
    std::vector<std::uint8_t> g, p;
    for (int i = 0; i < 40; ++i) {
        g.push_back(static_cast<std::uint8_t>(i % 10));
        p.push_back(8);
    }
    const ClassificationMap m = classification_map(p, g);
    for (std::size_t j = 0; j < 10; ++j)
        EXPECT_DOUBLE_EQ(m.fraction(8, j), 1.0);
}

TEST(Map, ColumnsSumToOne) {
    std::mt19937 rng(6);
    std::vector<std::uint8_t> g, p;
    for (int i = 0; i < 1000; ++i) {
        g.push_back(static_cast<std::uint8_t>(rng() % 10));
        p.push_back(static_cast<std::uint8_t>(rng() % 10));
    }
    const ClassificationMap m = classification_map(p, g);
    for (std::size_t j = 0; j < 10; ++j) {
        ASSERT_FALSE(m.missing(j));
        std::size_t n = 0;
        for (std::size_t i = 0; i < 10; ++i)
            n += m.counts[i][j];
        EXPECT_EQ(n, m.column_totals[j]);
        double s = 0.0;
        for (std::size_t i = 0; i < 10; ++i)
            s += m.fraction(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Map, MissingClassFlagged) {
    const std::vector<std::uint8_t> g{1, 2, 2}, p{1, 2, 3};
    const ClassificationMap m = classification_map(p, g);
    EXPECT_EQ(m.missing_classes(), (std::vector<std::size_t>{0, 3, 4, 5, 6, 7, 8, 9}));
    std::ostringstream csv;
    write_map_csv(csv, m);
    EXPECT_NE(csv.str().find("missing"), std::string::npos);
    EXPECT_THROW(classification_map(std::vector<std::uint8_t>{12}, std::vector<std::uint8_t>{1}), DataError);
}

TEST(Report, CsvAndAggregates) {
    EvalReport rep;
    rep.metric_name = "pixel_distance";
    rep.rows.push_back({"i0", 3, 3, 2.0});
    rep.rows.push_back({"i1", 5, 6, 4.0});
    EXPECT_DOUBLE_EQ(rep.mean_metric(), 3.0);
    EXPECT_TRUE(rep.has_labels());
    EXPECT_DOUBLE_EQ(rep.recognition(), 0.5);
    std::ostringstream out;
    write_report_csv(out, rep);
    EXPECT_EQ(out.str(), "id,golden,predicted,correct,pixel_distance\n"
                         "i0,3,3,1,2\n"
                         "i1,5,6,0,4\n"
                         "mean,,,0.5,3\n");

    rep.rows.push_back({"i2", std::nullopt, std::nullopt, 0.0});
    EXPECT_FALSE(rep.has_labels());
    std::ostringstream per;
    write_per_class_csv(per, rep);
    EXPECT_NE(per.str().find("3,1,1,2\n"), std::string::npos);
}
