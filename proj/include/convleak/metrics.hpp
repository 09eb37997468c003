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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace convleak {

namespace detail {

inline void check_same_dims(std::size_t w1, std::size_t h1, std::size_t w2, std::size_t h2) {
    if (w1 != w2 || h1 != h2)
        throw DimensionError("image size mismatch: " + std::to_string(w1) + "x" +
                             std::to_string(h1) + " vs " + std::to_string(w2) + "x" +
                             std::to_string(h2));
}

} // namespace detail

// Pure black pixels are background, everything else foreground.
inline SilhouetteImage golden_markers(const Image &golden) {
    SilhouetteImage s(golden.width, golden.height, Marker::foreground);
    for (std::size_t y = 0; y < golden.height; ++y)
        for (std::size_t x = 0; x < golden.width; ++x)
            if (golden.at(x, y) == 0)
                s.at(x, y) = Marker::background;
    return s;
}

// Fraction of pixels whose recovered marker matches the golden marker.
inline double pixel_marker_accuracy(const SilhouetteImage &recovered, const Image &golden) {
    detail::check_same_dims(recovered.width, recovered.height, golden.width, golden.height);
    if (recovered.markers.empty())
        return 1.0;
    const SilhouetteImage truth = golden_markers(golden);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.markers.size(); ++i)
        hits += recovered.markers[i] == truth.markers[i];
    return static_cast<double>(hits) / static_cast<double>(truth.markers.size());
}

// Mean of background recall and foreground recall. A class absent from
// the golden image is left out of the mean.
inline double balanced_marker_accuracy(const SilhouetteImage &recovered, const Image &golden) {
    detail::check_same_dims(recovered.width, recovered.height, golden.width, golden.height);
    const SilhouetteImage truth = golden_markers(golden);
    std::array<std::size_t, 2> total{}, hits{};
    for (std::size_t i = 0; i < truth.markers.size(); ++i) {
        const auto c = static_cast<std::size_t>(truth.markers[i]);
        ++total[c];
        hits[c] += recovered.markers[i] == truth.markers[i];
    }
    double sum = 0.0;
    int classes = 0;
    for (std::size_t c = 0; c < 2; ++c)
        if (total[c] > 0) {
            sum += static_cast<double>(hits[c]) / static_cast<double>(total[c]);
            ++classes;
        }
    return classes ? sum / classes : 1.0;
}

// Mean absolute pixel difference.
inline double pixel_value_distance(const Image &recovered, const Image &golden) {
    detail::check_same_dims(recovered.width, recovered.height, golden.width, golden.height);
    if (recovered.channels != golden.channels)
        throw DimensionError("channel count mismatch");
    if (golden.pixels.empty())
        return 0.0;
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < golden.pixels.size(); ++i)
        sum += static_cast<std::uint64_t>(
            std::abs(int{recovered.pixels[i]} - int{golden.pixels[i]}));
    return static_cast<double>(sum) / static_cast<double>(golden.pixels.size());
}

// Foreground pixels set to 255.
inline Image binarize_image(const Image &img) {
    Image out = img;
    for (std::uint8_t &v : out.pixels)
        v = v ? 255 : 0;
    return out;
}

// k-nearest-neighbour digit recognizer under the mean absolute pixel
// distance. Neighbours at equal distance are ranked by reference index;
// vote ties go to the smallest label.
class KnnClassifier {
public:
    KnnClassifier(std::vector<Image> references, std::vector<std::uint8_t> labels, std::size_t k = 3)
        : refs_(std::move(references)), labels_(std::move(labels)), k_(k) {
        if (refs_.empty())
            throw ConfigError("k-NN reference set is empty");
        if (refs_.size() != labels_.size())
            throw ConfigError("k-NN reference set has " + std::to_string(refs_.size()) +
                              " images but " + std::to_string(labels_.size()) + " labels");
        if (k_ == 0 || k_ % 2 == 0)
            throw ConfigError("k-NN needs an odd k");
        for (const Image &r : refs_)
            detail::check_same_dims(r.width, r.height, refs_.front().width, refs_.front().height);
    }

    std::size_t size() const { return refs_.size(); }
    std::size_t k() const { return k_; }

    std::uint8_t predict(const Image &img) const {
        detail::check_same_dims(img.width, img.height, refs_.front().width, refs_.front().height);
        const std::size_t kk = std::min(k_, refs_.size());
        // (distance, index) of the best kk so far, sorted.
        std::vector<std::pair<std::uint32_t, std::size_t>> best;
        best.reserve(kk + 1);
        const std::size_t n = img.pixels.size();
        const std::uint8_t *q = img.pixels.data();
        for (std::size_t r = 0; r < refs_.size(); ++r) {
            const std::uint8_t *p = refs_[r].pixels.data();
            std::uint32_t d = 0;
            for (std::size_t i = 0; i < n; ++i)
                d += static_cast<std::uint32_t>(std::abs(int{q[i]} - int{p[i]}));
            if (best.size() == kk && d >= best.back().first)
                continue;
            auto pos = std::upper_bound(best.begin(), best.end(), std::pair{d, r});
            best.insert(pos, {d, r});
            if (best.size() > kk)
                best.pop_back();
        }
        std::array<std::size_t, 256> votes{};
        for (const auto &[d, r] : best)
            ++votes[labels_[r]];
        std::size_t label = 0;
        for (std::size_t l = 1; l < votes.size(); ++l)
            if (votes[l] > votes[label])
                label = l;
        return static_cast<std::uint8_t>(label);
    }

    std::vector<std::uint8_t> predict_all(std::span<const Image> images) const {
        std::vector<std::uint8_t> out;
        out.reserve(images.size());
        for (const Image &img : images)
            out.push_back(predict(img));
        return out;
    }

private:
    std::vector<Image> refs_;
    std::vector<std::uint8_t> labels_;
    std::size_t k_;
};

inline double recognition_accuracy(std::span<const std::uint8_t> predicted,
                                   std::span<const std::uint8_t> golden) {
    if (predicted.size() != golden.size())
        throw DimensionError("prediction and label counts differ");
    if (golden.empty())
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < golden.size(); ++i)
        hits += predicted[i] == golden[i];
    return static_cast<double>(hits) / static_cast<double>(golden.size());
}

// Cell (i, j): fraction of images of golden class j predicted as class i.
// Columns without any image are flagged as missing and left at zero.
struct ClassificationMap {
    static constexpr std::size_t classes = 10;
    std::array<std::array<std::size_t, classes>, classes> counts{};
    std::array<std::size_t, classes> column_totals{};

    double fraction(std::size_t predicted, std::size_t golden) const {
        const std::size_t total = column_totals[golden];
        return total ? static_cast<double>(counts[predicted][golden]) / static_cast<double>(total)
                     : 0.0;
    }
    bool missing(std::size_t golden) const { return column_totals[golden] == 0; }

    std::vector<std::size_t> missing_classes() const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < classes; ++j)
            if (missing(j))
                out.push_back(j);
        return out;
    }

    // Mean diagonal fraction over the present classes.
    double diagonal_mean() const {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t j = 0; j < classes; ++j)
            if (!missing(j)) {
                sum += fraction(j, j);
                ++n;
            }
        return n ? sum / static_cast<double>(n) : 0.0;
    }

    // Number of present classes whose diagonal cell is the column maximum.
    std::size_t diagonal_dominant() const {
        std::size_t n = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (missing(j))
                continue;
            bool dominant = true;
            for (std::size_t i = 0; i < classes; ++i)
                if (i != j && counts[i][j] > counts[j][j])
                    dominant = false;
            n += dominant;
        }
        return n;
    }
};

inline ClassificationMap classification_map(std::span<const std::uint8_t> predicted,
                                            std::span<const std::uint8_t> golden) {
    if (predicted.size() != golden.size())
        throw DimensionError("prediction and label counts differ");
    ClassificationMap m;
    for (std::size_t i = 0; i < golden.size(); ++i) {
        if (golden[i] >= ClassificationMap::classes || predicted[i] >= ClassificationMap::classes)
            throw DataError("label out of range 0..9");
        ++m.counts[predicted[i]][golden[i]];
        ++m.column_totals[golden[i]];
    }
    return m;
}

inline void write_map_csv(std::ostream &out, const ClassificationMap &m) {
    out << "predicted";
    for (std::size_t j = 0; j < ClassificationMap::classes; ++j)
        out << ",golden_" << j;
    out << '\n';
    for (std::size_t i = 0; i < ClassificationMap::classes; ++i) {
        out << i;
        for (std::size_t j = 0; j < ClassificationMap::classes; ++j) {
            out << ',';
            if (m.missing(j))
                out << "missing";
            else
                out << m.fraction(i, j);
        }
        out << '\n';
    }
}

// One scored image. metric is a marker accuracy or a pixel distance,
// depending on the attack being evaluated.
struct EvalRow {
    std::string id;
    std::optional<std::uint8_t> golden_label;
    std::optional<std::uint8_t> predicted;
    double metric = 0.0;
};

struct EvalReport {
    std::string metric_name;
    std::vector<EvalRow> rows;

    double mean_metric() const {
        if (rows.empty())
            return 0.0;
        double s = 0.0;
        for (const EvalRow &r : rows)
            s += r.metric;
        return s / static_cast<double>(rows.size());
    }

    bool has_labels() const {
        return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const EvalRow &r) {
            return r.golden_label && r.predicted;
        });
    }

    double recognition() const {
        std::size_t hits = 0, n = 0;
        for (const EvalRow &r : rows)
            if (r.golden_label && r.predicted) {
                ++n;
                hits += *r.golden_label == *r.predicted;
            }
        return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
    }

    ClassificationMap map() const {
        std::vector<std::uint8_t> p, g;
        for (const EvalRow &r : rows)
            if (r.golden_label && r.predicted) {
                p.push_back(*r.predicted);
                g.push_back(*r.golden_label);
            }
        return classification_map(p, g);
    }
};

inline void write_report_csv(std::ostream &out, const EvalReport &rep) {
    out << "id,golden,predicted,correct," << rep.metric_name << '\n';
    for (const EvalRow &r : rep.rows) {
        out << r.id << ',';
        if (r.golden_label)
            out << int{*r.golden_label};
        out << ',';
        if (r.predicted)
            out << int{*r.predicted};
        out << ',';
        if (r.golden_label && r.predicted)
            out << (*r.golden_label == *r.predicted ? 1 : 0);
        out << ',' << r.metric << '\n';
    }
    out << "mean,,,";
    if (rep.has_labels())
        out << rep.recognition();
    out << ',' << rep.mean_metric() << '\n';
}

// Per-digit mean metric and recognition rate.
inline void write_per_class_csv(std::ostream &out, const EvalReport &rep) {
    std::array<double, 10> metric{};
    std::array<std::size_t, 10> count{}, hits{};
    for (const EvalRow &r : rep.rows)
        if (r.golden_label && *r.golden_label < 10) {
            metric[*r.golden_label] += r.metric;
            ++count[*r.golden_label];
            hits[*r.golden_label] += r.predicted && *r.predicted == *r.golden_label;
        }
    out << "digit,images,recognition," << rep.metric_name << '\n';
    for (std::size_t d = 0; d < 10; ++d) {
        out << d << ',' << count[d] << ',';
        if (count[d])
            out << static_cast<double>(hits[d]) / static_cast<double>(count[d]) << ','
                << metric[d] / static_cast<double>(count[d]);
        else
            out << ',';
        out << '\n';
    }
}

} // namespace convleak
