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
#include "convleak/image.hpp"
#include "convleak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace convleak {

// counts[i] holds the cycles with origin + i*B <= P < origin + (i+1)*B.
struct Histogram {
    double origin = 0.0;
    double bin_size = 1.0;
    double min = 0.0;
    double max = 0.0;
    std::vector<std::size_t> counts;

    std::size_t total() const {
        std::size_t n = 0;
        for (std::size_t c : counts)
            n += c;
        return n;
    }
    double edge(std::size_t i) const { return origin + static_cast<double>(i) * bin_size; }
};

struct Threshold {
    double power = 0.0;
    std::size_t bin = 0; // first bin above the threshold
    std::size_t drop = 0;
};

class EmptyInputError : public DataError {
public:
    explicit EmptyInputError(const std::string &what) : DataError(what) {}
};

// Bins are anchored at the smallest observed power. bin_size <= 0 selects
// (max - min) / 100, or 1 when all powers are equal.
inline Histogram build_histogram(std::span<const double> powers, double bin_size = 0.0,
                                 std::optional<double> origin = std::nullopt) {
    if (powers.empty())
        throw EmptyInputError("histogram of an empty cycle set");
    Histogram h;
    const auto [lo, hi] = std::minmax_element(powers.begin(), powers.end());
    h.min = *lo;
    h.max = *hi;
    h.origin = origin.value_or(h.min);
    if (h.origin > h.min)
        throw ConfigError("histogram origin above the smallest power");
    h.bin_size = bin_size > 0.0 ? bin_size : (h.max > h.min ? (h.max - h.min) / 100.0 : 1.0);
    const auto bins = static_cast<std::size_t>(std::floor((h.max - h.origin) / h.bin_size)) + 1;
    h.counts.assign(bins, 0);
    for (double p : powers) {
        auto i = static_cast<std::size_t>(std::floor((p - h.origin) / h.bin_size));
        // Guard against round-off putting a value one bin off.
        while (i > 0 && p < h.edge(i))
            --i;
        while (i + 1 < bins && p >= h.edge(i + 1))
            ++i;
        ++h.counts[std::min(i, bins - 1)];
    }
    return h;
}

inline Histogram build_histogram(const CyclePowers &p, const CycleSchedule &s, double bin_size = 0.0) {
    const std::vector<double> v = p.valid(s);
    return build_histogram(std::span<const double>(v), bin_size);
}

// Threshold at the largest drop C(P - B) - C(P); the first such bin wins.
inline Threshold select_threshold(const Histogram &h) {
    if (h.counts.size() < 2)
        throw NotApplicableError("histogram has a single bin; no threshold to select");
    Threshold t;
    long best = 0;
    for (std::size_t i = 1; i < h.counts.size(); ++i) {
        const long drop = static_cast<long>(h.counts[i - 1]) - static_cast<long>(h.counts[i]);
        if (drop > best) {
            best = drop;
            t.bin = i;
        }
    }
    if (best <= 0)
        throw NotApplicableError("cycle-count histogram never decreases; background detection "
                                 "is not applicable");
    t.drop = static_cast<std::size_t>(best);
    t.power = h.edge(t.bin);
    return t;
}

// Every pixel starts as foreground; each valid cycle at or below the
// threshold paints its related pixels background. Pixels no valid cycle
// relates to get the border marker.
inline SilhouetteImage recover_silhouette(const CyclePowers &p, const CycleSchedule &s,
                                          double threshold,
                                          Marker border = Marker::background) {
    SilhouetteImage sil(s.width, s.height, Marker::foreground);
    std::vector<bool> covered(s.width * s.height, false);
    for (std::size_t v = 0; v < s.valid_count(); ++v) {
        const bool quiet = p.values.at(s.cycles[v]) <= threshold;
        for (std::int32_t px : s.related_pixels(v)) {
            if (px < 0)
                continue;
            covered[static_cast<std::size_t>(px)] = true;
            if (quiet)
                sil.markers[static_cast<std::size_t>(px)] = Marker::background;
        }
    }
    for (std::size_t i = 0; i < covered.size(); ++i)
        if (!covered[i])
            sil.markers[i] = border;
    return sil;
}

struct BackgroundAttack {
    Histogram histogram;
    Threshold threshold;
    SilhouetteImage silhouette;
};

inline BackgroundAttack attack_background(const CyclePowers &p, const CycleSchedule &s,
                                          double bin_size = 0.0,
                                          Marker border = Marker::background) {
    BackgroundAttack a;
    a.histogram = build_histogram(p, s, bin_size);
    a.threshold = select_threshold(a.histogram);
    a.silhouette = recover_silhouette(p, s, a.threshold.power, border);
    return a;
}

// Thresholds expressed relative to the cycle powers of one trace:
// P_T = min + t * (mean - min).
inline double relative_threshold(std::span<const double> powers, double t) {
    if (powers.empty())
        throw EmptyInputError("no cycle powers");
    double lo = powers.front(), sum = 0.0;
    for (double v : powers) {
        lo = std::min(lo, v);
        sum += v;
    }
    const double mean = sum / static_cast<double>(powers.size());
    return lo + t * (mean - lo);
}

inline std::vector<double> sweep_points(double from = 0.1, double to = 3.0, double step = 0.1) {
    if (!(step > 0.0) || to < from)
        throw ConfigError("bad sweep range");
    std::vector<double> out;
    const auto n = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(from + static_cast<double>(i) * step);
    return out;
}

struct SweepPoint {
    double t = 0.0;
    double threshold = 0.0;
    double pixel_accuracy = 0.0;
    std::optional<std::uint8_t> predicted;
};

// Background detection at each relative threshold, scored against the
// golden image. The classifier, when given, recognizes the binarized
// silhouette.
inline std::vector<SweepPoint> threshold_sweep(const CyclePowers &p, const CycleSchedule &s,
                                               const Image &golden, std::span<const double> points,
                                               const KnnClassifier *classifier = nullptr) {
    const std::vector<double> v = p.valid(s);
    std::vector<SweepPoint> out;
    for (double t : points) {
        SweepPoint sp;
        sp.t = t;
        sp.threshold = relative_threshold(v, t);
        const SilhouetteImage sil = recover_silhouette(p, s, sp.threshold);
        sp.pixel_accuracy = pixel_marker_accuracy(sil, golden);
        if (classifier)
            sp.predicted = classifier->predict(binarize_markers(sil));
        out.push_back(sp);
    }
    return out;
}

} // namespace convleak
