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
#include "convleak/binary_io.hpp"
#include "convleak/error.hpp"
#include "convleak/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace convleak {

class TemplateBuildError : public NotApplicableError {
public:
    explicit TemplateBuildError(const std::string &what) : NotApplicableError(what) {}
};

class ReconstructionError : public DataError {
public:
    explicit ReconstructionError(const std::string &what) : DataError(what) {}
};

// Related-pixel patch of one cycle as stored in a template: K rows of K+1
// bytes. Slots that held reset state read as 0.
inline std::vector<std::uint8_t> related_patch(const Image &img, const CycleSchedule &s,
                                               std::size_t v) {
    std::vector<std::uint8_t> patch;
    patch.reserve(s.slots());
    for (std::int32_t px : s.related_pixels(v))
        patch.push_back(px < 0 ? 0 : img.pixels[static_cast<std::size_t>(px)]);
    return patch;
}

// Profiling database: one entry per valid cycle of every profiling image.
struct PowerTemplate {
    int kernel_size = 3;
    std::size_t kernel_count = 0;
    std::vector<std::uint8_t> patches; // entry_count x patch_size
    std::vector<float> powers;         // entry_count x kernel_count
    std::vector<double> mean;
    std::vector<double> stddev;

    std::size_t patch_size() const {
        return static_cast<std::size_t>(kernel_size * (kernel_size + 1));
    }
    std::size_t size() const { return kernel_count ? powers.size() / kernel_count : 0; }
    std::span<const std::uint8_t> patch(std::size_t e) const {
        return {patches.data() + e * patch_size(), patch_size()};
    }
    std::span<const float> feature(std::size_t e) const {
        return {powers.data() + e * kernel_count, kernel_count};
    }

    friend bool operator==(const PowerTemplate &, const PowerTemplate &) = default;
};

class TemplateBuilder {
public:
    TemplateBuilder(int kernel_size, std::size_t kernel_count) {
        if (kernel_size != 3 && kernel_size != 5)
            throw ConfigError("template kernel size must be 3 or 5");
        if (kernel_count == 0 || kernel_count > 255)
            throw ConfigError("template needs 1..255 kernels");
        pt_.kernel_size = kernel_size;
        pt_.kernel_count = kernel_count;
    }

    // powers[k] holds the extracted powers of kernel k's valid cycles.
    // Either one schedule shared by all kernels or one per kernel; per-kernel
    // schedules must agree, or the feature vectors would mix cycles.
    void add(const Image &img, std::span<const CycleSchedule> schedules,
             const std::vector<std::vector<double>> &powers) {
        if (schedules.empty())
            throw ConfigError("template entry without a schedule");
        for (const CycleSchedule &s : schedules.subspan(1))
            if (!(s == schedules.front()))
                throw TemplateBuildError(
                    "kernels were scheduled in different cycle orders; power feature vectors "
                    "cannot be assembled (random scheduling is active)");
        const CycleSchedule &s = schedules.front();
        if (s.kernel_size != pt_.kernel_size)
            throw ConfigError("schedule kernel size does not match the template");
        if (powers.size() != pt_.kernel_count)
            throw ConfigError("expected powers for " + std::to_string(pt_.kernel_count) +
                              " kernels, got " + std::to_string(powers.size()));
        for (const auto &p : powers)
            if (p.size() != s.valid_count())
                throw LengthError("kernel power vector length differs from the valid cycle count");
        for (std::size_t v = 0; v < s.valid_count(); ++v) {
            const auto patch = related_patch(img, s, v);
            pt_.patches.insert(pt_.patches.end(), patch.begin(), patch.end());
            for (std::size_t k = 0; k < pt_.kernel_count; ++k)
                pt_.powers.push_back(static_cast<float>(powers[k][v]));
        }
    }

    PowerTemplate finish() {
        const std::size_t n = pt_.size();
        if (n == 0)
            throw DataError("template has no entries");
        pt_.mean.assign(pt_.kernel_count, 0.0);
        pt_.stddev.assign(pt_.kernel_count, 0.0);
        for (std::size_t e = 0; e < n; ++e)
            for (std::size_t k = 0; k < pt_.kernel_count; ++k)
                pt_.mean[k] += pt_.powers[e * pt_.kernel_count + k];
        for (double &m : pt_.mean)
            m /= static_cast<double>(n);
        for (std::size_t e = 0; e < n; ++e)
            for (std::size_t k = 0; k < pt_.kernel_count; ++k) {
                const double d = pt_.powers[e * pt_.kernel_count + k] - pt_.mean[k];
                pt_.stddev[k] += d * d;
            }
        for (double &s : pt_.stddev)
            s = std::sqrt(s / static_cast<double>(n));
        return std::move(pt_);
    }

private:
    PowerTemplate pt_;
};

// PTPL template files.
inline std::vector<std::uint8_t> encode_template(const PowerTemplate &pt) {
    io::Writer out;
    out.put_magic("PTPL");
    out.put<std::uint16_t>(1);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(pt.kernel_size));
    out.put<std::uint8_t>(static_cast<std::uint8_t>(pt.kernel_count));
    out.put<std::uint64_t>(pt.size());
    for (std::size_t k = 0; k < pt.kernel_count; ++k) {
        out.put<double>(pt.mean[k]);
        out.put<double>(pt.stddev[k]);
    }
    for (std::size_t e = 0; e < pt.size(); ++e) {
        const auto p = pt.patch(e);
        out.put_bytes(p.data(), p.size());
        for (float f : pt.feature(e))
            out.put<float>(f);
    }
    return out.take();
}

inline PowerTemplate decode_template(const std::vector<std::uint8_t> &bytes,
                                     const std::string &source) {
    io::Reader in(bytes, source);
    in.expect_magic("PTPL");
    if (const auto version = in.get<std::uint16_t>(); version != 1)
        throw FormatError(source + ": unsupported PTPL version " + std::to_string(version));
    PowerTemplate pt;
    pt.kernel_size = in.get<std::uint8_t>();
    pt.kernel_count = in.get<std::uint8_t>();
    if ((pt.kernel_size != 3 && pt.kernel_size != 5) || pt.kernel_count == 0)
        throw FormatError(source + ": bad template geometry");
    const auto n = in.get<std::uint64_t>();
    for (std::size_t k = 0; k < pt.kernel_count; ++k) {
        pt.mean.push_back(in.get<double>());
        pt.stddev.push_back(in.get<double>());
    }
    const std::size_t entry_bytes = pt.patch_size() + pt.kernel_count * sizeof(float);
    if (in.remaining() != n * entry_bytes)
        throw LengthError(source + ": expected " + std::to_string(n) + " template entries");
    pt.patches.reserve(n * pt.patch_size());
    pt.powers.reserve(n * pt.kernel_count);
    for (std::uint64_t e = 0; e < n; ++e) {
        const std::uint8_t *p = in.take(pt.patch_size());
        pt.patches.insert(pt.patches.end(), p, p + pt.patch_size());
        for (std::size_t k = 0; k < pt.kernel_count; ++k)
            pt.powers.push_back(in.get<float>());
    }
    return pt;
}

inline void save_template(const PowerTemplate &pt, const std::filesystem::path &path) {
    io::write_file(path, encode_template(pt));
}

inline PowerTemplate load_template(const std::filesystem::path &path) {
    return decode_template(io::read_file(path), path.string());
}

struct GroupingConfig {
    std::vector<std::vector<std::size_t>> groups;
    double delta = 1.0;
    // Distances in per-kernel standard deviations; off means raw power units.
    bool normalize = true;
    // Treat patches whose pixels agree after dividing by 3 as one candidate.
    bool merge_near_duplicates = false;
};

// Contiguous blocks of group_size kernels; trailing kernels that do not
// fill a block are left out.
inline std::vector<std::vector<std::size_t>> contiguous_groups(std::size_t kernel_count,
                                                               std::size_t group_size) {
    if (group_size == 0 || group_size > kernel_count)
        throw ConfigError("group size must lie in 1..kernel count");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start + group_size <= kernel_count; start += group_size) {
        out.emplace_back();
        for (std::size_t k = start; k < start + group_size; ++k)
            out.back().push_back(k);
    }
    return out;
}

inline void validate(const GroupingConfig &g, std::size_t kernel_count) {
    if (g.groups.empty())
        throw ConfigError("no kernel groups");
    if (!(g.delta > 0.0))
        throw ConfigError("delta must be positive");
    std::vector<bool> used(kernel_count, false);
    for (const auto &grp : g.groups) {
        if (grp.empty())
            throw ConfigError("empty kernel group");
        for (std::size_t k : grp) {
            if (k >= kernel_count)
                throw ConfigError("kernel index " + std::to_string(k) + " out of range");
            if (used[k])
                throw ConfigError("kernel " + std::to_string(k) + " appears in two groups");
            used[k] = true;
        }
    }
}

struct CandidateSet {
    std::size_t cycle = 0;
    std::vector<std::uint32_t> ids; // ascending distinct patch ids
    std::vector<std::size_t> group_sizes;
};

// Grouped range search over a power template. Every group gets a kd-tree
// over its features; each tree node keeps the distinct patch ids below it
// so that boxes lying wholly inside the query ball are taken in one step.
// Queries reuse scratch buffers, so an index must not be shared between
// threads.
class CandidateIndex {
public:
    CandidateIndex(const PowerTemplate &pt, GroupingConfig cfg) : cfg_(std::move(cfg)) {
        validate(cfg_, pt.kernel_count);
        patch_size_ = pt.patch_size();
        kernel_count_ = pt.kernel_count;
        mean_ = pt.mean;
        scale_.resize(pt.kernel_count);
        for (std::size_t k = 0; k < pt.kernel_count; ++k) {
            if (!cfg_.normalize) {
                mean_[k] = 0.0;
                scale_[k] = 1.0;
            } else {
                scale_[k] = pt.stddev[k] > 0.0 ? 1.0 / pt.stddev[k] : 1.0;
            }
        }

        std::unordered_map<std::string, std::uint32_t> seen;
        entry_patch_.resize(pt.size());
        for (std::size_t e = 0; e < pt.size(); ++e) {
            const auto p = pt.patch(e);
            std::string key(p.begin(), p.end());
            if (cfg_.merge_near_duplicates)
                for (char &c : key)
                    c = static_cast<char>(static_cast<std::uint8_t>(c) / 3);
            auto [it, inserted] = seen.try_emplace(std::move(key), static_cast<std::uint32_t>(patch_count()));
            if (inserted)
                patches_.insert(patches_.end(), p.begin(), p.end());
            entry_patch_[e] = it->second;
        }

        for (const auto &grp : cfg_.groups)
            trees_.push_back(build_tree(pt, grp));
        mark_.assign(patch_count(), 0);
    }

    std::size_t patch_count() const { return patches_.size() / patch_size_; }
    std::size_t patch_size() const { return patch_size_; }
    std::size_t group_count() const { return trees_.size(); }
    const GroupingConfig &config() const { return cfg_; }
    std::span<const std::uint8_t> patch(std::uint32_t id) const {
        return {patches_.data() + std::size_t{id} * patch_size_, patch_size_};
    }
    std::uint32_t entry_patch(std::size_t e) const { return entry_patch_[e]; }

    std::vector<double> normalized(std::span<const double> rho) const {
        if (rho.size() != kernel_count_)
            throw DimensionError("feature vector has " + std::to_string(rho.size()) +
                                 " powers; template has " + std::to_string(kernel_count_) +
                                 " kernels");
        std::vector<double> z(rho.size());
        for (std::size_t k = 0; k < rho.size(); ++k)
            z[k] = (rho[k] - mean_[k]) * scale_[k];
        return z;
    }

    // Distinct patch ids whose group-m distance to the query is below delta.
    std::vector<std::uint32_t> group_candidates(std::span<const double> rho, std::size_t m,
                                                double delta) const {
        const std::vector<double> z = normalized(rho);
        std::vector<std::uint32_t> out;
        ++stamp_;
        if (stamp_ == 0) {
            std::fill(mark_.begin(), mark_.end(), 0);
            stamp_ = 1;
        }
        search(trees_[m], z, delta, [&](std::uint32_t id) {
            if (mark_[id] != stamp_) {
                mark_[id] = stamp_;
                out.push_back(id);
            }
        });
        std::sort(out.begin(), out.end());
        return out;
    }

    CandidateSet candidates(std::span<const double> rho, std::size_t cycle = 0) const {
        return candidates(rho, cfg_.delta, cycle);
    }

    // Intersection over all groups.
    CandidateSet candidates(std::span<const double> rho, double delta, std::size_t cycle) const {
        const std::vector<double> z = normalized(rho);
        CandidateSet cs;
        cs.cycle = cycle;
        std::vector<std::uint32_t> touched;
        count_.resize(patch_count(), 0);
        for (std::size_t m = 0; m < trees_.size(); ++m) {
            std::size_t group_size = 0;
            const auto level = static_cast<std::uint16_t>(m);
            search(trees_[m], z, delta, [&](std::uint32_t id) {
                if (count_[id] == level) {
                    count_[id] = static_cast<std::uint16_t>(level + 1);
                    if (m == 0)
                        touched.push_back(id);
                    ++group_size;
                }
            });
            cs.group_sizes.push_back(group_size);
        }
        const auto full = static_cast<std::uint16_t>(trees_.size());
        for (std::uint32_t id : touched) {
            if (count_[id] == full)
                cs.ids.push_back(id);
            count_[id] = 0;
        }
        std::sort(cs.ids.begin(), cs.ids.end());
        return cs;
    }

private:
    struct Node {
        std::vector<float> lo, hi;
        std::uint32_t begin = 0, end = 0;  // range in order
        std::uint32_t ids_begin = 0, ids_end = 0;
        std::int32_t left = -1, right = -1;
    };
    struct Tree {
        std::vector<std::size_t> dims;
        std::vector<float> points; // entry-major, dims.size() per entry
        std::vector<std::uint32_t> order;
        std::vector<std::uint32_t> ids; // concatenated per-node distinct patch ids
        std::vector<Node> nodes;
    };

    static constexpr std::uint32_t leaf_size = 16;

    Tree build_tree(const PowerTemplate &pt, const std::vector<std::size_t> &dims) const {
        Tree t;
        t.dims = dims;
        const std::size_t d = dims.size();
        const std::size_t n = pt.size();
        t.points.resize(n * d);
        for (std::size_t e = 0; e < n; ++e)
            for (std::size_t i = 0; i < d; ++i) {
                const std::size_t k = dims[i];
                t.points[e * d + i] =
                    static_cast<float>((pt.powers[e * pt.kernel_count + k] - mean_[k]) * scale_[k]);
            }
        t.order.resize(n);
        for (std::size_t e = 0; e < n; ++e)
            t.order[e] = static_cast<std::uint32_t>(e);
        build_node(t, 0, static_cast<std::uint32_t>(n));
        return t;
    }

    std::int32_t build_node(Tree &t, std::uint32_t begin, std::uint32_t end) const {
        const std::size_t d = t.dims.size();
        Node node;
        node.begin = begin;
        node.end = end;
        node.lo.assign(d, std::numeric_limits<float>::infinity());
        node.hi.assign(d, -std::numeric_limits<float>::infinity());
        for (std::uint32_t i = begin; i < end; ++i)
            for (std::size_t a = 0; a < d; ++a) {
                const float v = t.points[std::size_t{t.order[i]} * d + a];
                node.lo[a] = std::min(node.lo[a], v);
                node.hi[a] = std::max(node.hi[a], v);
            }
        std::vector<std::uint32_t> ids;
        for (std::uint32_t i = begin; i < end; ++i)
            ids.push_back(entry_patch_[t.order[i]]);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        node.ids_begin = static_cast<std::uint32_t>(t.ids.size());
        t.ids.insert(t.ids.end(), ids.begin(), ids.end());
        node.ids_end = static_cast<std::uint32_t>(t.ids.size());

        const auto self = static_cast<std::int32_t>(t.nodes.size());
        t.nodes.push_back(node);
        if (end - begin <= leaf_size)
            return self;

        std::size_t axis = 0;
        for (std::size_t a = 1; a < d; ++a)
            if (node.hi[a] - node.lo[a] > node.hi[axis] - node.lo[axis])
                axis = a;
        if (!(node.hi[axis] > node.lo[axis]))
            return self; // all points coincide
        const std::uint32_t mid = begin + (end - begin) / 2;
        std::nth_element(t.order.begin() + begin, t.order.begin() + mid, t.order.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             const float va = t.points[std::size_t{a} * d + axis];
                             const float vb = t.points[std::size_t{b} * d + axis];
                             return va < vb || (va == vb && a < b);
                         });
        const std::int32_t left = build_node(t, begin, mid);
        const std::int32_t right = build_node(t, mid, end);
        t.nodes[static_cast<std::size_t>(self)].left = left;
        t.nodes[static_cast<std::size_t>(self)].right = right;
        return self;
    }

    template <class Visit>
    void search(const Tree &t, const std::vector<double> &z, double delta, Visit &&visit) const {
        const std::size_t d = t.dims.size();
        std::vector<double> q(d);
        for (std::size_t a = 0; a < d; ++a)
            q[a] = z[t.dims[a]];
        std::vector<std::int32_t> stack{0};
        while (!stack.empty()) {
            const Node &node = t.nodes[static_cast<std::size_t>(stack.back())];
            stack.pop_back();
            double near = 0.0, far = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double lo = node.lo[a], hi = node.hi[a];
                if (q[a] < lo)
                    near += lo - q[a];
                else if (q[a] > hi)
                    near += q[a] - hi;
                far += std::max(std::abs(q[a] - lo), std::abs(q[a] - hi));
            }
            if (near >= delta)
                continue;
            if (far < delta) {
                for (std::uint32_t i = node.ids_begin; i < node.ids_end; ++i)
                    visit(t.ids[i]);
                continue;
            }
            if (node.left < 0) {
                for (std::uint32_t i = node.begin; i < node.end; ++i) {
                    const std::uint32_t e = t.order[i];
                    double dist = 0.0;
                    for (std::size_t a = 0; a < d; ++a)
                        dist += std::abs(q[a] - double{t.points[std::size_t{e} * d + a]});
                    if (dist < delta)
                        visit(entry_patch_[e]);
                }
                continue;
            }
            stack.push_back(node.right);
            stack.push_back(node.left);
        }
    }

    GroupingConfig cfg_;
    std::size_t patch_size_ = 0;
    std::size_t kernel_count_ = 0;
    std::vector<double> mean_, scale_;
    std::vector<std::uint8_t> patches_;
    std::vector<std::uint32_t> entry_patch_;
    std::vector<Tree> trees_;
    mutable std::vector<std::uint32_t> mark_;
    mutable std::uint32_t stamp_ = 0;
    mutable std::vector<std::uint16_t> count_;
};

// Candidate sets for every valid cycle of one attacked image.
// powers[k][v] is the extracted power of kernel k at valid cycle v.
inline std::vector<CandidateSet> generate_candidates(const CandidateIndex &index,
                                                     const std::vector<std::vector<double>> &powers,
                                                     std::optional<double> delta = std::nullopt) {
    if (powers.empty())
        throw ConfigError("no kernel powers");
    const std::size_t cycles = powers.front().size();
    std::vector<CandidateSet> out;
    out.reserve(cycles);
    std::vector<double> rho(powers.size());
    for (std::size_t v = 0; v < cycles; ++v) {
        for (std::size_t k = 0; k < powers.size(); ++k)
            rho[k] = powers[k].at(v);
        out.push_back(index.candidates(rho, delta.value_or(index.config().delta), v));
    }
    return out;
}

struct Selector {
    std::vector<std::optional<std::uint32_t>> index; // position within each cycle's set
    double sigma = 0.0;
    std::size_t restarts = 0;
    std::size_t start_cycle = 0;
};

struct Reconstruction {
    Image image;
    Selector selector;
    std::size_t empty_cycles = 0;
    std::size_t interpolated_pixels = 0;
};

namespace detail {

// Candidate patch values of each cycle, laid out contiguously.
struct CandidateTable {
    std::size_t slots = 0;
    std::vector<std::vector<std::uint8_t>> values; // per cycle: count x slots

    std::size_t count(std::size_t v) const { return values[v].size() / slots; }
    const std::uint8_t *candidate(std::size_t v, std::size_t c) const {
        return values[v].data() + c * slots;
    }
};

inline CandidateTable gather(const CandidateIndex &index, std::span<const CandidateSet> sets) {
    CandidateTable t;
    t.slots = index.patch_size();
    t.values.resize(sets.size());
    for (std::size_t v = 0; v < sets.size(); ++v) {
        t.values[v].reserve(sets[v].ids.size() * t.slots);
        for (std::uint32_t id : sets[v].ids) {
            const auto p = index.patch(id);
            t.values[v].insert(t.values[v].end(), p.begin(), p.end());
        }
    }
    return t;
}

inline std::uint8_t round_mean(std::int64_t sum, std::int64_t n) {
    return static_cast<std::uint8_t>((2 * sum + n) / (2 * n));
}

// Fills undecided pixels from decided 4-neighbours, one ring per pass.
inline std::size_t fill_undecided(Image &img, std::vector<bool> &decided) {
    std::size_t filled = 0;
    if (std::none_of(decided.begin(), decided.end(), [](bool b) { return b; })) {
        std::fill(img.pixels.begin(), img.pixels.end(), 0);
        return img.pixels.size();
    }
    while (std::find(decided.begin(), decided.end(), false) != decided.end()) {
        std::vector<bool> next = decided;
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) {
                const std::size_t i = y * img.width + x;
                if (decided[i])
                    continue;
                std::int64_t sum = 0, n = 0;
                auto take = [&](std::size_t xx, std::size_t yy) {
                    const std::size_t j = yy * img.width + xx;
                    if (decided[j]) {
                        sum += img.pixels[j];
                        ++n;
                    }
                };
                if (x > 0)
                    take(x - 1, y);
                if (x + 1 < img.width)
                    take(x + 1, y);
                if (y > 0)
                    take(x, y - 1);
                if (y + 1 < img.height)
                    take(x, y + 1);
                if (n) {
                    img.pixels[i] = round_mean(sum, n);
                    next[i] = true;
                    ++filled;
                }
            }
        decided.swap(next);
    }
    return filled;
}

} // namespace detail

struct ReconstructConfig {
    std::size_t max_restarts = 64;
    std::uint64_t seed = 0;
};

// Greedy image reconstruction. Restarts from each candidate (up to
// max_restarts) of a random non-empty cycle, grows the image by always
// taking the unprocessed cycle that overlaps the decided pixels most and
// its candidate closest to the current pixel means, and keeps the
// selection with the smallest summed per-pixel variance.
inline Reconstruction reconstruct(const CandidateIndex &index, std::span<const CandidateSet> sets,
                                  const CycleSchedule &s, const ReconstructConfig &cfg = {}) {
    if (sets.size() != s.valid_count())
        throw DimensionError("candidate sets do not match the schedule's valid cycles");
    const detail::CandidateTable table = detail::gather(index, sets);
    const std::size_t cycles = sets.size();
    const std::size_t slots = table.slots;
    const std::size_t pixels = s.width * s.height;

    std::vector<std::size_t> nonempty;
    for (std::size_t v = 0; v < cycles; ++v)
        if (table.count(v) > 0)
            nonempty.push_back(v);
    if (nonempty.empty())
        throw ReconstructionError("every candidate set is empty");

    // Cycles covering each pixel, for incremental overlap counts.
    std::vector<std::vector<std::uint32_t>> covering(pixels);
    for (std::size_t v = 0; v < cycles; ++v)
        for (std::int32_t px : s.related_pixels(v))
            if (px >= 0)
                covering[static_cast<std::size_t>(px)].push_back(static_cast<std::uint32_t>(v));

    std::mt19937_64 rng(cfg.seed);
    const std::size_t r =
        nonempty[std::uniform_int_distribution<std::size_t>(0, nonempty.size() - 1)(rng)];
    const std::size_t restarts = std::min(table.count(r), std::max<std::size_t>(cfg.max_restarts, 1));

    std::vector<std::int64_t> sum(pixels), sumsq(pixels), cnt(pixels);
    std::vector<std::uint32_t> overlap(cycles);
    std::vector<bool> processed(cycles);
    std::vector<std::optional<std::uint32_t>> sel(cycles);
    std::vector<std::size_t> decided_slots;
    std::vector<double> means;

    Reconstruction best;
    double best_sigma = std::numeric_limits<double>::infinity();
    std::vector<std::int64_t> best_sum, best_cnt;

    auto apply = [&](std::size_t v, std::size_t c) {
        const std::uint8_t *cand = table.candidate(v, c);
        const auto rel = s.related_pixels(v);
        for (std::size_t k = 0; k < slots; ++k) {
            if (rel[k] < 0)
                continue;
            const auto px = static_cast<std::size_t>(rel[k]);
            if (cnt[px] == 0)
                for (std::uint32_t w : covering[px])
                    ++overlap[w];
            sum[px] += cand[k];
            sumsq[px] += std::int64_t{cand[k]} * cand[k];
            ++cnt[px];
        }
        sel[v] = static_cast<std::uint32_t>(c);
        processed[v] = true;
    };

    for (std::size_t start = 0; start < restarts; ++start) {
        std::fill(sum.begin(), sum.end(), 0);
        std::fill(sumsq.begin(), sumsq.end(), 0);
        std::fill(cnt.begin(), cnt.end(), 0);
        std::fill(overlap.begin(), overlap.end(), 0);
        std::fill(sel.begin(), sel.end(), std::nullopt);
        for (std::size_t v = 0; v < cycles; ++v)
            processed[v] = table.count(v) == 0;

        apply(r, start);
        for (;;) {
            std::size_t t = cycles;
            for (std::size_t v = 0; v < cycles; ++v)
                if (!processed[v] && (t == cycles || overlap[v] > overlap[t]))
                    t = v;
            if (t == cycles)
                break;

            const auto rel = s.related_pixels(t);
            decided_slots.clear();
            means.clear();
            for (std::size_t k = 0; k < slots; ++k)
                if (rel[k] >= 0 && cnt[static_cast<std::size_t>(rel[k])] > 0) {
                    const auto px = static_cast<std::size_t>(rel[k]);
                    decided_slots.push_back(k);
                    means.push_back(static_cast<double>(sum[px]) / static_cast<double>(cnt[px]));
                }
            std::size_t choice = 0;
            double choice_dist = std::numeric_limits<double>::infinity();
            if (!decided_slots.empty())
                for (std::size_t c = 0; c < table.count(t); ++c) {
                    const std::uint8_t *cand = table.candidate(t, c);
                    double dist = 0.0;
                    for (std::size_t i = 0; i < decided_slots.size() && dist < choice_dist; ++i) {
                        const double d = cand[decided_slots[i]] - means[i];
                        dist += d * d;
                    }
                    if (dist < choice_dist) {
                        choice_dist = dist;
                        choice = c;
                    }
                }
            apply(t, choice);
        }

        double sigma = 0.0;
        for (std::size_t px = 0; px < pixels; ++px)
            if (cnt[px] > 0)
                sigma += static_cast<double>(cnt[px] * sumsq[px] - sum[px] * sum[px]) /
                         static_cast<double>(cnt[px] * cnt[px]);
        if (sigma < best_sigma) {
            best_sigma = sigma;
            best.selector.index = sel;
            best_sum = sum;
            best_cnt = cnt;
        }
    }

    best.selector.sigma = best_sigma;
    best.selector.restarts = restarts;
    best.selector.start_cycle = r;
    best.empty_cycles = cycles - nonempty.size();
    best.image = Image(s.width, s.height);
    std::vector<bool> decided(pixels, false);
    for (std::size_t px = 0; px < pixels; ++px)
        if (best_cnt[px] > 0) {
            best.image.pixels[px] = detail::round_mean(best_sum[px], best_cnt[px]);
            decided[px] = true;
        }
    best.interpolated_pixels = detail::fill_undecided(best.image, decided);
    return best;
}

// Per-pixel mean over every candidate of every cycle covering the pixel.
inline Image average_baseline(const CandidateIndex &index, std::span<const CandidateSet> sets,
                              const CycleSchedule &s) {
    if (sets.size() != s.valid_count())
        throw DimensionError("candidate sets do not match the schedule's valid cycles");
    const std::size_t pixels = s.width * s.height;
    std::vector<std::int64_t> sum(pixels, 0), cnt(pixels, 0);
    bool any = false;
    for (std::size_t v = 0; v < sets.size(); ++v) {
        const auto rel = s.related_pixels(v);
        for (std::uint32_t id : sets[v].ids) {
            any = true;
            const auto p = index.patch(id);
            for (std::size_t k = 0; k < p.size(); ++k)
                if (rel[k] >= 0) {
                    sum[static_cast<std::size_t>(rel[k])] += p[k];
                    ++cnt[static_cast<std::size_t>(rel[k])];
                }
        }
    }
    if (!any)
        throw ReconstructionError("every candidate set is empty");
    Image img(s.width, s.height);
    std::vector<bool> decided(pixels, false);
    for (std::size_t px = 0; px < pixels; ++px)
        if (cnt[px] > 0) {
            img.pixels[px] = detail::round_mean(sum[px], cnt[px]);
            decided[px] = true;
        }
    detail::fill_undecided(img, decided);
    return img;
}

// Table-II style candidate statistics, averaged over cycles. D_min is the
// smallest Euclidean distance between a candidate and the true related
// pixels; a cycle without candidates counts as the largest possible
// distance, 255 * sqrt(patch size).
struct CandidateStats {
    double delta = 0.0;
    double group_size = 0.0; // mean |S_m| over groups and cycles
    double group_dmin = 0.0;
    double final_size = 0.0; // mean |S|
    double final_dmin = 0.0;
    double empty_fraction = 0.0;
    std::size_t cycles = 0;
};

class CandidateStatsAccumulator {
public:
    explicit CandidateStatsAccumulator(double delta) { s_.delta = delta; }

    void add(const CandidateIndex &index, std::span<const double> rho,
             std::span<const std::uint8_t> truth) {
        const double penalty = 255.0 * std::sqrt(static_cast<double>(index.patch_size()));
        auto dmin = [&](const std::vector<std::uint32_t> &ids) {
            double best = penalty;
            for (std::uint32_t id : ids) {
                const auto p = index.patch(id);
                double d = 0.0;
                for (std::size_t k = 0; k < p.size(); ++k) {
                    const double diff = static_cast<double>(p[k]) - static_cast<double>(truth[k]);
                    d += diff * diff;
                }
                best = std::min(best, std::sqrt(d));
            }
            return best;
        };
        for (std::size_t m = 0; m < index.group_count(); ++m) {
            const auto ids = index.group_candidates(rho, m, s_.delta);
            group_size_ += static_cast<double>(ids.size());
            group_dmin_ += dmin(ids);
            ++group_n_;
        }
        const CandidateSet cs = index.candidates(rho, s_.delta, 0);
        s_.final_size += static_cast<double>(cs.ids.size());
        s_.final_dmin += dmin(cs.ids);
        s_.empty_fraction += cs.ids.empty() ? 1.0 : 0.0;
        ++s_.cycles;
    }

    CandidateStats result() const {
        CandidateStats r = s_;
        if (group_n_) {
            r.group_size = group_size_ / static_cast<double>(group_n_);
            r.group_dmin = group_dmin_ / static_cast<double>(group_n_);
        }
        if (r.cycles) {
            const auto n = static_cast<double>(r.cycles);
            r.final_size /= n;
            r.final_dmin /= n;
            r.empty_fraction /= n;
        }
        return r;
    }

private:
    CandidateStats s_;
    double group_size_ = 0.0, group_dmin_ = 0.0;
    std::size_t group_n_ = 0;
};

} // namespace convleak
