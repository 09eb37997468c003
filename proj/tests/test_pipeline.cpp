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

#include "convleak/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace convleak;

namespace {

Image digit(std::size_t i) {
    static const std::vector<Image> images =
        load_idx(std::filesystem::path(CONVLEAK_DATA_DIR) / "mnist-eval-images-idx3-ubyte");
    return images.at(i);
}

double correlation(const std::vector<double> &a, const std::vector<double> &b) {
    return detail::pearson(a.data(), b.data(), a.size());
}

} // namespace

TEST(Pipeline, SeedsAreDistinctPerTrace) {
    const TraceSeeds a = trace_seeds(1, 0, 0), b = trace_seeds(1, 0, 1), c = trace_seeds(1, 1, 0);
    EXPECT_NE(a.noise, b.noise);
    EXPECT_NE(a.noise, c.noise);
    EXPECT_NE(a.noise, a.align);
    EXPECT_EQ(trace_seeds(1, 3, 4).noise, trace_seeds(1, 3, 4).noise);
}

TEST(Pipeline, GroundTruthSourcePassesSimulatorPowers) {
    PipelineConfig cfg;
    cfg.source = PowerSource::ground_truth;
    const auto kernels = random_binary_kernels(3, 3, 1);
    const ImageMeasurement m = measure_image(digit(0), kernels, cfg, 0);
    ASSERT_EQ(m.valid.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(m.extracted[k].values, m.run.powers[k].values);
        EXPECT_EQ(m.valid[k].size(), 676u);
    }
}

TEST(Pipeline, MeasuredPowersTrackTruth) {
    PipelineConfig cfg;
    cfg.snr_db = 30.0;
    cfg.seed = 5;
    const auto kernels = random_binary_kernels(2, 3, 2);
    const ImageMeasurement m = measure_image(digit(1), kernels, cfg, 1);
    for (std::size_t k = 0; k < 2; ++k)
        EXPECT_GT(correlation(m.valid[k], m.run.powers[k].valid(m.schedule())), 0.99);
}

TEST(Pipeline, Deterministic) {
    PipelineConfig cfg;
    cfg.snr_db = 20.0;
    cfg.seed = 11;
    cfg.accel.masking = true;
    const auto kernels = random_binary_kernels(2, 3, 3);
    const ImageMeasurement a = measure_image(digit(2), kernels, cfg, 4);
    const ImageMeasurement b = measure_image(digit(2), kernels, cfg, 4);
    EXPECT_EQ(a.valid, b.valid);
    cfg.seed = 12;
    const ImageMeasurement c = measure_image(digit(2), kernels, cfg, 4);
    EXPECT_NE(a.valid, c.valid);
}

TEST(Pipeline, SnrSetsNoiseFromCleanTrace) {
    PipelineConfig cfg;
    cfg.snr_db = 20.0;
    const SimulationRun run = simulate_cycles(digit(3), random_binary_kernels(1, 3, 4)[0], cfg.accel);
    const ChainConfig chain = chain_for_trace(cfg, run.powers, 3, 0);
    const RawTrace clean = apply_highpass(render_pdn(run.powers, cfg.chain), cfg.chain);
    EXPECT_NEAR(chain.noise_sigma, rms(clean.samples, clean.active_samples()) / 10.0, 1e-12);
}

TEST(Pipeline, ExtractionFollowsChainSettings) {
    PipelineConfig cfg;
    cfg.chain.highpass = false;
    cfg.chain.highpass_tau = 1e-3;
    const ExtractConfig e = extract_for_trace(cfg, 0, 0);
    EXPECT_FALSE(e.restore_dc);
    EXPECT_DOUBLE_EQ(e.highpass_tau, 1e-3);
}
