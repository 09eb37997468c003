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
#include "convleak/extract.hpp"
#include "convleak/image.hpp"
#include "convleak/kernel.hpp"
#include "convleak/meas_chain.hpp"
#include "convleak/template_attack.hpp"

#include <optional>
#include <vector>

namespace convleak {

enum class PowerSource {
    measured,     // simulate, measure, extract
    ground_truth, // simulator powers taken as is
};

struct PipelineConfig {
    AccelConfig accel;
    ChainConfig chain;
    ExtractConfig extract;
    // When set, the noise level of every trace is chosen for this SNR
    // instead of chain.noise_sigma.
    std::optional<double> snr_db;
    PowerSource source = PowerSource::measured;
    std::uint64_t seed = 0;
};

// Seeds of the stochastic stages for one (image, kernel) pair.
struct TraceSeeds {
    std::uint64_t noise;
    std::uint64_t align;
};

inline TraceSeeds trace_seeds(std::uint64_t seed, std::size_t image_id, std::size_t kernel_id) {
    const std::uint64_t stream = (std::uint64_t{image_id} << 16) ^ kernel_id;
    return {detail::mix_seed(seed ^ 0x6e6f697365ULL, stream),
            detail::mix_seed(seed ^ 0x616c69676eULL, stream)};
}

// Accelerator settings for one image: the scheduling and masking seeds
// are derived from the global seed and the image id.
inline AccelConfig accel_for_image(const PipelineConfig &cfg, std::size_t image_id) {
    AccelConfig a = cfg.accel;
    a.schedule_seed = detail::mix_seed(cfg.seed ^ 0x7363686564ULL ^ cfg.accel.schedule_seed, image_id);
    a.mask_seed = detail::mix_seed(cfg.seed ^ 0x6d61736b73ULL ^ cfg.accel.mask_seed, image_id);
    return a;
}

inline ChainConfig chain_for_trace(const PipelineConfig &cfg, const CyclePowers &truth,
                                   std::size_t image_id, std::size_t kernel_id) {
    ChainConfig c = cfg.chain;
    c.seed = trace_seeds(cfg.seed, image_id, kernel_id).noise;
    if (cfg.snr_db) {
        RawTrace clean = render_pdn(truth, c);
        if (c.highpass)
            clean = apply_highpass(clean, c);
        c.noise_sigma = sigma_for_snr(clean, *cfg.snr_db);
    }
    return c;
}

inline ExtractConfig extract_for_trace(const PipelineConfig &cfg, std::size_t image_id,
                                       std::size_t kernel_id) {
    ExtractConfig e = cfg.extract;
    e.highpass_tau = cfg.chain.highpass_tau;
    e.restore_dc = e.restore_dc && cfg.chain.highpass;
    e.align.seed = trace_seeds(cfg.seed, image_id, kernel_id).align;
    return e;
}

struct ImageMeasurement {
    MultiKernelRun run;
    std::vector<CyclePowers> extracted;     // every clock cycle
    std::vector<std::vector<double>> valid; // [kernel][valid cycle]
    std::size_t low_confidence = 0;

    const CycleSchedule &schedule(std::size_t kernel = 0) const { return run.schedule_for(kernel); }
};

// Simulates every kernel on one image and recovers per-cycle powers the
// way an attacker would.
inline ImageMeasurement measure_image(const Image &img, const std::vector<Kernel> &kernels,
                                      const PipelineConfig &cfg, std::size_t image_id) {
    ImageMeasurement m;
    m.run = run_all_kernels(img, kernels, accel_for_image(cfg, image_id));
    for (std::size_t k = 0; k < kernels.size(); ++k) {
        const CyclePowers &truth = m.run.powers[k];
        CyclePowers got;
        if (cfg.source == PowerSource::ground_truth) {
            got = truth;
        } else {
            const ChainConfig chain = chain_for_trace(cfg, truth, image_id, k);
            const RawTrace raw = measure(truth, chain);
            ExtractionResult ex = extract_trace(raw, extract_for_trace(cfg, image_id, k));
            m.low_confidence += ex.low_confidence_count();
            got = std::move(ex.powers);
        }
        got.kernel_id = k;
        m.valid.push_back(got.valid(m.run.schedule_for(k)));
        m.extracted.push_back(std::move(got));
    }
    return m;
}

inline void add_to_template(TemplateBuilder &builder, const Image &img,
                            const ImageMeasurement &m) {
    builder.add(img, m.run.schedules, m.valid);
}

// Profiling stage of the template attack.
inline PowerTemplate build_template(const std::vector<Image> &images,
                                    const std::vector<Kernel> &kernels,
                                    const PipelineConfig &cfg, std::size_t first_image_id = 0) {
    if (images.empty())
        throw ConfigError("template needs at least one profiling image");
    if (kernels.empty())
        throw ConfigError("template needs at least one kernel");
    TemplateBuilder builder(kernels.front().size, kernels.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        add_to_template(builder, images[i], measure_image(images[i], kernels, cfg, first_image_id + i));
    return builder.finish();
}

} // namespace convleak
