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

#include "convleak/attack_bg.hpp"
#include "convleak/config.hpp"
#include "convleak/error.hpp"
#include "convleak/extract.hpp"
#include "convleak/image.hpp"
#include "convleak/kernel.hpp"
#include "convleak/meas_chain.hpp"
#include "convleak/metrics.hpp"
#include "convleak/pipeline.hpp"
#include "convleak/schedule_io.hpp"
#include "convleak/template_attack.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace convleak;
using nlohmann::json;

namespace {

struct Options {
    std::string config_file;
    std::vector<std::string> overrides;
    std::vector<std::string> inputs;
};

RunConfig load_config(const Options &o) {
    RunConfig cfg;
    ConfigSetter setter(cfg);
    if (!o.config_file.empty())
        setter.load(fs::path(o.config_file));
    for (const std::string &kv : o.overrides)
        setter.assign(kv);
    apply_environment(cfg);
    return cfg;
}

void warn(const std::string &msg) { std::cerr << "warning: " << msg << '\n'; }
void note(const std::string &msg) { std::cerr << msg << '\n'; }

// Workspace layout under cfg.out.
struct Workspace {
    fs::path root;

    fs::path manifest() const { return root / "manifest.json"; }
    fs::path kernels() const { return root / "kernels.txt"; }
    fs::path golden(std::size_t id) const { return root / "golden" / ("i" + std::to_string(id) + ".pgm"); }
    static std::string stem(std::size_t id, std::size_t k) {
        return "i" + std::to_string(id) + "_k" + std::to_string(k);
    }
    fs::path trace(std::size_t id, std::size_t k) const { return root / "traces" / (stem(id, k) + ".ptrc"); }
    fs::path truth(std::size_t id, std::size_t k) const { return root / "truth" / (stem(id, k) + ".pcyc"); }
    fs::path extracted(const std::string &s) const { return root / "extracted" / (s + ".pcyc"); }
    fs::path extracted(std::size_t id, std::size_t k) const { return extracted(stem(id, k)); }
    fs::path shared_schedule(std::size_t id) const {
        return root / "schedules" / ("i" + std::to_string(id) + ".jsonl");
    }
    fs::path kernel_schedule(std::size_t id, std::size_t k) const {
        return root / "schedules" / (stem(id, k) + ".jsonl");
    }
    fs::path silhouette(std::size_t id) const { return root / "bg" / ("i" + std::to_string(id) + ".pgm"); }
    fs::path ptpl() const { return root / "template.ptpl"; }
    fs::path recon(std::size_t id) const { return root / "template" / ("i" + std::to_string(id) + "_alg2.pgm"); }
    fs::path average(std::size_t id) const { return root / "template" / ("i" + std::to_string(id) + "_avg.pgm"); }

    void make(const fs::path &dir) const {
        std::error_code ec;
        fs::create_directories(root / dir, ec);
        if (ec)
            throw DataError("cannot create " + (root / dir).string() + ": " + ec.message());
    }
};

struct ManifestImage {
    std::size_t id = 0;
    std::optional<std::uint8_t> label;
};

struct Manifest {
    std::size_t kernel_count = 0;
    std::size_t width = 0, height = 0;
    std::vector<ManifestImage> images;
};

Manifest read_manifest(const Workspace &ws) {
    std::ifstream in(ws.manifest());
    if (!in)
        throw DataError("no manifest at " + ws.manifest().string() + "; run 'simulate' first");
    Manifest m;
    try {
        const json j = json::parse(in);
        m.kernel_count = j.at("kernel_count").get<std::size_t>();
        m.width = j.at("width").get<std::size_t>();
        m.height = j.at("height").get<std::size_t>();
        for (const json &img : j.at("images")) {
            ManifestImage mi;
            mi.id = img.at("id").get<std::size_t>();
            if (img.contains("label") && !img.at("label").is_null())
                mi.label = img.at("label").get<std::uint8_t>();
            m.images.push_back(mi);
        }
    } catch (const json::exception &e) {
        throw FormatError(ws.manifest().string() + ": " + e.what());
    }
    return m;
}

std::vector<CycleSchedule> load_schedules(const Workspace &ws, std::size_t id, std::size_t kernels) {
    if (fs::exists(ws.shared_schedule(id)))
        return {load_schedule(ws.shared_schedule(id))};
    std::vector<CycleSchedule> out;
    for (std::size_t k = 0; k < kernels; ++k)
        out.push_back(load_schedule(ws.kernel_schedule(id, k)));
    return out;
}

const CycleSchedule &schedule_of(const std::vector<CycleSchedule> &s, std::size_t k) {
    return s.size() == 1 ? s.front() : s.at(k);
}

std::vector<Kernel> kernels_for(const RunConfig &cfg) {
    if (!cfg.kernel_file.empty())
        return load_kernels(cfg.kernel_file);
    return random_binary_kernels(cfg.kernel_count, cfg.pipeline.accel.kernel_size, cfg.kernel_seed);
}

std::optional<KnnClassifier> reference_classifier(const RunConfig &cfg, bool binarized) {
    if (!fs::exists(cfg.ref_images) || !fs::exists(cfg.ref_labels)) {
        warn("reference set not found (" + cfg.ref_images.string() +
             "); recognition metrics skipped");
        return std::nullopt;
    }
    std::vector<Image> refs = load_idx(cfg.ref_images);
    if (binarized)
        for (Image &r : refs)
            r = binarize_image(r);
    return KnnClassifier(std::move(refs), load_idx_labels(cfg.ref_labels), cfg.knn_k);
}

std::ofstream open_out(const fs::path &p) {
    std::ofstream out(p);
    if (!out)
        throw DataError("cannot write " + p.string());
    return out;
}

// --- simulate -------------------------------------------------------------

int cmd_simulate(const Options &o) {
    const RunConfig cfg = load_config(o);
    const Workspace ws{cfg.out};
    const std::vector<Image> all = load_idx(cfg.images);
    std::vector<std::uint8_t> labels;
    if (fs::exists(cfg.labels))
        labels = load_idx_labels(cfg.labels);
    else
        warn("labels file " + cfg.labels.string() + " not found; manifest carries no labels");
    if (cfg.first + cfg.count > all.size())
        throw ConfigError("data.first + data.count exceeds the " + std::to_string(all.size()) +
                          " images in " + cfg.images.string());
    if (cfg.count == 0)
        throw ConfigError("data.count must be positive");
    const std::vector<Kernel> kernels = kernels_for(cfg);

    for (const char *d : {"golden", "traces", "truth", "schedules"})
        ws.make(d);
    save_kernels(kernels, ws.kernels());

    json manifest;
    manifest["seed"] = cfg.seed;
    manifest["kernel_count"] = kernels.size();
    manifest["kernel_size"] = kernels.front().size;
    manifest["width"] = all[cfg.first].width;
    manifest["height"] = all[cfg.first].height;
    manifest["scheduling"] = cfg.pipeline.accel.scheduling == Scheduling::random ? "random" : "sequential";
    manifest["masking"] = cfg.pipeline.accel.masking;
    manifest["samples_per_cycle"] = cfg.pipeline.chain.samples_per_cycle;
    manifest["highpass"] = cfg.pipeline.chain.highpass;
    manifest["images"] = json::array();
    std::size_t total_valid = 0;

    for (std::size_t id = cfg.first; id < cfg.first + cfg.count; ++id) {
        const Image &img = all[id];
        write_pgm(img, ws.golden(id));
        const AccelConfig accel = accel_for_image(cfg.pipeline, id);
        const MultiKernelRun run = run_all_kernels(img, kernels, accel);

        json entry;
        entry["id"] = id;
        entry["label"] = id < labels.size() ? json(labels[id]) : json(nullptr);
        entry["golden"] = fs::relative(ws.golden(id), ws.root).generic_string();
        entry["schedule_seed"] = accel.schedule_seed;
        entry["mask_seed"] = accel.mask_seed;
        entry["valid_cycles"] = run.schedule().valid_count();
        entry["total_cycles"] = run.schedule().total_cycles;
        total_valid += run.schedule().valid_count();
        if (run.schedules.size() == 1) {
            save_schedule(run.schedule(), ws.shared_schedule(id));
            entry["schedules"] = {fs::relative(ws.shared_schedule(id), ws.root).generic_string()};
        } else {
            entry["schedules"] = json::array();
            for (std::size_t k = 0; k < kernels.size(); ++k) {
                save_schedule(run.schedules[k], ws.kernel_schedule(id, k));
                entry["schedules"].push_back(fs::relative(ws.kernel_schedule(id, k), ws.root).generic_string());
            }
        }
        entry["traces"] = json::array();
        for (std::size_t k = 0; k < kernels.size(); ++k) {
            const ChainConfig chain = chain_for_trace(cfg.pipeline, run.powers[k], id, k);
            save_trace(measure(run.powers[k], chain), ws.trace(id, k));
            save_cycle_powers(run.powers[k], ws.truth(id, k));
            entry["traces"].push_back({{"kernel", k},
                                       {"trace", fs::relative(ws.trace(id, k), ws.root).generic_string()},
                                       {"truth", fs::relative(ws.truth(id, k), ws.root).generic_string()},
                                       {"noise_seed", chain.seed},
                                       {"noise_sigma", chain.noise_sigma}});
        }
        manifest["images"].push_back(entry);
    }
    manifest["total_valid_cycles"] = total_valid;
    open_out(ws.manifest()) << manifest.dump(2) << '\n';
    note("simulated " + std::to_string(cfg.count) + " image(s) x " + std::to_string(kernels.size()) +
         " kernel(s) into " + ws.root.string());
    return 0;
}

// --- extract --------------------------------------------------------------

double correlation(const std::vector<double> &a, const std::vector<double> &b) {
    const std::size_t n = std::min(a.size(), b.size());
    if (n < 2)
        return 0.0;
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

int cmd_extract(const Options &o) {
    const RunConfig cfg = load_config(o);
    const Workspace ws{cfg.out};
    std::vector<fs::path> inputs(o.inputs.begin(), o.inputs.end());
    if (inputs.empty()) {
        if (!fs::is_directory(ws.root / "traces"))
            throw DataError("no traces given and " + (ws.root / "traces").string() + " does not exist");
        for (const auto &e : fs::directory_iterator(ws.root / "traces"))
            if (e.path().extension() == ".ptrc")
                inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
    }
    ws.make("extracted");
    std::ofstream stats = open_out(ws.root / "extracted" / "fit_stats.csv");
    stats << "trace,cycles,low_confidence,fit_error,truth_correlation\n";
    const std::regex name(R"(i(\d+)_k(\d+))");
    for (const fs::path &p : inputs) {
        const RawTrace raw = load_trace(p);
        const std::string stem = p.stem().string();
        std::size_t id = 0, k = 0;
        if (std::smatch m; std::regex_match(stem, m, name)) {
            id = std::stoul(m[1]);
            k = std::stoul(m[2]);
        } else {
            // Traces from elsewhere: seed alignment from the file name.
            std::uint64_t h = 1469598103934665603ULL;
            for (unsigned char c : stem)
                h = (h ^ c) * 1099511628211ULL;
            id = static_cast<std::size_t>(h >> 16);
        }
        const ExtractionResult ex = extract_trace(raw, extract_for_trace(cfg.pipeline, id, k));
        save_cycle_powers(ex.powers, ws.extracted(stem));
        stats << stem << ',' << ex.powers.values.size() << ',' << ex.low_confidence_count() << ','
              << ex.fit_error << ',';
        const fs::path truth = p.parent_path().parent_path() / "truth" / (stem + ".pcyc");
        if (fs::exists(truth))
            stats << correlation(ex.powers.values, load_cycle_powers(truth).values);
        stats << '\n';
    }
    note("extracted " + std::to_string(inputs.size()) + " trace(s)");
    return 0;
}

// --- attack-bg ------------------------------------------------------------

int cmd_attack_bg(const Options &o) {
    const RunConfig cfg = load_config(o);
    const Workspace ws{cfg.out};
    const Manifest man = read_manifest(ws);
    if (cfg.bg_kernel >= man.kernel_count)
        throw ConfigError("bg.kernel out of range");
    ws.make("bg");
    const std::optional<KnnClassifier> knn = reference_classifier(cfg, true);
    const std::vector<double> points = sweep_points(cfg.sweep_from, cfg.sweep_to, cfg.sweep_step);

    std::ofstream report = open_out(ws.root / "bg" / "report.csv");
    report << "id,status,threshold,drop,bins,pixel_accuracy,golden,predicted\n";
    std::vector<double> sweep_acc(points.size(), 0.0);
    std::vector<std::size_t> sweep_hits(points.size(), 0);
    std::size_t attacked = 0, labelled = 0;
    EvalReport eval;
    eval.metric_name = "pixel_accuracy";

    for (const ManifestImage &mi : man.images) {
        const auto schedules = load_schedules(ws, mi.id, man.kernel_count);
        const CycleSchedule &s = schedule_of(schedules, cfg.bg_kernel);
        const CyclePowers p = load_cycle_powers(ws.extracted(mi.id, cfg.bg_kernel));
        if (p.values.size() != s.total_cycles)
            throw LengthError(ws.extracted(mi.id, cfg.bg_kernel).string() + " does not match its schedule");
        const Image golden = load_pgm(ws.golden(mi.id));
        BackgroundAttack a;
        try {
            a = attack_background(p, s, cfg.bg_bin_size, cfg.bg_border);
        } catch (const NotApplicableError &e) {
            report << mi.id << ",not_applicable,,,,,,\n";
            warn("image " + std::to_string(mi.id) + ": " + e.what());
            continue;
        }
        ++attacked;
        write_pgm(binarize_markers(a.silhouette), ws.silhouette(mi.id));
        EvalRow row;
        row.id = std::to_string(mi.id);
        row.metric = pixel_marker_accuracy(a.silhouette, golden);
        row.golden_label = mi.label;
        if (knn)
            row.predicted = knn->predict(binarize_markers(a.silhouette));
        report << mi.id << ",ok," << a.threshold.power << ',' << a.threshold.drop << ','
               << a.histogram.counts.size() << ',' << row.metric << ',';
        if (row.golden_label)
            report << int{*row.golden_label};
        report << ',';
        if (row.predicted)
            report << int{*row.predicted};
        report << '\n';
        eval.rows.push_back(row);

        const auto sweep = threshold_sweep(p, s, golden, points, knn ? &*knn : nullptr);
        for (std::size_t i = 0; i < sweep.size(); ++i) {
            sweep_acc[i] += sweep[i].pixel_accuracy;
            if (mi.label && sweep[i].predicted)
                sweep_hits[i] += *sweep[i].predicted == *mi.label;
        }
        labelled += mi.label && knn ? 1 : 0;
    }
    if (attacked == 0)
        throw NotApplicableError("background detection was not applicable to any image");

    std::ofstream sweep = open_out(ws.root / "bg" / "sweep.csv");
    sweep << "relative_threshold,pixel_accuracy,recognition_accuracy\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        sweep << points[i] << ',' << sweep_acc[i] / static_cast<double>(attacked) << ',';
        if (labelled)
            sweep << static_cast<double>(sweep_hits[i]) / static_cast<double>(labelled);
        sweep << '\n';
    }
    std::ofstream per_digit = open_out(ws.root / "bg" / "per_digit.csv");
    write_per_class_csv(per_digit, eval);
    if (eval.has_labels()) {
        std::ofstream map = open_out(ws.root / "bg" / "map.csv");
        write_map_csv(map, eval.map());
    }
    std::printf("background detection: %zu image(s), mean pixel accuracy %.4f", attacked, eval.mean_metric());
    if (eval.has_labels())
        std::printf(", recognition %.4f", eval.recognition());
    std::printf("\n");
    return 0;
}

// --- build-template ---------------------------------------------------------

std::vector<ManifestImage> select(const Manifest &man, std::size_t first, std::size_t count) {
    std::vector<ManifestImage> out;
    for (const ManifestImage &mi : man.images)
        if (mi.id >= first && mi.id < first + count)
            out.push_back(mi);
    return out;
}

std::vector<std::vector<double>> valid_powers(const Workspace &ws, std::size_t id,
                                              const std::vector<CycleSchedule> &schedules,
                                              std::size_t kernels) {
    std::vector<std::vector<double>> out;
    for (std::size_t k = 0; k < kernels; ++k) {
        const CycleSchedule &s = schedule_of(schedules, k);
        const CyclePowers p = load_cycle_powers(ws.extracted(id, k));
        if (p.values.size() != s.total_cycles)
            throw LengthError(ws.extracted(id, k).string() + " does not match its schedule");
        out.push_back(p.valid(s));
    }
    return out;
}

int cmd_build_template(const Options &o) {
    const RunConfig cfg = load_config(o);
    const Workspace ws{cfg.out};
    const Manifest man = read_manifest(ws);
    const auto ids = select(man, cfg.profile_first, cfg.profile_count);
    if (ids.empty())
        throw ConfigError("no simulated images in the profiling range");
    std::optional<TemplateBuilder> builder;
    for (const ManifestImage &mi : ids) {
        const auto schedules = load_schedules(ws, mi.id, man.kernel_count);
        if (!builder)
            builder.emplace(schedules.front().kernel_size, man.kernel_count);
        builder->add(load_pgm(ws.golden(mi.id)), schedules, valid_powers(ws, mi.id, schedules, man.kernel_count));
    }
    const PowerTemplate pt = builder->finish();
    save_template(pt, ws.ptpl());
    std::printf("template: %zu entries from %zu image(s), %zu kernels\n", pt.size(), ids.size(), pt.kernel_count);
    return 0;
}

// --- attack-template --------------------------------------------------------

int cmd_attack_template(const Options &o) {
    const RunConfig cfg = load_config(o);
    const Workspace ws{cfg.out};
    const Manifest man = read_manifest(ws);
    const PowerTemplate pt = load_template(ws.ptpl());
    if (pt.kernel_count != man.kernel_count)
        throw DataError("template has " + std::to_string(pt.kernel_count) + " kernels, workspace has " +
                        std::to_string(man.kernel_count));
    const CandidateIndex index(pt, grouping(cfg));
    const auto ids = select(man, cfg.attack_first, cfg.attack_count);
    if (ids.empty())
        throw ConfigError("no simulated images in the attack range");
    ws.make("template");
    std::ofstream summary = open_out(ws.root / "template" / "summary.csv");
    summary << "id,cycles,empty_cycles,mean_candidates,sigma,restarts,start_cycle,interpolated_pixels\n";
    for (const ManifestImage &mi : ids) {
        const auto schedules = load_schedules(ws, mi.id, man.kernel_count);
        if (schedules.size() != 1)
            throw TemplateBuildError("per-kernel schedules differ (random scheduling); cannot assemble "
                                     "power feature vectors");
        const CycleSchedule &s = schedules.front();
        const auto sets = generate_candidates(index, valid_powers(ws, mi.id, schedules, man.kernel_count));

        std::ofstream cand = open_out(ws.root / "template" / ("candidates_i" + std::to_string(mi.id) + ".csv"));
        cand << "cycle,x,y,candidates";
        for (std::size_t m = 0; m < index.group_count(); ++m)
            cand << ",group_" << m;
        cand << '\n';
        double total = 0.0;
        for (const CandidateSet &cs : sets) {
            cand << cs.cycle << ',' << s.origin_x[cs.cycle] << ',' << s.origin_y[cs.cycle] << ',' << cs.ids.size();
            for (std::size_t g : cs.group_sizes)
                cand << ',' << g;
            cand << '\n';
            total += static_cast<double>(cs.ids.size());
        }

        ReconstructConfig rc;
        rc.max_restarts = cfg.max_restarts;
        rc.seed = detail::mix_seed(cfg.seed ^ 0x7265636f6eULL, mi.id);
        try {
            const Reconstruction r = reconstruct(index, sets, s, rc);
            write_pgm(r.image, ws.recon(mi.id));
            write_pgm(average_baseline(index, sets, s), ws.average(mi.id));
            summary << mi.id << ',' << sets.size() << ',' << r.empty_cycles << ','
                    << total / static_cast<double>(sets.size()) << ',' << r.selector.sigma << ','
                    << r.selector.restarts << ',' << r.selector.start_cycle << ',' << r.interpolated_pixels << '\n';
        } catch (const ReconstructionError &e) {
            warn("image " + std::to_string(mi.id) + ": " + e.what());
            summary << mi.id << ',' << sets.size() << ',' << sets.size() << ",0,,,,\n";
        }
    }
    std::printf("template attack: %zu image(s), delta %g, %zu group(s), max_restarts %zu\n", ids.size(),
                index.config().delta, index.group_count(), cfg.max_restarts);
    return 0;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const Options &o) {
    const RunConfig cfg = load_config(o);
    const Workspace ws{cfg.out};
    const Manifest man = read_manifest(ws);
    ws.make("eval");
    const bool labelled = std::all_of(man.images.begin(), man.images.end(),
                                      [](const ManifestImage &mi) { return mi.label.has_value(); });
    if (!labelled)
        warn("golden labels missing; only label-free metrics are reported");
    std::optional<KnnClassifier> knn_bw, knn_gray;
    if (labelled) {
        knn_bw = reference_classifier(cfg, true);
        knn_gray = reference_classifier(cfg, false);
    }

    EvalReport clean, bg, alg2, avg;
    clean.metric_name = "pixel_distance";
    bg.metric_name = "pixel_accuracy";
    alg2.metric_name = avg.metric_name = "pixel_distance";
    std::vector<Image> panel_gold, panel_bg, panel_alg2;
    for (const ManifestImage &mi : man.images) {
        const Image golden = load_pgm(ws.golden(mi.id));
        auto row = [&](double metric, const std::optional<KnnClassifier> &knn, const Image &img) {
            EvalRow r;
            r.id = std::to_string(mi.id);
            r.golden_label = mi.label;
            r.metric = metric;
            if (knn)
                r.predicted = knn->predict(img);
            return r;
        };
        clean.rows.push_back(row(0.0, knn_gray, golden));
        std::optional<Image> sil, rec;
        if (fs::exists(ws.silhouette(mi.id))) {
            sil = load_pgm(ws.silhouette(mi.id));
            SilhouetteImage markers(sil->width, sil->height, Marker::background);
            for (std::size_t i = 0; i < sil->pixels.size(); ++i)
                markers.markers[i] = sil->pixels[i] ? Marker::foreground : Marker::background;
            bg.rows.push_back(row(pixel_marker_accuracy(markers, golden), knn_bw, *sil));
        }
        if (fs::exists(ws.recon(mi.id))) {
            rec = load_pgm(ws.recon(mi.id));
            alg2.rows.push_back(row(pixel_value_distance(*rec, golden), knn_gray, *rec));
        }
        if (fs::exists(ws.average(mi.id))) {
            const Image a = load_pgm(ws.average(mi.id));
            avg.rows.push_back(row(pixel_value_distance(a, golden), knn_gray, a));
        }
        if (panel_gold.size() < 10 && (sil || rec)) {
            panel_gold.push_back(golden);
            panel_bg.push_back(sil ? *sil : Image(golden.width, golden.height, 128));
            panel_alg2.push_back(rec ? *rec : Image(golden.width, golden.height, 128));
        }
    }

    std::ofstream summary = open_out(ws.root / "eval" / "summary.csv");
    summary << "set,images,mean_metric,metric,recognition\n";
    auto emit = [&](const std::string &name, const EvalReport &rep) {
        if (rep.rows.empty())
            return;
        std::ofstream r = open_out(ws.root / "eval" / (name + "_report.csv"));
        write_report_csv(r, rep);
        std::ofstream d = open_out(ws.root / "eval" / (name + "_per_digit.csv"));
        write_per_class_csv(d, rep);
        summary << name << ',' << rep.rows.size() << ',' << rep.mean_metric() << ',' << rep.metric_name << ',';
        if (rep.has_labels()) {
            std::ofstream m = open_out(ws.root / "eval" / (name + "_map.csv"));
            write_map_csv(m, rep.map());
            summary << rep.recognition();
            std::printf("%-10s %4zu image(s)  %s %.4f  recognition %.4f\n", name.c_str(), rep.rows.size(),
                        rep.metric_name.c_str(), rep.mean_metric(), rep.recognition());
        } else {
            std::printf("%-10s %4zu image(s)  %s %.4f\n", name.c_str(), rep.rows.size(),
                        rep.metric_name.c_str(), rep.mean_metric());
        }
        summary << '\n';
    };
    emit("golden", clean);
    emit("bg", bg);
    emit("alg2", alg2);
    emit("average", avg);

    if (!panel_gold.empty()) {
        std::vector<Image> grid = panel_gold;
        grid.insert(grid.end(), panel_bg.begin(), panel_bg.end());
        grid.insert(grid.end(), panel_alg2.begin(), panel_alg2.end());
        write_pgm(tile_images(grid, panel_gold.size()), ws.root / "eval" / "panel.pgm");
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Power side-channel input recovery on a simulated line-buffer CNN accelerator"};
    app.require_subcommand(1);
    Options opts;

    auto add = [&](const char *name, const char *help) {
        CLI::App *sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", opts.config_file, "key=value config file");
        sub->add_option("--set", opts.overrides, "override a config key (key=value)")->take_all();
        return sub;
    };
    CLI::App *simulate = add("simulate", "simulate accelerator runs and write traces");
    CLI::App *extract = add("extract", "extract per-cycle power from traces");
    extract->add_option("traces", opts.inputs, "trace files (default: every trace in the workspace)");
    CLI::App *attack_bg = add("attack-bg", "background detection attack");
    CLI::App *build = add("build-template", "build a power template from profiling images");
    CLI::App *attack_t = add("attack-template", "template attack and image reconstruction");
    CLI::App *eval = add("eval", "score recovered images");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config_error);
    }

    try {
        if (*simulate)
            return cmd_simulate(opts);
        if (*extract)
            return cmd_extract(opts);
        if (*attack_bg)
            return cmd_attack_bg(opts);
        if (*build)
            return cmd_build_template(opts);
        if (*attack_t)
            return cmd_attack_template(opts);
        if (*eval)
            return cmd_eval(opts);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::data_error);
    }
    return 0;
}
