#pragma once

// Ablation harness: trains and evaluates named pipeline configurations on
// the synthetic benchmark with shared seeds, and emits the per-track AP
// table plus localization diagnostics. Alpha-sweep and fusion-rule rows
// re-fuse the full configuration's stored scores instead of retraining.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fgovd/eval.hpp"
#include "fgovd/pipeline.hpp"
#include "fgovd/training.hpp"

namespace fgovd::ablation {

struct VariantSpec {
    std::string name;
    bool decomposition = true; // false: full-name embeddings drive detection
    bool aef = true;
    bool projection = true;
};

inline std::vector<VariantSpec> default_variants() {
    return {
        {"full", true, true, true},
        {"no_AEF", true, false, true},
        {"no_CGOD", false, true, true},
        {"no_projection", true, true, false},
    };
}

struct SuiteConfig {
    eval::BenchmarkConfig benchmark;       // evaluation dataset shape
    int train_images_stage1 = 120;
    int train_images_stage2 = 160;
    int iterations_stage1 = 400;
    int iterations_stage2 = 900;
    double learning_rate = 3e-4;
    train::LossWeights weights;
    double alpha = 0.6;
    double m_fine = 100.0;
    cgod::DetectorConfig detector;
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::vector<double> alpha_sweep = {0.2, 0.4, 0.6, 0.8};
    bool run_fusion_average = true;
    std::vector<VariantSpec> variants = default_variants();
};

struct VariantRun {
    std::string variant;
    uint64_t seed = 0;
    eval::APResult ap;
    pipeline::MatchDiagnostics diagnostics;
    bool failed = false;
    std::string failure;
};

struct SuiteResult {
    std::vector<VariantRun> runs; // includes alpha:* and fusion:* rows
    // averaged over seeds, keyed by variant name
    std::map<std::string, double> mean_map;
    std::map<std::string, double> mean_iou;
    std::map<std::string, double> mean_coarse;
};

struct TrainedVariant {
    cgod::DetectorModel model;
    enc::ProjectionHead head;
};

// Train one variant end to end (stage 1 coarse, stage 2 fine).
inline TrainedVariant train_variant(const VariantSpec& variant, const SuiteConfig& cfg,
                                    const synth::DirectionRegistry& registry,
                                    const eval::SyntheticDataset& stage1_ds,
                                    const eval::SyntheticDataset& stage2_ds, uint64_t seed) {
    TrainedVariant tv;
    cgod::DetectorConfig det = cfg.detector;
    det.dim = registry.config().dim;
    det.grid_h = registry.config().grid_h;
    det.grid_w = registry.config().grid_w;
    det.use_aef = variant.aef;
    det.init_seed = derive_seed(seed, "model-init");
    tv.model = cgod::make_detector(det);
    tv.head = enc::ProjectionHead::identity(det.dim);
    tv.head.trainable = variant.projection;

    pipeline::TrainWorld w1 = pipeline::build_train_world(stage1_ds, registry, tv.head, true);
    train::TrainConfig tc1;
    tc1.stage = 1;
    tc1.iterations = cfg.iterations_stage1;
    tc1.learning_rate = cfg.learning_rate;
    tc1.weights = cfg.weights;
    tc1.weights.fine = 0.0;
    tc1.alpha = cfg.alpha;
    tc1.m_fine = cfg.m_fine;
    tc1.seed = derive_seed(seed, "stage1");
    train::train_stage1(tv.model, tv.head, w1.coarse, tc1);

    pipeline::TrainWorld w2 =
        pipeline::build_train_world(stage2_ds, registry, tv.head, variant.decomposition);
    train::TrainConfig tc2 = tc1;
    tc2.stage = 2;
    tc2.iterations = cfg.iterations_stage2;
    tc2.weights = cfg.weights;
    tc2.seed = derive_seed(seed, "stage2");
    train::train_stage2(tv.model, tv.head, w2.fine, tc2);
    return tv;
}

inline eval::BenchmarkConfig with_seed(eval::BenchmarkConfig base, uint64_t world_seed,
                                       uint64_t dataset_seed, int images) {
    base.world.seed = world_seed;
    base.dataset_seed = dataset_seed;
    base.images = images;
    return base;
}

// Full suite: per seed, generate train/eval datasets, train each variant,
// detect and evaluate; then the rescoring rows. A failing variant is
// recorded and the rest proceed.
inline SuiteResult run_ablation(const SuiteConfig& cfg,
                                const std::function<void(const std::string&)>& progress = {}) {
    SuiteResult result;
    std::map<std::string, std::vector<double>> maps, ious, coarses;

    for (uint64_t seed : cfg.seeds) {
        const uint64_t world_seed = derive_seed(seed, "world");
        synth::WorldConfig world = cfg.benchmark.world;
        world.seed = world_seed;
        synth::DirectionRegistry registry(world);

        eval::BenchmarkConfig bench_eval = cfg.benchmark;
        bench_eval.world = world;
        bench_eval.dataset_seed = derive_seed(seed, "eval-data");
        eval::BenchmarkConfig bench_s1 =
            with_seed(bench_eval, world_seed, derive_seed(seed, "s1-data"), cfg.train_images_stage1);
        eval::BenchmarkConfig bench_s2 =
            with_seed(bench_eval, world_seed, derive_seed(seed, "s2-data"), cfg.train_images_stage2);

        eval::SyntheticDataset eval_ds = eval::generate_synthetic_benchmark(bench_eval);
        eval::SyntheticDataset s1_ds = eval::generate_synthetic_benchmark(bench_s1);
        eval::SyntheticDataset s2_ds = eval::generate_synthetic_benchmark(bench_s2);

        std::vector<pipeline::AnnotationPredictions> full_records;
        for (const auto& variant : cfg.variants) {
            VariantRun run;
            run.variant = variant.name;
            run.seed = seed;
            try {
                if (progress)
                    progress("seed " + std::to_string(seed) + ": training " + variant.name);
                TrainedVariant tv = train_variant(variant, cfg, registry, s1_ds, s2_ds, seed);
                pipeline::PipelineOptions opt;
                opt.use_decomposition = variant.decomposition;
                opt.use_projection = variant.projection;
                opt.alpha = cfg.alpha;
                opt.m_fine = cfg.m_fine;
                opt.eval_seed = derive_seed(seed, "eval-order");
                auto records = pipeline::detect_dataset(eval_ds, tv.model, tv.head, registry, opt);
                run.ap = pipeline::evaluate_records(records);
                run.diagnostics = pipeline::match_diagnostics(records);
                if (variant.name == "full") full_records = records;
            } catch (const std::exception& e) {
                run.failed = true;
                run.failure = e.what();
            }
            if (!run.failed) {
                maps[run.variant].push_back(run.ap.average);
                ious[run.variant].push_back(run.diagnostics.mean_iou);
                coarses[run.variant].push_back(run.diagnostics.mean_coarse_score);
            }
            result.runs.push_back(std::move(run));
        }

        if (!full_records.empty()) {
            for (double a : cfg.alpha_sweep) {
                VariantRun run;
                run.variant = "alpha:" + std::to_string(a).substr(0, 3);
                run.seed = seed;
                auto refused =
                    pipeline::refuse_records(full_records, pipeline::FusionMode::multiply, a);
                run.ap = pipeline::evaluate_records(refused);
                run.diagnostics = pipeline::match_diagnostics(refused);
                maps[run.variant].push_back(run.ap.average);
                result.runs.push_back(std::move(run));
            }
            if (cfg.run_fusion_average) {
                VariantRun run;
                run.variant = "fusion:weighted_average";
                run.seed = seed;
                auto refused = pipeline::refuse_records(
                    full_records, pipeline::FusionMode::weighted_average, cfg.alpha);
                run.ap = pipeline::evaluate_records(refused);
                run.diagnostics = pipeline::match_diagnostics(refused);
                maps[run.variant].push_back(run.ap.average);
                result.runs.push_back(std::move(run));
            }
        }
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / v.size();
    };
    for (const auto& [name, v] : maps) result.mean_map[name] = mean(v);
    for (const auto& [name, v] : ious) result.mean_iou[name] = mean(v);
    for (const auto& [name, v] : coarses) result.mean_coarse[name] = mean(v);
    return result;
}

} // namespace fgovd::ablation
