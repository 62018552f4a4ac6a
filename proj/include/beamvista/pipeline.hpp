#pragma once

// End-to-end stages shared by the command-line tool and the acceptance suite.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "beamvista/config.hpp"
#include "beamvista/dataset.hpp"
#include "beamvista/eval.hpp"
#include "beamvista/nn/model_io.hpp"
#include "beamvista/nn/profile.hpp"
#include "beamvista/nn/train.hpp"
#include "beamvista/pruning.hpp"
#include "beamvista/scene.hpp"

namespace beamvista::pipeline {

using config::RunConfig;
using config::Stage;

// Worker count after the BEAMVISTA_THREADS cap.
inline int capped_threads(int requested) {
    int n = std::max(1, requested);
    if (const char* env = std::getenv("BEAMVISTA_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || cap < 1) throw ConfigError("BEAMVISTA_THREADS must be a positive integer");
        n = std::min<long>(n, cap);
    }
    return n;
}

inline dataset::Dataset generate(const RunConfig& cfg) {
    const auto world = scene::generate_world(cfg.world, cfg.stage_seed(Stage::world));
    const auto trajs =
        scene::generate_trajectories(scene::split_steps(cfg.trajectories.count, cfg.trajectories.total_steps),
                                     cfg.stage_seed(Stage::trajectories), cfg.world.street_x_min, cfg.world.street_x_max);
    auto build = cfg.build;
    build.threads = capped_threads(build.threads);
    return dataset::build_dataset(world, trajs, build, cfg.stage_seed(Stage::dataset));
}

inline dataset::Split make_split(const dataset::Dataset& ds, dataset::Scenario scenario, const RunConfig& cfg) {
    const auto idx = dataset::filter_scenario(ds, scenario);
    if (idx.size() < 2) throw DataError("scenario " + std::string(dataset::to_string(scenario)) + " has fewer than 2 samples");
    const auto seed = cfg.stage_seed(Stage::split);
    return cfg.data.split_by_trajectory ? dataset::split_by_trajectory(ds, idx, cfg.data.split_ratio, seed)
                                        : dataset::split_indices(idx, cfg.data.split_ratio, seed);
}

inline nn::TrainConfig train_config(const RunConfig& cfg) {
    auto t = cfg.train;
    t.seed = cfg.stage_seed(Stage::train);
    t.threads = capped_threads(t.threads);
    return t;
}

inline nlohmann::json train_config_json(const nn::TrainConfig& t) {
    return {{"batch_size", t.batch_size},      {"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay},
            {"lr_decay_epochs", t.lr_decay_epochs}, {"lr_factor", t.lr_factor}, {"epochs", t.epochs}};
}

struct TrainOutcome {
    nn::Model model;
    nn::TrainResult result;
    dataset::Split split;
};

inline void check_beams(const dataset::Dataset& ds, const RunConfig& cfg) {
    if (ds.manifest.num_beams != cfg.num_beams())
        throw ConfigError("dataset has Q = " + std::to_string(ds.manifest.num_beams) + " but the config has Q = " +
                          std::to_string(cfg.num_beams()));
    if (ds.manifest.width != cfg.render.width || ds.manifest.height != cfg.render.height)
        throw ConfigError("dataset image size does not match the render config");
}

inline TrainOutcome train_on(const dataset::Dataset& ds, const std::vector<std::size_t>& train_idx,
                             const dataset::Split& split, const RunConfig& cfg, const nn::EpochCallback& on_epoch = {}) {
    check_beams(ds, cfg);
    TrainOutcome out;
    out.split = split;
    out.model.norm = nn::compute_normalization(ds, train_idx);
    out.model.net = nn::make_dronenet<float>(cfg.model, cfg.stage_seed(Stage::init));
    out.result = nn::train(out.model.net, ds, train_idx, split.val, train_config(cfg), out.model.norm, on_epoch);
    return out;
}

inline TrainOutcome train(const dataset::Dataset& ds, dataset::Scenario scenario, const RunConfig& cfg,
                          const nn::EpochCallback& on_epoch = {}) {
    const auto split = make_split(ds, scenario, cfg);
    auto out = train_on(ds, split.train, split, cfg, on_epoch);
    out.model.meta = {{"scenario", dataset::to_string(scenario)},
                      {"seed", *cfg.seed},
                      {"split_ratio", cfg.data.split_ratio},
                      {"split_by_trajectory", cfg.data.split_by_trajectory},
                      {"num_beams", cfg.num_beams()},
                      {"dataset_hash", ds.manifest.content_hash},
                      {"train_samples", split.train.size()},
                      {"val_samples", split.val.size()},
                      {"best_epoch", out.result.best_epoch},
                      {"train", train_config_json(cfg.train)}};
    return out;
}

inline std::string history_csv(const std::vector<nn::EpochRecord>& h) {
    std::ostringstream s;
    s.precision(10);
    s << "epoch,learning_rate,train_loss,val_top1,val_top2,val_top3,seconds\n";
    for (const auto& r : h)
        s << r.epoch << ',' << r.learning_rate << ',' << r.train_loss << ',' << eval::opt_csv(r.val_top1) << ','
          << eval::opt_csv(r.val_top2) << ',' << eval::opt_csv(r.val_top3) << ',' << r.seconds << '\n';
    return s.str();
}

// Rebuilds the training split recorded in a model when it was trained on
// this dataset; otherwise every sample of the scenario is evaluation data.
inline dataset::Split recover_split(const nn::Model& m, const dataset::Dataset& ds, dataset::Scenario scenario,
                                    bool* matched = nullptr) {
    const auto& meta = m.meta;
    const bool same = meta.value("dataset_hash", std::string()) == ds.manifest.content_hash &&
                      meta.value("scenario", std::string()) == dataset::to_string(scenario) && meta.contains("seed");
    if (matched) *matched = same;
    if (!same) return {{}, dataset::filter_scenario(ds, scenario), 0.0};
    RunConfig c;
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.data.split_ratio = meta.value("split_ratio", 0.7);
    c.data.split_by_trajectory = meta.value("split_by_trajectory", false);
    return make_split(ds, scenario, c);
}

inline eval::Ranked rank(nn::Model& m, const dataset::Dataset& ds, const std::vector<std::size_t>& idx, int k) {
    return nn::predict_topk(m.net, ds, std::span<const std::size_t>(idx), m.norm, k);
}

inline eval::MetricsReport evaluate(nn::Model& m, const dataset::Dataset& ds, const std::vector<std::size_t>& idx,
                                    const RunConfig& cfg) {
    const int q = m.net.num_classes();
    if (q != ds.manifest.num_beams)
        throw ConfigError("model has " + std::to_string(q) + " outputs but the dataset has Q = " +
                          std::to_string(ds.manifest.num_beams));
    if (idx.empty()) throw DataError("no samples to evaluate");
    const int kmax = *std::max_element(cfg.eval.ks.begin(), cfg.eval.ks.end());
    const auto preds = rank(m, ds, idx, std::max(kmax, 1));
    const auto labels = nn::gather_labels(ds, std::span<const std::size_t>(idx));
    const auto ranges = cfg.eval.ranges.empty() ? eval::default_ranges(q) : cfg.eval.ranges;
    return eval::evaluate(preds, labels, q, cfg.eval.ks, ranges, cfg.eval.locality_window);
}

inline double top1(nn::Model& m, const dataset::Dataset& ds, const std::vector<std::size_t>& idx) {
    const auto preds = rank(m, ds, idx, 1);
    return eval::topk_accuracy(preds, nn::gather_labels(ds, std::span<const std::size_t>(idx)), 1);
}

inline double top3(nn::Model& m, const dataset::Dataset& ds, const std::vector<std::size_t>& idx) {
    const auto preds = rank(m, ds, idx, 3);
    return eval::topk_accuracy(preds, nn::gather_labels(ds, std::span<const std::size_t>(idx)), 3);
}

// Fresh network per fraction, same init and shuffle seeds, scored on the
// full validation split.
inline std::vector<eval::SweepRow> sweep(const dataset::Dataset& ds, dataset::Scenario scenario, const RunConfig& cfg,
                                         const std::vector<double>& fractions,
                                         const std::function<void(double, const nn::EpochRecord&)>& on_epoch = {}) {
    const auto split = make_split(ds, scenario, cfg);
    return eval::data_fraction_sweep(fractions, [&](double f) {
        const auto sub = dataset::subsample(split.train, f, cfg.stage_seed(Stage::sweep));
        if (sub.empty()) throw DataError("fraction " + std::to_string(f) + " leaves no training samples");
        auto out = train_on(ds, sub, split, cfg, [&](const nn::EpochRecord& r) {
            if (on_epoch) on_epoch(f, r);
        });
        return std::make_tuple(top1(out.model, ds, split.val), top3(out.model, ds, split.val), sub.size());
    });
}

struct PruneRow {
    double ratio = 0;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    double top1 = 0;
};

inline std::string pruning_csv(const std::vector<PruneRow>& rows, const std::vector<pruning::BenchReport>& bench = {}) {
    std::ostringstream s;
    s.precision(10);
    s << "ratio,params,flops,top1";
    std::vector<int> sizes;
    if (!bench.empty())
        for (const auto& r : bench.front().rows) {
            sizes.push_back(r.batch_size);
            s << ",ms_per_image_batch" << r.batch_size;
        }
    s << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s << rows[i].ratio << ',' << rows[i].params << ',' << rows[i].flops << ',' << rows[i].top1;
        if (i < bench.size())
            for (const auto& r : bench[i].rows) s << ',' << r.median_ms_per_image;
        s << '\n';
    }
    return s.str();
}

struct PruneOutcome {
    nn::Model model;
    nn::TrainResult finetune;
    PruneRow before;
    PruneRow after;
};

inline PruneOutcome prune(nn::Model& base, const dataset::Dataset& ds, const dataset::Split& split,
                          const RunConfig& cfg, const nn::EpochCallback& on_epoch = {}) {
    if (split.train.empty() || split.val.empty()) throw DataError("pruning needs the training and validation split");
    PruneOutcome out;
    auto pcfg = cfg.prune;
    pcfg.seed = cfg.stage_seed(Stage::prune);
    out.before = {0.0, nn::count_params(base.net), nn::count_flops(base.net), top1(base, ds, split.val)};
    out.model.norm = base.norm;
    out.model.meta = base.meta;
    out.model.net = pruning::prune(base.net, pcfg);
    auto tcfg = train_config(cfg);
    out.finetune = pruning::finetune(out.model.net, ds, split.train, split.val, pcfg, tcfg, base.norm, on_epoch);
    out.model.meta["pruned"] = {{"ratio", pcfg.ratio},
                                {"policy", pruning::to_string(pcfg.policy)},
                                {"finetune_epochs", pcfg.finetune_epochs},
                                {"finetune_lr", pcfg.finetune_lr}};
    out.after = {pcfg.ratio, nn::count_params(out.model.net), nn::count_flops(out.model.net),
                 top1(out.model, ds, split.val)};
    return out;
}

}  // namespace beamvista::pipeline
