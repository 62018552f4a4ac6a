// beamvista command-line tool: generate, train, eval, prune, bench, sweep.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "beamvista/binio.hpp"
#include "beamvista/config.hpp"
#include "beamvista/error.hpp"
#include "beamvista/pipeline.hpp"

namespace fs = std::filesystem;
using namespace beamvista;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    bool quiet = false;
};

config::RunConfig load_config(const Common& c) {
    auto cfg = c.config_path.empty() ? config::defaults() : config::load(c.config_path);
    cfg.resolve_seed(c.seed, c.deterministic);
    return cfg;
}

void log(const Common& c, const std::string& msg) {
    if (!c.quiet) std::cerr << msg << '\n';
}

nn::EpochCallback epoch_logger(const Common& c) {
    return [&c](const nn::EpochRecord& r) {
        if (c.quiet) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %2d  lr %.1e  loss %.4f  val top1 %s  (%.1fs)", r.epoch, r.learning_rate,
                      r.train_loss, r.val_top1 ? std::to_string(*r.val_top1).c_str() : "-", r.seconds);
        std::cerr << buf << '\n';
    };
}

void write_json(const fs::path& p, const nlohmann::json& j) { binio::write_text_atomic(p, j.dump(2) + "\n"); }

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("bad number '" + tok + "'");
        }
    }
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (double d : parse_doubles(s)) {
        if (d != static_cast<int>(d)) throw ConfigError("expected an integer list, got '" + s + "'");
        out.push_back(static_cast<int>(d));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vision-aided beam prediction toolkit"};
    app.require_subcommand(1);
    Common common;
    app.add_flag("-q,--quiet", common.quiet, "Suppress progress output");

    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config) sub->add_option("--config", common.config_path, "TOML run configuration");
        sub->add_option("--seed", common.seed, "Base seed, overrides the config");
        sub->add_flag("--deterministic", common.deterministic, "Single-threaded, seed required");
    };

    // generate
    std::string out_path;
    auto* gen = app.add_subcommand("generate", "Build a dataset file and its manifest");
    add_common(gen);
    gen->add_option("--out", out_path, "Dataset file")->required();

    // train
    std::string data_path, model_path, scenario_name = "combined";
    auto* trn = app.add_subcommand("train", "Train a beam classifier");
    add_common(trn);
    trn->add_option("--data", data_path, "Dataset file")->required();
    trn->add_option("--scenario", scenario_name, "bs1, bs2 or combined")
        ->check(CLI::IsMember({"bs1", "bs2", "combined"}));
    trn->add_option("--out-model", model_path, "Model file")->required();

    // eval
    std::string in_model, out_dir;
    auto* evl = app.add_subcommand("eval", "Score a model and write metric reports");
    add_common(evl);
    evl->add_option("--model", in_model, "Model file")->required();
    evl->add_option("--data", data_path, "Dataset file")->required();
    evl->add_option("--scenario", scenario_name, "bs1, bs2 or combined")
        ->check(CLI::IsMember({"bs1", "bs2", "combined"}));
    evl->add_option("--out-dir", out_dir, "Report directory")->required();

    // prune
    std::optional<double> ratio;
    std::optional<int> ft_epochs;
    auto* prn = app.add_subcommand("prune", "Prune filters, fine-tune and compare");
    add_common(prn);
    prn->add_option("--model", in_model, "Model file")->required();
    prn->add_option("--data", data_path, "Dataset the model was trained on")->required();
    prn->add_option("--ratio", ratio, "Fraction of filters removed per layer");
    prn->add_option("--finetune-epochs", ft_epochs, "Fine-tuning epochs");
    prn->add_option("--out-model", model_path, "Pruned model file")->required();
    std::string row_path;
    prn->add_option("--out-row", row_path, "Comparison row JSON (default: <out-model>.json)");

    // bench
    std::string batch_sizes;
    std::optional<int> trials;
    auto* bch = app.add_subcommand("bench", "Latency, FLOPs and parameter count");
    add_common(bch);
    bch->add_option("--model", in_model, "Model file")->required();
    bch->add_option("--batch-sizes", batch_sizes, "Comma-separated batch sizes");
    bch->add_option("--trials", trials, "Timed trials per batch size (>= 30)");
    bch->add_option("--out", out_path, "Report JSON")->required();

    // sweep
    std::string fractions;
    auto* swp = app.add_subcommand("sweep", "Accuracy versus training-set fraction");
    add_common(swp);
    swp->add_option("--data", data_path, "Dataset file (generated from the config when omitted)");
    swp->add_option("--scenario", scenario_name, "bs1, bs2 or combined")
        ->check(CLI::IsMember({"bs1", "bs2", "combined"}));
    swp->add_option("--fractions", fractions, "Comma-separated fractions in (0, 1]");
    swp->add_option("--out", out_path, "Sweep CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        auto cfg = load_config(common);
        const auto scenario = dataset::parse_scenario(scenario_name);

        if (*gen) {
            auto ds = pipeline::generate(cfg);
            dataset::save_dataset(ds, out_path);
            auto manifest = ds.manifest.to_json();
            write_json(fs::path(out_path).string() + ".manifest.json", manifest);
            log(common, "wrote " + std::to_string(ds.size()) + " samples (" + std::to_string(ds.manifest.discarded) +
                            " discarded), content hash " + ds.manifest.content_hash);
            std::cout << manifest.dump(2) << '\n';
        } else if (*trn) {
            const auto ds = dataset::load_dataset(data_path);
            auto out = pipeline::train(ds, scenario, cfg, epoch_logger(common));
            nn::save_model(out.model, model_path);
            const fs::path hist = fs::path(model_path).string() + ".history.csv";
            binio::write_text_atomic(hist, pipeline::history_csv(out.result.history));
            log(common, "scenario " + scenario_name + ": " + std::to_string(out.split.train.size()) + " train / " +
                            std::to_string(out.split.val.size()) + " val samples, best epoch " +
                            std::to_string(out.result.best_epoch));
            std::cout << out.model.meta.dump(2) << '\n';
        } else if (*evl) {
            auto model = nn::load_model(in_model);
            const auto ds = dataset::load_dataset(data_path);
            bool matched = false;
            const auto split = pipeline::recover_split(model, ds, scenario, &matched);
            log(common, matched ? "evaluating on the recorded validation split"
                                : "dataset differs from the training data; evaluating on every scenario sample");
            const auto rep = pipeline::evaluate(model, ds, split.val, cfg);
            const fs::path dir(out_dir);
            auto j = eval::to_json(rep);
            j["scenario"] = scenario_name;
            j["split"] = matched ? "validation" : "all";
            write_json(dir / "metrics.json", j);
            binio::write_text_atomic(dir / "topk.csv", eval::topk_csv(rep));
            binio::write_text_atomic(dir / "confusion.csv", eval::confusion_csv(rep.confusion));
            binio::write_text_atomic(dir / "ranges.csv", eval::ranges_csv(rep.ranges));
            j.erase("confusion");
            std::cout << j.dump(2) << '\n';
        } else if (*prn) {
            auto model = nn::load_model(in_model);
            const auto ds = dataset::load_dataset(data_path);
            if (ratio) cfg.prune.ratio = *ratio;
            if (ft_epochs) cfg.prune.finetune_epochs = *ft_epochs;
            if (common.config_path.empty() && model.meta.contains("train")) {
                const auto& t = model.meta["train"];
                cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
                cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
            }
            try {
                cfg.prune.validate();
            } catch (const InputDomainError& e) {
                throw ConfigError(e.what());
            }
            const auto sc = dataset::parse_scenario(model.meta.value("scenario", scenario_name));
            bool matched = false;
            const auto split = pipeline::recover_split(model, ds, sc, &matched);
            if (!matched) throw DataError("pruning needs the dataset the model was trained on");
            auto out = pipeline::prune(model, ds, split, cfg, epoch_logger(common));
            nn::save_model(out.model, model_path);
            const nlohmann::json row{{"baseline", {{"params", out.before.params}, {"flops", out.before.flops}, {"top1", out.before.top1}}},
                                     {"pruned", {{"ratio", out.after.ratio}, {"params", out.after.params}, {"flops", out.after.flops}, {"top1", out.after.top1}}},
                                     {"flops_reduction", 1.0 - double(out.after.flops) / double(out.before.flops)}};
            write_json(row_path.empty() ? fs::path(model_path).string() + ".json" : row_path, row);
            std::cout << row.dump(2) << '\n';
        } else if (*bch) {
            auto model = nn::load_model(in_model);
            const auto sizes = batch_sizes.empty() ? cfg.eval.bench_batch_sizes : parse_ints(batch_sizes);
            const int n = trials.value_or(cfg.eval.bench_trials);
            auto rep = pruning::benchmark_latency(model.net, sizes, n);
            auto j = rep.to_json();
            if (model.meta.contains("pruned")) j["pruning"] = model.meta["pruned"];
            write_json(out_path, j);
            std::cout << j.dump(2) << '\n';
        } else if (*swp) {
            const auto ds = data_path.empty() ? pipeline::generate(cfg) : dataset::load_dataset(data_path);
            const auto fr = fractions.empty() ? cfg.eval.fractions : parse_doubles(fractions);
            const auto rows = pipeline::sweep(ds, scenario, cfg, fr, [&](double f, const nn::EpochRecord& r) {
                if (!common.quiet && r.epoch + 1 == cfg.train.epochs)
                    std::cerr << "fraction " << f << " done, last val top1 " << r.val_top1.value_or(0) << '\n';
            });
            binio::write_text_atomic(out_path, eval::sweep_csv(rows));
            std::cout << eval::sweep_csv(rows);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return static_cast<int>(ExitCode::io);
    }
    return 0;
}
