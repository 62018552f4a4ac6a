// Acceptance run. Prints one PASS/FAIL line per numbered check and exits
// nonzero when any selected check fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "beamvista/config.hpp"
#include "beamvista/nn/gradcheck.hpp"
#include "beamvista/nn/model_io.hpp"
#include "beamvista/pipeline.hpp"
#include "beamvista/wireless.hpp"

namespace fs = std::filesystem;
using namespace beamvista;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << std::fixed << v;
    return s.str();
}

std::string sci(double v) {
    std::ostringstream s;
    s.precision(2);
    s << std::scientific << v;
    return s.str();
}

std::ostream& progress() { return std::cerr << "  .. "; }

// 1 ------------------------------------------------------------------------

Outcome beam_oracle() {
    const auto t0 = Clock::now();
    wireless::UlaConfig ula;
    wireless::OfdmConfig ofdm;
    const wireless::TxConfig tx;
    const auto cb = wireless::build_codebook(ula, 64);
    Rng rng(derive_seed(2024, {1}));
    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
        const int q = static_cast<int>(rng.below(64));
        const double mag = rng.uniform(0.01, 10.0), phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const int delay = static_cast<int>(rng.below(ofdm.cyclic_prefix + 1));
        const auto ch = wireless::channel_from_paths({{std::polar(mag, phase), cb.grid[q], delay}}, ula, ofdm);
        if (wireless::optimal_beam(ch, cb, tx).index == q) ++hits;
    }
    const double t = seconds_since(t0);
    return {hits == 1000 && t < 5.0, std::to_string(hits) + "/1000 matched in " + fmt(t, 2) + " s (limit 5 s)"};
}

// 2, 3 ---------------------------------------------------------------------

wireless::Channel random_multipath(Rng& rng, const wireless::UlaConfig& ula, const wireless::OfdmConfig& ofdm) {
    std::vector<wireless::Path> paths(1 + rng.below(5));
    for (auto& p : paths) {
        p.gain = {rng.normal(), rng.normal()};
        p.direction_cosine = rng.uniform(-1.0, 1.0);
        p.delay = static_cast<int>(rng.below(ofdm.cyclic_prefix + 1));
    }
    return wireless::channel_from_paths(paths, ula, ofdm);
}

Outcome energy_conservation() {
    wireless::UlaConfig ula;
    wireless::OfdmConfig ofdm;
    const auto cb = wireless::build_codebook(ula, ula.num_antennas);
    Rng rng(derive_seed(2024, {2}));
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const auto ch = random_multipath(rng, ula, ofdm);
        wireless::TxConfig tx{rng.uniform(0.1, 10.0), rng.uniform(0.01, 10.0)};
        double total = 0;
        for (int q = 0; q < cb.size(); ++q) total += wireless::receive_gain(ch, cb.beam(q), tx);
        double energy = 0;
        for (int k = 0; k < ch.num_subcarriers(); ++k) energy += ch.h.row(k).squaredNorm();
        const double expect = tx.snr() / ch.num_subcarriers() * energy;
        worst = std::max(worst, std::abs(total - expect) / expect);
    }
    return {worst < 1e-9, "max relative error " + sci(worst) + " over 100 channels (limit 1e-9)"};
}

Outcome snr_invariance() {
    wireless::UlaConfig ula;
    wireless::OfdmConfig ofdm;
    const auto cb = wireless::build_codebook(ula, 64);
    Rng rng(derive_seed(2024, {3}));
    const std::vector<wireless::TxConfig> txs{{1.0, 10.0}, {1.0, 1.0}, {1.0, 0.01}};
    int same = 0;
    for (int i = 0; i < 100; ++i) {
        const auto ch = random_multipath(rng, ula, ofdm);
        const int ref = wireless::optimal_beam(ch, cb, txs[0]).index;
        bool ok = true;
        for (const auto& tx : txs) ok = ok && wireless::optimal_beam(ch, cb, tx).index == ref;
        same += ok;
    }
    return {same == 100, std::to_string(same) + "/100 channels keep the same index at SNR 0.1, 1, 100"};
}

// 4 ------------------------------------------------------------------------

Outcome gradient_check() {
    using namespace nn;
    const auto t0 = Clock::now();
    Rng rng(derive_seed(2024, {4}));
    auto input = [&](Shape s) {
        Tensor<double> x(std::move(s));
        for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
        return x;
    };
    auto randomize = [&](std::vector<ParamView<double>> ps) {
        for (auto& p : ps)
            for (auto& v : p.value) v = rng.uniform(-0.5, 0.5);
    };
    std::vector<std::pair<std::string, double>> errs;
    std::size_t checked = 0, kinks = 0;
    auto add = [&](std::string name, const GradCheckResult& r) {
        errs.emplace_back(std::move(name), r.max_rel_error);
        checked += r.checked;
        kinks += r.kinks;
    };
    {
        Conv2d<double> c(3, 4, 3, 2, 1);
        std::vector<ParamView<double>> ps;
        c.params(ps);
        randomize(ps);
        add("conv", check_gradients(c, input({2, 3, 7, 7}), 1));
    }
    {
        Relu<double> r;
        auto x = input({2, 3, 5, 5});
        for (auto& v : x.data) v = (v < 0 ? -1 : 1) * (0.05 + std::abs(v));
        add("relu", check_gradients(r, x, 2));
    }
    {
        MaxPool2d<double> m(2, 2);
        add("maxpool", check_gradients(m, input({2, 3, 6, 6}), 3));
    }
    {
        GlobalAvgPool<double> g;
        add("gap", check_gradients(g, input({2, 3, 5, 5}), 4));
    }
    {
        FullyConnected<double> f(48, 6);
        std::vector<ParamView<double>> ps;
        f.params(ps);
        randomize(ps);
        add("fc", check_gradients(f, input({2, 3, 4, 4}), 5));
    }
    {
        ResidualBlock<double> b(3);
        std::vector<ParamView<double>> ps;
        b.params(ps);
        randomize(ps);
        add("residual", check_gradients(b, input({2, 3, 5, 5}), 6));
    }
    for (auto head : {Head::flatten, Head::global_avg_pool})
        for (auto stem : {Stem::strided, Stem::pooled}) {
            DroneNetConfig dc;
            dc.num_beams = 8;
            dc.height = dc.width = 16;
            dc.head = head;
            dc.stem = stem;
            auto net = make_dronenet<double>(dc, 7);
            std::get<Conv2d<double>>(net.layers.front()).input_grad = true;
            GradCheckOptions opt;
            opt.max_per_tensor = 400;
            const auto r = check_gradients(net, input({2, 3, 16, 16}), 8, opt);
            add(std::string("dronenet-") + (head == Head::flatten ? "flatten" : "gap") +
                    (stem == Stem::strided ? "-strided" : "-pooled"),
                r);
        }
    const double t = seconds_since(t0);
    double worst = 0;
    std::string which;
    for (const auto& [n, e] : errs)
        if (e >= worst) {
            worst = e;
            which = n;
        }
    const bool ok = worst < 1e-4 && t < 120.0 && kinks * 100 <= checked;
    return {ok, "max relative error " + sci(worst) + " (" + which + ") over " + std::to_string(checked) +
                    " elements in " + std::to_string(errs.size()) + " checks, " + std::to_string(kinks) +
                    " kink points skipped, " + fmt(t, 1) + " s (limits 1e-4, 1% kinks, 120 s)"};
}

// 5-8, 10 share one generated dataset and one trained model ----------------

struct MainRun {
    config::RunConfig cfg;
    dataset::Dataset ds;
    dataset::Split split;
    nn::Model model;
    nn::TrainResult result;
    double gen_seconds = 0;
    double train_seconds = 0;
    eval::MetricsReport report;
};

nn::EpochCallback epoch_log() {
    return [](const nn::EpochRecord& r) {
        progress() << "epoch " << r.epoch << " loss " << fmt(r.train_loss) << " val top1 "
                   << (r.val_top1 ? fmt(*r.val_top1) : "-") << " (" << fmt(r.seconds, 1) << " s)\n";
    };
}

MainRun main_run(const config::RunConfig& base, const fs::path& work) {
    MainRun m;
    m.cfg = base;
    auto t0 = Clock::now();
    progress() << "generating dataset\n";
    m.ds = pipeline::generate(m.cfg);
    m.gen_seconds = seconds_since(t0);
    dataset::save_dataset(m.ds, work / "main.vwdr");
    progress() << m.ds.size() << " samples in " << fmt(m.gen_seconds, 1) << " s\n";
    t0 = Clock::now();
    auto out = pipeline::train(m.ds, dataset::Scenario::combined, m.cfg, epoch_log());
    m.train_seconds = seconds_since(t0);
    m.model = std::move(out.model);
    m.result = std::move(out.result);
    m.split = std::move(out.split);
    nn::save_model(m.model, work / "main.vwnn");
    m.report = pipeline::evaluate(m.model, m.ds, m.split.val, m.cfg);
    return m;
}

double topk_of(const eval::MetricsReport& r, int k) {
    for (std::size_t i = 0; i < r.ks.size(); ++i)
        if (r.ks[i] == k) return r.topk[i];
    throw ConfigError("k = " + std::to_string(k) + " not evaluated");
}

Outcome end_to_end(MainRun& m) {
    const double t1 = topk_of(m.report, 1), t3 = topk_of(m.report, 3);
    const double minutes = (m.gen_seconds + m.train_seconds) / 60.0;
    const bool ok = m.ds.size() >= 5000 && t1 >= 0.80 && t3 >= 0.95 && minutes <= 45.0;
    return {ok, std::to_string(m.ds.size()) + " samples, batch " + std::to_string(m.cfg.train.batch_size) +
                    ", val top-1 " + fmt(t1) + " top-3 " + fmt(t3) + ", " + fmt(minutes, 1) +
                    " min (limits >= 5000, 0.80, 0.95, 45 min)"};
}

Outcome locality(MainRun& m) {
    if (!m.report.locality) return {true, "no top-1 errors"};
    return {*m.report.locality >= 0.85,
            fmt(*m.report.locality) + " of top-1 errors within 3 beams (limit 0.85)"};
}

Outcome fraction_sweep(MainRun& m) {
    // fraction 1.0 is the main run: identity subsample, same seeds
    std::vector<std::pair<double, double>> rows;
    for (double f : {0.1, 0.5}) {
        progress() << "training on fraction " << f << '\n';
        const auto sub = dataset::subsample(m.split.train, f, m.cfg.stage_seed(config::Stage::sweep));
        auto out = pipeline::train_on(m.ds, sub, m.split, m.cfg, epoch_log());
        rows.emplace_back(f, pipeline::top1(out.model, m.ds, m.split.val));
    }
    const double f01 = rows[0].second, f05 = rows[1].second, f10 = topk_of(m.report, 1);
    const bool ok = f05 >= f10 - 0.08 && f10 >= f01 - 0.02;
    return {ok, "top-1 at 0.1/0.5/1.0 = " + fmt(f01) + "/" + fmt(f05) + "/" + fmt(f10) +
                    " (need 0.5 >= 1.0 - 0.08 and 1.0 >= 0.1 - 0.02)"};
}

Outcome pruning_check(MainRun& m, const fs::path& work) {
    auto cfg = m.cfg;
    cfg.prune.ratio = 0.5;
    cfg.prune.finetune_epochs = 10;
    progress() << "pruning r = 0.5, policy " << pruning::to_string(cfg.prune.policy) << '\n';
    auto out = pipeline::prune(m.model, m.ds, m.split, cfg, epoch_log());
    nn::save_model(out.model, work / "pruned.vwnn");
    const double cut = 1.0 - double(out.after.flops) / double(out.before.flops);
    const auto trials = std::max(30, cfg.eval.bench_trials);
    progress() << "benchmarking\n";
    const auto base = pruning::benchmark_latency(m.model.net, {1, 10}, trials);
    const auto pruned = pruning::benchmark_latency(out.model.net, {1, 10}, trials);
    const double b1 = base.rows[0].median_ms_per_image, b10 = base.rows[1].median_ms_per_image;
    const double p1 = pruned.rows[0].median_ms_per_image, p10 = pruned.rows[1].median_ms_per_image;
    const bool acc = out.after.top1 >= out.before.top1 - 0.03;
    std::string missed;
    auto need = [&](bool cond, const char* what) {
        if (!cond) missed += std::string(missed.empty() ? "; missed: " : ", ") + what;
    };
    need(acc, "accuracy drop <= 0.03");
    need(cut >= 0.5, "FLOPs cut >= 0.5");
    need(p1 <= b1 && p10 <= b10, "pruned <= baseline latency");
    need(b10 <= b1, "baseline b10 <= b1");
    need(p10 <= p1, "pruned b10 <= b1");
    return {missed.empty(), "top-1 " + fmt(out.before.top1) + " -> " + fmt(out.after.top1) + ", FLOPs cut " +
                                fmt(cut, 3) + ", ms/image b1 " + fmt(b1, 3) + " -> " + fmt(p1, 3) + ", b10 " +
                                fmt(b10, 3) + " -> " + fmt(p10, 3) + missed};
}

// 9 ------------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const config::RunConfig& base, const fs::path& work, bool reduced) {
    auto cfg = base;
    if (reduced) {
        cfg.trajectories = {4, 600};
        cfg.train.epochs = 3;
        cfg.train.lr_decay_epochs = {2};
    }
    std::vector<std::string> hashes, blobs, model_files;
    for (int run = 0; run < 2; ++run) {
        auto c = cfg;
        c.resolve_seed(std::nullopt, true);
        progress() << "deterministic run " << run + 1 << '\n';
        const fs::path data = work / ("det" + std::to_string(run) + ".vwdr");
        const fs::path model = work / ("det" + std::to_string(run) + ".vwnn");
        auto generated = pipeline::generate(c);
        dataset::save_dataset(generated, data);
        const auto ds = dataset::load_dataset(data);
        auto out = pipeline::train(ds, dataset::Scenario::combined, c);
        nn::save_model(out.model, model);
        hashes.push_back(ds.manifest.content_hash);
        auto reloaded = nn::load_model(model);
        const auto blob = nn::parameter_blob(reloaded.net);
        blobs.emplace_back(blob.begin(), blob.end());
        model_files.push_back(file_bytes(model));
    }
    const bool ok = hashes[0] == hashes[1] && blobs[0] == blobs[1] && model_files[0] == model_files[1];
    return {ok, std::string(reduced ? "reduced" : "full") + " config, dataset hash " + hashes[0].substr(0, 12) +
                    (hashes[0] == hashes[1] ? " equal" : " DIFFERS") + ", parameter blobs " +
                    (blobs[0] == blobs[1] ? "equal" : "DIFFER") + " (" + std::to_string(blobs[0].size()) + " bytes)"};
}

// 10 -----------------------------------------------------------------------

Outcome format_robustness(MainRun& m, const fs::path& work) {
    const auto path = work / "main.vwdr";
    const auto bytes = dataset::encode(m.ds);
    auto back = dataset::load_dataset(path);
    bool exact = dataset::encode(back) == bytes && back.samples.size() == m.ds.samples.size();
    for (std::size_t i = 0; exact && i < back.samples.size(); ++i)
        exact = back.samples[i].pixels == m.ds.samples[i].pixels && back.samples[i].label == m.ds.samples[i].label;
    Rng rng(derive_seed(2024, {10}));
    int detected = 0;
    for (int i = 0; i < 100; ++i) {
        auto bad = bytes;
        const auto pos = static_cast<std::size_t>(rng.below(bad.size()));
        bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
        try {
            dataset::decode(bad);
        } catch (const CorruptionError&) {
            ++detected;
        } catch (const Error&) {
        }
    }
    return {exact && detected == 100, std::string("round trip ") + (exact ? "bit-exact" : "NOT exact") + ", " +
                                          std::to_string(detected) + "/100 single-byte corruptions detected by hash"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string work_dir = "acceptance_work", config_path, only;
    std::uint64_t seed = 2024;
    bool full_determinism = false;
    app.add_option("--work-dir", work_dir, "Scratch directory for generated files");
    app.add_option("--config", config_path, "Run configuration (default: built-in defaults)");
    app.add_option("--seed", seed, "Base seed for the main run");
    app.add_option("--only", only, "Comma-separated check numbers to run");
    app.add_flag("--full-determinism", full_determinism, "Repeat the full-size run for check 9");
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected;
    if (only.empty())
        for (int i = 1; i <= 10; ++i) selected.insert(i);
    else {
        std::stringstream ss(only);
        for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
    }

    const fs::path work(work_dir);
    fs::create_directories(work);
    config::RunConfig cfg;
    try {
        cfg = config_path.empty() ? config::defaults() : config::load(config_path);
        cfg.seed = seed;
    } catch (const Error& e) {
        std::cerr << "config: " << e.what() << '\n';
        return 2;
    }

    const char* names[] = {"",
                           "beam oracle",
                           "energy conservation",
                           "SNR argmax invariance",
                           "gradient check",
                           "end-to-end accuracy",
                           "error locality",
                           "data-fraction sweep",
                           "pruning",
                           "determinism",
                           "format robustness"};
    nlohmann::json summary = nlohmann::json::object();
    int failures = 0;
    auto run = [&](int n, const std::function<Outcome()>& fn) {
        if (!selected.count(n)) return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << "criterion " << (n < 10 ? " " : "") << n << (o.pass ? "  PASS  " : "  FAIL  ") << names[n] << ": "
                  << o.detail << std::endl;
        summary[std::to_string(n)] = {{"name", names[n]}, {"pass", o.pass}, {"detail", o.detail}};
    };

    run(1, beam_oracle);
    run(2, energy_conservation);
    run(3, snr_invariance);
    run(4, gradient_check);

    std::optional<MainRun> m;
    const bool need_main = selected.count(5) || selected.count(6) || selected.count(7) || selected.count(8) ||
                           selected.count(10);
    if (need_main) {
        try {
            m = main_run(cfg, work);
        } catch (const std::exception& e) {
            std::cerr << "main run failed: " << e.what() << '\n';
        }
    }
    auto with_main = [&](const std::function<Outcome(MainRun&)>& fn) {
        return [&, fn] {
            if (!m) return Outcome{false, "main run did not complete"};
            return fn(*m);
        };
    };
    run(5, with_main(end_to_end));
    run(6, with_main(locality));
    run(7, with_main(fraction_sweep));
    run(8, with_main([&](MainRun& r) { return pruning_check(r, work); }));
    run(9, [&] { return determinism(cfg, work, !full_determinism); });
    run(10, with_main([&](MainRun& r) { return format_robustness(r, work); }));

    binio::write_text_atomic(work / "acceptance.json", summary.dump(2) + "\n");
    std::cout << (failures ? std::to_string(failures) + " check(s) failed" : std::string("all checks passed"))
              << std::endl;
    return failures ? 1 : 0;
}
