#include <catch_amalgamated.hpp>

#include <cmath>

#include "beamvista/nn/profile.hpp"
#include "beamvista/pruning.hpp"

using namespace beamvista;
using namespace beamvista::nn;
using namespace beamvista::pruning;

namespace {

Network<double> small_net(std::uint64_t seed) {
    Network<double> net;
    net.input_shape = {2, 6, 6};
    net.layers.emplace_back(Conv2d<double>(2, 4, 3, 1, 1));
    net.layers.emplace_back(Relu<double>{});
    net.layers.emplace_back(Conv2d<double>(4, 3, 3, 2, 1));
    net.layers.emplace_back(Relu<double>{});
    net.layers.emplace_back(FullyConnected<double>(27, 5));
    Rng r(seed);
    for (auto& p : net.params())
        for (auto& v : p.value) v = r.uniform(-1, 1);
    return net;
}

Tensor<double> random_batch(Shape s, std::uint64_t seed) {
    Tensor<double> t(std::move(s));
    Rng r(seed);
    for (auto& v : t.data) v = r.uniform(-1, 1);
    return t;
}

long conv(long k, long cin, long cout, long hw) { return 2 * k * k * cin * cout * hw * hw; }

// Each conv's declared input channels equal what its predecessor produces.
template <typename T>
void audit(const Network<T>& net) {
    int ch = net.input_shape[0];
    for (const auto& l : net.layers) {
        if (const auto* c = std::get_if<Conv2d<T>>(&l)) {
            CHECK(c->in_channels == ch);
            ch = c->out_channels;
        } else if (const auto* b = std::get_if<ResidualBlock<T>>(&l)) {
            CHECK(b->conv_a.in_channels == ch);
            CHECK(b->conv_b.in_channels == b->conv_a.out_channels);
            CHECK(b->conv_b.out_channels == ch);
        }
    }
    CHECK_NOTHROW(net.output_shape(3));
}

}  // namespace

TEST_CASE("unit-magnitude filter over two channels scores 18") {
    Network<double> net;
    net.input_shape = {2, 4, 4};
    net.layers.emplace_back(Conv2d<double>(2, 3, 3, 1, 1));
    net.layers.emplace_back(FullyConnected<double>(48, 2));
    auto& c = std::get<Conv2d<double>>(net.layers[0]);
    for (std::size_t i = 0; i < c.weight.size(); ++i) c.weight[i] = (i % 3 == 0) ? -1.0 : 1.0;
    std::fill(c.weight.begin() + 36, c.weight.end(), 0.0);  // filter 2 all zero
    c.bias = {5, 5, 5};
    const auto s = score_filters(net);
    REQUIRE(s.size() == 3);
    CHECK(s[0].score == 18.0);
    CHECK(s[1].score == 18.0);
    CHECK(s[2].score == 0.0);
    PruneConfig pc;
    pc.ratio = 0.34;
    const auto pruned = prune(net, pc);
    const auto& pcv = std::get<Conv2d<double>>(pruned.layers[0]);
    CHECK(pcv.out_channels == 2);
    CHECK(pcv.filter_l1(0) == 18.0);
    CHECK(pcv.filter_l1(1) == 18.0);
}

TEST_CASE("scores match a direct absolute-sum oracle") {
    auto net = make_dronenet<double>(DroneNetConfig{}, 3);
    const auto scores = score_filters(net);
    std::size_t expected = 0;
    for (const auto& g : channel_groups(net)) expected += g.producers.size() * std::size_t(g.channels);
    CHECK(scores.size() == expected);
    for (const auto& s : scores) {
        const auto& c = conv_at(net, {s.layer, s.sub});
        const int n = c.in_channels * c.kernel * c.kernel;
        double sum = 0;
        for (int i = 0; i < n; ++i) sum += std::fabs(c.weight[s.filter * n + i]);
        CHECK(std::abs(s.score - sum) <= 1e-12 * sum);
        CHECK(s.score >= 0);
    }
}

TEST_CASE("ratio zero returns an identical network") {
    auto net = make_dronenet<float>(DroneNetConfig{}, 4);
    PruneConfig pc;
    pc.ratio = 0;
    auto same = prune(net, pc);
    CHECK(same.flat_params() == net.flat_params());
    Tensor<float> x({2, 3, 64, 64});
    Rng r(5);
    for (auto& v : x.data) v = static_cast<float>(r.uniform(-1, 1));
    CHECK(same.forward(x).data == net.forward(x).data);
}

TEST_CASE("removing a dead filter leaves outputs unchanged") {
    auto net = small_net(6);
    auto& c = std::get<Conv2d<double>>(net.layers[0]);
    std::fill(c.weight.begin() + 2 * 18, c.weight.begin() + 3 * 18, 0.0);
    c.bias[2] = 0.0;
    PruneConfig pc;
    pc.ratio = 0.25;  // one of four in the first group, none of three in the second
    auto pruned = prune(net, pc);
    CHECK(std::get<Conv2d<double>>(pruned.layers[0]).out_channels == 3);
    CHECK(std::get<Conv2d<double>>(pruned.layers[2]).out_channels == 3);
    const auto x = random_batch({4, 2, 6, 6}, 7);
    const auto a = net.forward(x), b = pruned.forward(x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-12);

    auto direct = remove_filters(net, {0, 0}, {2});
    const auto d = direct.forward(x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - d.data[i]) < 1e-12);
}

TEST_CASE("pruned DroneNet passes the shape audit and keeps Q") {
    for (auto policy : {Policy::coupled, Policy::block_internal})
        for (auto head : {Head::flatten, Head::global_avg_pool}) {
            DroneNetConfig dc;
            dc.head = head;
            auto net = make_dronenet<float>(dc, 8);
            PruneConfig pc;
            pc.policy = policy;
            const auto p = prune(net, pc);
            audit(p);
            CHECK(p.num_classes() == 64);
        }
}

TEST_CASE("pruned FLOPs match recomputed channel products") {
    auto net = make_dronenet<float>(DroneNetConfig{}, 9);
    PruneConfig pc;

    pc.policy = Policy::coupled;  // every channel count halves
    long coupled = conv(3, 3, 8, 32) + 8 * 1024;
    coupled += 2 * conv(3, 8, 8, 32) + 8 * 1024 + 2 * 8 * 1024;
    coupled += conv(3, 8, 16, 16) + 16 * 256;
    coupled += 2 * conv(3, 16, 16, 16) + 16 * 256 + 2 * 16 * 256;
    coupled += conv(3, 16, 32, 8) + 32 * 64;
    coupled += 2 * 2048 * 64;
    CHECK(count_flops(prune(net, pc)) == std::uint64_t(coupled));

    pc.policy = Policy::block_internal;  // skip-connected widths stay
    long internal = conv(3, 3, 16, 32) + 16 * 1024;
    internal += conv(3, 16, 8, 32) + 8 * 1024 + conv(3, 8, 16, 32) + 2 * 16 * 1024;
    internal += conv(3, 16, 32, 16) + 32 * 256;
    internal += conv(3, 32, 16, 16) + 16 * 256 + conv(3, 16, 32, 16) + 2 * 32 * 256;
    internal += conv(3, 32, 32, 8) + 32 * 64;
    internal += 2 * 2048 * 64;
    CHECK(count_flops(prune(net, pc)) == std::uint64_t(internal));

    const double base = double(count_flops(net));
    CHECK(1.0 - coupled / base >= 0.5);
}

TEST_CASE("FLOPs fall strictly as the ratio grows") {
    auto net = make_dronenet<float>(DroneNetConfig{}, 10);
    for (auto policy : {Policy::coupled, Policy::block_internal}) {
        std::uint64_t prev = count_flops(net);
        for (double r : {0.25, 0.5, 0.75}) {
            PruneConfig pc;
            pc.ratio = r;
            pc.policy = policy;
            const auto f = count_flops(prune(net, pc));
            CHECK(f < prev);
            prev = f;
        }
    }
}

TEST_CASE("scaling a layer scales its scores and keeps the selection") {
    auto net = make_dronenet<double>(DroneNetConfig{}, 11);
    auto scaled = net;
    const ConvRef last{6, 0};
    for (auto& w : conv_at(scaled, last).weight) w *= 3.5;
    const auto s0 = score_filters(net), s1 = score_filters(scaled);
    for (std::size_t i = 0; i < s0.size(); ++i) {
        const double c = (s0[i].layer == 6) ? 3.5 : 1.0;
        CHECK(s1[i].score == Catch::Approx(c * s0[i].score).epsilon(1e-12));
    }
    PruneConfig pc;
    const auto a = prune(net, pc), b = prune(scaled, pc);
    const auto& wa = conv_at(a, last).weight;
    const auto& wb = conv_at(b, last).weight;
    REQUIRE(wa.size() == wb.size());
    for (std::size_t i = 0; i < wa.size(); ++i) CHECK(wb[i] == Catch::Approx(3.5 * wa[i]).epsilon(1e-12));
}

TEST_CASE("ties prune the lower filter index first") {
    auto net = small_net(12);
    auto& c = std::get<Conv2d<double>>(net.layers[0]);
    std::fill(c.weight.begin(), c.weight.end(), 0.5);
    c.bias = {1, 2, 3, 4};
    PruneConfig pc;
    pc.ratio = 0.5;
    const auto p = prune(net, pc);
    CHECK(std::get<Conv2d<double>>(p.layers[0]).bias == std::vector<double>{3, 4});
}

TEST_CASE("shape-constrained layers and bad ratios are rejected") {
    auto net = make_dronenet<float>(DroneNetConfig{}, 13);
    CHECK_THROWS_AS(remove_filters(net, {2, 2}, {0}, Policy::block_internal), StructuralError);
    CHECK_THROWS_AS(remove_filters(net, {0, 0}, {0}, Policy::block_internal), StructuralError);
    CHECK_NOTHROW(remove_filters(net, {2, 1}, {0}, Policy::block_internal));
    CHECK_NOTHROW(remove_filters(net, {2, 2}, {0}, Policy::coupled));
    CHECK_THROWS_AS(remove_filters(net, {1, 0}, {0}), StructuralError);
    std::vector<int> all(16);
    std::iota(all.begin(), all.end(), 0);
    CHECK_THROWS_AS(remove_filters(net, {2, 1}, all), ConfigError);
    PruneConfig pc;
    pc.ratio = 1.0;
    CHECK_THROWS_AS(prune(net, pc), ConfigError);
    pc.ratio = -0.1;
    CHECK_THROWS_AS(prune(net, pc), ConfigError);
    CHECK_THROWS_AS(parse_policy("global"), ConfigError);
}

TEST_CASE("high ratios still leave at least one filter per layer") {
    auto net = make_dronenet<float>(DroneNetConfig{}, 14);
    PruneConfig pc;
    pc.ratio = 0.99;
    const auto p = prune(net, pc);
    audit(p);
    for (const auto& g : channel_groups(p)) CHECK(g.channels >= 1);
}

TEST_CASE("zero fine-tune epochs leave the network unchanged") {
    auto net = make_dronenet<float>(DroneNetConfig{}, 15);
    const auto before = net.flat_params();
    dataset::Dataset ds;
    PruneConfig pc;
    pc.finetune_epochs = 0;
    const std::vector<std::size_t> none;
    const auto r = finetune(net, ds, none, none, pc, TrainConfig{}, Normalization{});
    CHECK(r.history.empty());
    CHECK(net.flat_params() == before);
}

TEST_CASE("fine-tuning runs at a constant rate") {
    dataset::Dataset ds;
    ds.manifest.width = ds.manifest.height = 16;
    ds.manifest.num_beams = 4;
    Rng r(16);
    for (int i = 0; i < 24; ++i) {
        dataset::Sample s;
        s.pixels.resize(3 * 16 * 16);
        for (auto& p : s.pixels) p = static_cast<std::uint8_t>(r.below(256));
        s.label = static_cast<int>(r.below(4));
        ds.samples.push_back(s);
    }
    DroneNetConfig dc;
    dc.num_beams = 4;
    dc.height = dc.width = 16;
    auto net = prune(make_dronenet<float>(dc, 17), PruneConfig{});
    std::vector<std::size_t> tr(16), va(8);
    std::iota(tr.begin(), tr.end(), 0);
    std::iota(va.begin(), va.end(), 16);
    PruneConfig pc;
    pc.finetune_epochs = 3;
    pc.finetune_lr = 2e-4;
    TrainConfig base;
    base.batch_size = 8;
    const auto res = finetune(net, ds, tr, va, pc, base, Normalization{});
    REQUIRE(res.history.size() == 3);
    for (const auto& h : res.history) CHECK(h.learning_rate == 2e-4);
}

TEST_CASE("latency benchmark reports counts and positive medians") {
    DroneNetConfig dc;
    dc.height = dc.width = 16;
    auto net = make_dronenet<float>(dc, 18);
    const auto rep = benchmark_latency(net, {1, 4}, 30);
    CHECK(rep.flops == count_flops(net));
    CHECK(rep.params == count_params(net));
    REQUIRE(rep.rows.size() == 2);
    for (const auto& row : rep.rows) {
        CHECK(row.median_ms_per_image > 0);
        CHECK(row.trials == 30);
    }
    const auto j = rep.to_json();
    CHECK(j["latency"][1]["batch_size"] == 4);
    CHECK_THROWS_AS(benchmark_latency(net, {1}, 29), InputDomainError);
    CHECK_THROWS_AS(benchmark_latency(net, {0}, 30), InputDomainError);
}
