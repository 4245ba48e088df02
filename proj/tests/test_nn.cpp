// Copyright 2026 The lexstress Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lexstress/errors.hpp"
#include "lexstress/nn.hpp"
#include "lexstress/util.hpp"

using namespace lexstress;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d with a 1x1 identity kernel reproduces its input") {
    nn::LayerSpec l = nn::conv2d(1, 1, 1);
    l.weights.data[0] = 1.0;
    Rng rng(1);
    const Tensor x = random_tensor({2, 1, 4, 5}, rng);
    const Tensor y = nn::conv2d_forward(l, x);
    REQUIRE(y.shape == x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("lenet5 layer shapes compose as hand-derived for a 161x49 input") {
    const nn::NetworkSpec net = nn::make_lenet5({1, 161, 49}, 3);
    // 161x49 -5x5-> 157x45 -pool2-> 78x22 -5x5-> 74x18 -pool2-> 37x9 -5x5-> 33x5
    // flatten = 120*33*5 = 19800 -> 84 -> 2.
    const std::vector<std::vector<int>> expect = {
        {6, 157, 45}, {6, 157, 45}, {6, 78, 22},  {16, 74, 18}, {16, 74, 18}, {16, 37, 9},
        {120, 33, 5}, {120, 33, 5}, {19800},      {84},         {84},         {2},
    };
    REQUIRE(net.output_shapes.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(net.output_shapes[i] == expect[i]);

    Rng rng(2);
    const Tensor x = random_tensor({1, 161, 49}, rng);
    auto [logits, trace] = nn::forward(net, x);
    CHECK(logits.shape == std::vector<int>{2});
    CHECK(trace.steps.size() == net.layers.size());
    for (std::size_t i = 0; i + 1 < trace.steps.size(); ++i)
        CHECK(trace.steps[i].output.shape == trace.steps[i + 1].input.shape);
}

TEST_CASE("vgg_mini composes and emits 2 logits") {
    const nn::NetworkSpec net = nn::make_vgg_mini({1, 161, 49}, 5);
    Rng rng(3);
    const Tensor logits = nn::forward_logits(net, random_tensor({1, 161, 49}, rng));
    CHECK(logits.shape == std::vector<int>{2});
}

TEST_CASE("relu zeroes negative inputs") {
    Tensor x({1, 4});
    x.data = {-1.0, -0.5, -2.0, -1e-9};
    const Tensor y = nn::relu_forward(x);
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic") {
    const nn::NetworkSpec net = nn::make_lenet5({1, 161, 49}, 11);
    Rng rng(4);
    const Tensor x = random_tensor({1, 161, 49}, rng);
    const Tensor a = nn::forward_logits(net, x);
    const Tensor b = nn::forward_logits(net, x);
    CHECK(a.data[0] == b.data[0]);
    CHECK(a.data[1] == b.data[1]);
}

TEST_CASE("forward rejects a mismatched input shape") {
    const nn::NetworkSpec net = nn::make_lenet5({1, 161, 49}, 11);
    Tensor bad({1, 161, 48});
    CHECK_THROWS_AS(nn::forward_logits(net, bad), ShapeError);
}

TEST_CASE("make_network names the offending layer on shape errors") {
    // dense directly after conv without flatten
    std::vector<nn::LayerSpec> layers;
    layers.push_back(nn::conv2d(1, 2, 3));
    layers.push_back(nn::dense(10, 2));
    CHECK_THROWS_WITH_AS(nn::make_network(std::move(layers), {1, 8, 8}, 2),
                         doctest::Contains("layer 1"), ShapeError);

    std::vector<nn::LayerSpec> wrong_channels;
    wrong_channels.push_back(nn::conv2d(3, 2, 3));
    CHECK_THROWS_AS(nn::make_network(std::move(wrong_channels), {1, 8, 8}, 2), ShapeError);
}

TEST_CASE("batch_norm inference matches the hand-computed normalization") {
    nn::LayerSpec bn = nn::batch_norm(2, 1e-5);
    bn.bn_gamma.data = {2.0, 0.5};
    bn.bn_beta.data = {1.0, -1.0};
    bn.bn_mean.data = {0.5, -0.25};
    bn.bn_var.data = {4.0, 0.25};

    Tensor x({1, 2, 1, 2});
    x.data = {1.5, 2.5, 0.75, -1.25};
    const Tensor y = nn::batch_norm_forward(bn, x);
    // channel 0: 2 * (x - 0.5) / sqrt(4 + 1e-5) + 1
    CHECK(y.data[0] == doctest::Approx(2.0 * 1.0 / std::sqrt(4.00001) + 1.0).epsilon(1e-12));
    CHECK(y.data[1] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.00001) + 1.0).epsilon(1e-12));
    // channel 1: 0.5 * (x + 0.25) / sqrt(0.25 + 1e-5) - 1
    CHECK(y.data[2] == doctest::Approx(0.5 * 1.0 / std::sqrt(0.25001) - 1.0).epsilon(1e-12));
    CHECK(y.data[3] == doctest::Approx(0.5 * -1.0 / std::sqrt(0.25001) - 1.0).epsilon(1e-12));
}

namespace {

nn::NetworkSpec small_bn_net(std::uint64_t seed) {
    std::vector<nn::LayerSpec> layers;
    layers.push_back(nn::conv2d(1, 3, 3));
    layers.push_back(nn::batch_norm(3));
    layers.push_back(nn::relu());
    layers.push_back(nn::max_pool(2));
    layers.push_back(nn::flatten());
    layers.push_back(nn::dense(3 * 3 * 2, 4));
    layers.push_back(nn::batch_norm(4));
    layers.push_back(nn::relu());
    layers.push_back(nn::dense(4, 2));
    nn::NetworkSpec net = nn::make_network(std::move(layers), {1, 8, 6}, 2);
    nn::init_parameters(net, seed);

    // Give batch norms non-trivial statistics.
    Rng rng(Rng::mix(seed, 17));
    for (nn::LayerSpec& l : net.layers) {
        if (l.kind != nn::LayerKind::batch_norm) continue;
        for (double& v : l.bn_gamma.data) v = rng.uniform(0.5, 1.5);
        for (double& v : l.bn_beta.data) v = rng.uniform(-0.5, 0.5);
        for (double& v : l.bn_mean.data) v = rng.uniform(-0.3, 0.3);
        for (double& v : l.bn_var.data) v = rng.uniform(0.2, 2.0);
    }
    return net;
}

}  // namespace

TEST_CASE("fold_batchnorm with identity statistics leaves weights unchanged") {
    std::vector<nn::LayerSpec> layers;
    layers.push_back(nn::conv2d(1, 2, 3));
    layers.push_back(nn::batch_norm(2, 1e-12));  // gamma=1, beta=0, mean=0, var=1
    layers.push_back(nn::flatten());
    layers.push_back(nn::dense(2 * 6 * 6, 2));
    nn::NetworkSpec net = nn::make_network(std::move(layers), {1, 8, 8}, 2);
    nn::init_parameters(net, 6);

    const nn::NetworkSpec folded = nn::fold_batchnorm(net);
    REQUIRE(folded.layers.size() == net.layers.size() - 1);
    for (std::size_t i = 0; i < net.layers[0].weights.data.size(); ++i)
        CHECK(std::abs(folded.layers[0].weights.data[i] - net.layers[0].weights.data[i]) < 1e-7);
}

TEST_CASE("fold_batchnorm preserves the forward pass on random nets") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const nn::NetworkSpec net = small_bn_net(seed);
        const nn::NetworkSpec folded = nn::fold_batchnorm(net);
        for (const nn::LayerSpec& l : folded.layers)
            CHECK(l.kind != nn::LayerKind::batch_norm);

        Rng rng(Rng::mix(seed, 23));
        const Tensor x = random_tensor({1, 8, 6}, rng);
        const Tensor a = nn::forward_logits(net, x);
        const Tensor b = nn::forward_logits(folded, x);
        for (int k = 0; k < 2; ++k) {
            const double denom = std::max({std::abs(a.data[k]), std::abs(b.data[k]), 1e-12});
            CHECK(std::abs(a.data[k] - b.data[k]) / denom < 1e-5);
        }
    }
}

TEST_CASE("fold_batchnorm rejects a leading batch_norm") {
    std::vector<nn::LayerSpec> layers;
    layers.push_back(nn::batch_norm(1));
    layers.push_back(nn::flatten());
    layers.push_back(nn::dense(12, 2));
    const nn::NetworkSpec net = nn::make_network(std::move(layers), {1, 3, 4}, 2);
    CHECK_THROWS_AS(nn::fold_batchnorm(net), ConfigError);
}

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "lexstress_nn";
    fs::create_directories(dir);
    return dir / name;
}

// Weights representable exactly in float32 so the on-disk round trip is
// bit-exact.
nn::NetworkSpec float_exact_net() {
    std::vector<nn::LayerSpec> layers;
    layers.push_back(nn::conv2d(1, 2, 3, 1, "same"));
    layers.push_back(nn::relu());
    layers.push_back(nn::avg_pool(2));
    layers.push_back(nn::flatten());
    layers.push_back(nn::dense(2 * 2 * 2, 2));
    nn::NetworkSpec net = nn::make_network(std::move(layers), {1, 4, 4}, 2);
    Rng rng(9);
    for (nn::LayerSpec& l : net.layers) {
        for (double& v : l.weights.data) v = static_cast<float>(rng.uniform(-1, 1));
        for (double& v : l.bias.data) v = static_cast<float>(rng.uniform(-1, 1));
    }
    return net;
}

}  // namespace

TEST_CASE("save/load weights round-trips the network exactly") {
    const nn::NetworkSpec net = float_exact_net();
    const fs::path path = temp_file("roundtrip.bin");
    nn::save_weights(net, path.string());
    const nn::NetworkSpec back = nn::load_weights(path.string());

    REQUIRE(back.layers.size() == net.layers.size());
    CHECK(back.input_shape == net.input_shape);
    CHECK(back.n_classes == net.n_classes);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        CHECK(back.layers[i].kind == net.layers[i].kind);
        REQUIRE(back.layers[i].weights.data.size() == net.layers[i].weights.data.size());
        for (std::size_t k = 0; k < net.layers[i].weights.data.size(); ++k)
            CHECK(back.layers[i].weights.data[k] == net.layers[i].weights.data[k]);
        for (std::size_t k = 0; k < net.layers[i].bias.data.size(); ++k)
            CHECK(back.layers[i].bias.data[k] == net.layers[i].bias.data[k]);
    }
}

TEST_CASE("load-then-save is byte-identical (format is canonical)") {
    const nn::NetworkSpec net = nn::make_lenet5({1, 32, 20}, 13);
    const fs::path p1 = temp_file("canon1.bin");
    const fs::path p2 = temp_file("canon2.bin");
    nn::save_weights(net, p1.string());
    nn::save_weights(nn::load_weights(p1.string()), p2.string());

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("load_weights rejects bad magic, truncation, and trailing bytes") {
    const nn::NetworkSpec net = float_exact_net();
    const fs::path path = temp_file("fmt.bin");
    nn::save_weights(net, path.string());

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    {
        std::string bad = bytes;
        bad[0] = 'X';
        const fs::path p = temp_file("bad_magic.bin");
        std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(nn::load_weights(p.string()), FormatError);
    }
    {
        const fs::path p = temp_file("truncated.bin");
        std::ofstream(p, std::ios::binary)
            .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 6));
        CHECK_THROWS_AS(nn::load_weights(p.string()), FormatError);
    }
    {
        std::string extra = bytes + "zz";
        const fs::path p = temp_file("trailing.bin");
        std::ofstream(p, std::ios::binary)
            .write(extra.data(), static_cast<std::streamsize>(extra.size()));
        CHECK_THROWS_AS(nn::load_weights(p.string()), FormatError);
    }
}

TEST_CASE("pooling forward matches hand-computed windows") {
    nn::LayerSpec ap = nn::avg_pool(2);
    nn::LayerSpec mp = nn::max_pool(2);
    Tensor x({1, 1, 2, 4});
    x.data = {1.0, 2.0, 3.0, 4.0,
              5.0, 6.0, 7.0, 8.0};
    const Tensor a = nn::avg_pool_forward(ap, x);
    REQUIRE(a.shape == std::vector<int>{1, 1, 1, 2});
    CHECK(a.data[0] == doctest::Approx(3.5));
    CHECK(a.data[1] == doctest::Approx(5.5));

    const Tensor m = nn::max_pool_forward(mp, x);
    CHECK(m.data[0] == doctest::Approx(6.0));
    CHECK(m.data[1] == doctest::Approx(8.0));
}
