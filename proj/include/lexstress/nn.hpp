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

#ifndef LEXSTRESS_NN_HPP
#define LEXSTRESS_NN_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace lexstress::nn {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    }

    static long long numel(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) n *= d;
        return n;
    }
    long long size() const { return static_cast<long long>(data.size()); }
    bool same_shape(const std::vector<int>& s) const { return shape == s; }
};

enum class LayerKind { conv2d, dense, relu, avg_pool, max_pool, batch_norm, flatten };

std::string layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;

    // conv2d
    int in_channels = 0, out_channels = 0;
    int kernel_h = 0, kernel_w = 0;
    int stride = 1;
    int pad_h = 0, pad_w = 0;

    // dense
    int in_features = 0, out_features = 0;

    // conv2d / dense parameters. Conv weights are [out, in, kh, kw]; dense
    // weights are [out, in].
    Tensor weights, bias;

    // avg_pool / max_pool
    int pool_h = 0, pool_w = 0;
    int pool_stride_h = 0, pool_stride_w = 0;

    // batch_norm (per channel)
    int channels = 0;
    double bn_eps = 1e-5;
    Tensor bn_gamma, bn_beta, bn_mean, bn_var;
};

LayerSpec conv2d(int in_channels, int out_channels, int kernel, int stride = 1,
                 const std::string& padding = "valid");
LayerSpec dense(int in_features, int out_features);
LayerSpec relu();
LayerSpec avg_pool(int size, int stride = 0);
LayerSpec max_pool(int size, int stride = 0);
LayerSpec batch_norm(int channels, double eps = 1e-5);
LayerSpec flatten();

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<int> input_shape;  // e.g. {1, 161, 49} or {features}
    int n_classes = 2;
    // Filled by make_network: per-layer output shape (sans batch dimension).
    std::vector<std::vector<int>> output_shapes;
};

// Validates shape composition (so inference can never hit a shape error) and
// returns the completed spec. Throws ShapeError naming the offending layer.
NetworkSpec make_network(std::vector<LayerSpec> layers, std::vector<int> input_shape,
                         int n_classes = 2);

// Scaled-uniform fan-in initialization for conv/dense; biases zero; batch
// norm starts as identity.
void init_parameters(NetworkSpec& net, std::uint64_t seed);

// LeNet-5 style stack: three 5x5 valid convolutions with average pooling
// between them, then two dense layers.
NetworkSpec make_lenet5(const std::vector<int>& input_shape, std::uint64_t seed, int n_classes = 2);

// Reduced VGG-style stack: four 3x3 same-padded conv+BN blocks with max
// pooling, then three dense layers.
NetworkSpec make_vgg_mini(const std::vector<int>& input_shape, std::uint64_t seed, int n_classes = 2);

struct LayerTrace {
    Tensor input;   // layer input (sans batch dimension)
    Tensor output;  // layer output
};

struct ForwardTrace {
    const NetworkSpec* net = nullptr;
    std::vector<LayerTrace> steps;  // one per layer, in order
};

// Deterministic inference pass; batch norm uses running statistics. Returns
// the logits and a trace caching every layer's input and output.
std::pair<Tensor, ForwardTrace> forward(const NetworkSpec& net, const Tensor& input);

// Inference without trace capture.
Tensor forward_logits(const NetworkSpec& net, const Tensor& input);

// Merges every batch_norm into the directly preceding conv2d/dense layer and
// drops it; forward outputs are preserved. Errors if a batch_norm does not
// directly follow conv2d or dense.
NetworkSpec fold_batchnorm(const NetworkSpec& net);

// Weight file: magic + version + JSON topology header + raw little-endian
// float32 parameters per layer in declaration order.
void save_weights(const NetworkSpec& net, const std::string& path);
NetworkSpec load_weights(const std::string& path);

// ---------------------------------------------------------------------------
// Batched per-layer primitives. All tensors carry a leading batch dimension
// N ([N, C, H, W] or [N, F]); the training loop drives these directly.

Tensor conv2d_forward(const LayerSpec& layer, const Tensor& x);
Tensor dense_forward(const LayerSpec& layer, const Tensor& x);
Tensor relu_forward(const Tensor& x);
Tensor avg_pool_forward(const LayerSpec& layer, const Tensor& x);
Tensor max_pool_forward(const LayerSpec& layer, const Tensor& x);
Tensor batch_norm_forward(const LayerSpec& layer, const Tensor& x);  // running stats
Tensor flatten_forward(const Tensor& x);

struct BatchNormCache {
    Tensor xhat;
    std::vector<double> inv_sd;      // per channel, 1/sqrt(var + eps)
    std::vector<double> batch_mean;  // per channel
};

// Training-mode batch norm: normalizes with batch statistics, updates the
// layer's running statistics in place (momentum on the old value), and fills
// the cache needed by the backward pass.
Tensor batch_norm_forward_train(LayerSpec& layer, const Tensor& x, BatchNormCache& cache,
                                double momentum = 0.9);

struct LayerGrads {
    Tensor d_weights, d_bias;      // conv2d / dense
    Tensor d_bn_gamma, d_bn_beta;  // batch_norm
};

// Backward passes: given the layer input x and upstream gradient dy, return
// dx and (where applicable) accumulate parameter gradients into grads.
Tensor conv2d_backward(const LayerSpec& layer, const Tensor& x, const Tensor& dy, LayerGrads* grads);
Tensor dense_backward(const LayerSpec& layer, const Tensor& x, const Tensor& dy, LayerGrads* grads);
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor avg_pool_backward(const LayerSpec& layer, const Tensor& x, const Tensor& dy);
Tensor max_pool_backward(const LayerSpec& layer, const Tensor& x, const Tensor& dy);
Tensor batch_norm_backward(const LayerSpec& layer, const BatchNormCache& cache, const Tensor& dy,
                           LayerGrads* grads);

}  // namespace lexstress::nn

#endif  // LEXSTRESS_NN_HPP
