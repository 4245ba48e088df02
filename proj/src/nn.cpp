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

#include "lexstress/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"

namespace lexstress::nn {

using nlohmann::json;

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::avg_pool: return "avg_pool";
        case LayerKind::max_pool: return "max_pool";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
    if (name == "conv2d") return LayerKind::conv2d;
    if (name == "dense") return LayerKind::dense;
    if (name == "relu") return LayerKind::relu;
    if (name == "avg_pool") return LayerKind::avg_pool;
    if (name == "max_pool") return LayerKind::max_pool;
    if (name == "batch_norm") return LayerKind::batch_norm;
    if (name == "flatten") return LayerKind::flatten;
    throw FormatError("unknown layer kind '" + name + "'");
}

LayerSpec conv2d(int in_channels, int out_channels, int kernel, int stride,
                 const std::string& padding) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1)
        throw ConfigError("conv2d: channels, kernel, and stride must be positive");
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_channels = in_channels;
    l.out_channels = out_channels;
    l.kernel_h = l.kernel_w = kernel;
    l.stride = stride;
    if (padding == "valid") {
        l.pad_h = l.pad_w = 0;
    } else if (padding == "same") {
        if (kernel % 2 == 0) throw ConfigError("conv2d: same padding requires an odd kernel");
        l.pad_h = l.pad_w = (kernel - 1) / 2;
    } else {
        throw ConfigError("conv2d: padding must be 'valid' or 'same', got '" + padding + "'");
    }
    l.weights = Tensor({out_channels, in_channels, kernel, kernel});
    l.bias = Tensor({out_channels});
    return l;
}

LayerSpec dense(int in_features, int out_features) {
    if (in_features < 1 || out_features < 1)
        throw ConfigError("dense: feature counts must be positive");
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.in_features = in_features;
    l.out_features = out_features;
    l.weights = Tensor({out_features, in_features});
    l.bias = Tensor({out_features});
    return l;
}

LayerSpec relu() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
}

LayerSpec avg_pool(int size, int stride) {
    if (size < 1) throw ConfigError("avg_pool: window must be positive");
    LayerSpec l;
    l.kind = LayerKind::avg_pool;
    l.pool_h = l.pool_w = size;
    l.pool_stride_h = l.pool_stride_w = stride > 0 ? stride : size;
    return l;
}

LayerSpec max_pool(int size, int stride) {
    if (size < 1) throw ConfigError("max_pool: window must be positive");
    LayerSpec l;
    l.kind = LayerKind::max_pool;
    l.pool_h = l.pool_w = size;
    l.pool_stride_h = l.pool_stride_w = stride > 0 ? stride : size;
    return l;
}

LayerSpec batch_norm(int channels, double eps) {
    if (channels < 1) throw ConfigError("batch_norm: channels must be positive");
    if (eps <= 0.0) throw ConfigError("batch_norm: eps must be positive");
    LayerSpec l;
    l.kind = LayerKind::batch_norm;
    l.channels = channels;
    l.bn_eps = eps;
    l.bn_gamma = Tensor({channels});
    l.bn_beta = Tensor({channels});
    l.bn_mean = Tensor({channels});
    l.bn_var = Tensor({channels});
    std::fill(l.bn_gamma.data.begin(), l.bn_gamma.data.end(), 1.0);
    std::fill(l.bn_var.data.begin(), l.bn_var.data.end(), 1.0);
    return l;
}

LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
}

namespace {

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

int conv_extent(int in, int pad, int kernel, int stride) {
    return (in + 2 * pad - kernel) / stride + 1;
}

std::vector<int> infer_output_shape(const LayerSpec& l, const std::vector<int>& in,
                                    const std::string& where) {
    switch (l.kind) {
        case LayerKind::conv2d: {
            if (in.size() != 3)
                throw ShapeError(where + ": conv2d needs [C,H,W] input, got " + shape_str(in));
            if (in[0] != l.in_channels)
                throw ShapeError(where + ": conv2d expects " + std::to_string(l.in_channels) +
                                 " input channels, got " + std::to_string(in[0]));
            if (in[1] + 2 * l.pad_h < l.kernel_h || in[2] + 2 * l.pad_w < l.kernel_w)
                throw ShapeError(where + ": conv2d kernel larger than padded input " + shape_str(in));
            return {l.out_channels, conv_extent(in[1], l.pad_h, l.kernel_h, l.stride),
                    conv_extent(in[2], l.pad_w, l.kernel_w, l.stride)};
        }
        case LayerKind::dense: {
            if (in.size() != 1)
                throw ShapeError(where + ": dense needs flat input, got " + shape_str(in));
            if (in[0] != l.in_features)
                throw ShapeError(where + ": dense expects " + std::to_string(l.in_features) +
                                 " features, got " + std::to_string(in[0]));
            return {l.out_features};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::avg_pool:
        case LayerKind::max_pool: {
            if (in.size() != 3)
                throw ShapeError(where + ": pooling needs [C,H,W] input, got " + shape_str(in));
            if (in[1] < l.pool_h || in[2] < l.pool_w)
                throw ShapeError(where + ": pooling window larger than input " + shape_str(in));
            return {in[0], (in[1] - l.pool_h) / l.pool_stride_h + 1,
                    (in[2] - l.pool_w) / l.pool_stride_w + 1};
        }
        case LayerKind::batch_norm: {
            const int c = in.size() == 3 ? in[0] : (in.size() == 1 ? in[0] : -1);
            if (c < 0)
                throw ShapeError(where + ": batch_norm needs [C,H,W] or flat input, got " +
                                 shape_str(in));
            if (c != l.channels)
                throw ShapeError(where + ": batch_norm expects " + std::to_string(l.channels) +
                                 " channels, got " + std::to_string(c));
            return in;
        }
        case LayerKind::flatten: {
            long long n = 1;
            for (int d : in) n *= d;
            return {static_cast<int>(n)};
        }
    }
    throw ShapeError(where + ": unknown layer kind");
}

std::vector<Tensor*> parameter_tensors(LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::conv2d:
        case LayerKind::dense: return {&l.weights, &l.bias};
        case LayerKind::batch_norm: return {&l.bn_gamma, &l.bn_beta, &l.bn_mean, &l.bn_var};
        default: return {};
    }
}

}  // namespace

NetworkSpec make_network(std::vector<LayerSpec> layers, std::vector<int> input_shape,
                         int n_classes) {
    NetworkSpec net;
    net.layers = std::move(layers);
    net.input_shape = std::move(input_shape);
    net.n_classes = n_classes;

    std::vector<int> shape = net.input_shape;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::string where =
            "layer " + std::to_string(i) + " (" + layer_kind_name(net.layers[i].kind) + ")";
        shape = infer_output_shape(net.layers[i], shape, where);
        net.output_shapes.push_back(shape);
    }
    if (shape != std::vector<int>{n_classes})
        throw ShapeError("network output " + shape_str(shape) + " is not the expected [" +
                         std::to_string(n_classes) + "] logits");
    return net;
}

void init_parameters(NetworkSpec& net, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x1417ULL));
    for (LayerSpec& l : net.layers) {
        if (l.kind == LayerKind::conv2d) {
            const double limit = std::sqrt(3.0 / (l.in_channels * l.kernel_h * l.kernel_w));
            for (double& w : l.weights.data) w = rng.uniform(-limit, limit);
            std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
        } else if (l.kind == LayerKind::dense) {
            const double limit = std::sqrt(3.0 / l.in_features);
            for (double& w : l.weights.data) w = rng.uniform(-limit, limit);
            std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
        }
    }
}

NetworkSpec make_lenet5(const std::vector<int>& input_shape, std::uint64_t seed, int n_classes) {
    if (input_shape.size() != 3) throw ConfigError("lenet5: input must be [C,H,W]");
    std::vector<LayerSpec> layers;
    layers.push_back(conv2d(input_shape[0], 6, 5));
    layers.push_back(relu());
    layers.push_back(avg_pool(2));
    layers.push_back(conv2d(6, 16, 5));
    layers.push_back(relu());
    layers.push_back(avg_pool(2));
    layers.push_back(conv2d(16, 120, 5));
    layers.push_back(relu());
    layers.push_back(flatten());

    std::vector<int> shape = input_shape;
    for (const LayerSpec& l : layers) shape = infer_output_shape(l, shape, "lenet5");
    layers.push_back(dense(shape[0], 84));
    layers.push_back(relu());
    layers.push_back(dense(84, n_classes));

    NetworkSpec net = make_network(std::move(layers), input_shape, n_classes);
    init_parameters(net, seed);
    return net;
}

NetworkSpec make_vgg_mini(const std::vector<int>& input_shape, std::uint64_t seed, int n_classes) {
    if (input_shape.size() != 3) throw ConfigError("vgg_mini: input must be [C,H,W]");
    const int widths[4] = {8, 16, 32, 32};
    std::vector<LayerSpec> layers;
    int in_c = input_shape[0];
    for (int w : widths) {
        layers.push_back(conv2d(in_c, w, 3, 1, "same"));
        layers.push_back(batch_norm(w));
        layers.push_back(relu());
        layers.push_back(max_pool(2));
        in_c = w;
    }
    layers.push_back(flatten());

    std::vector<int> shape = input_shape;
    for (const LayerSpec& l : layers) shape = infer_output_shape(l, shape, "vgg_mini");
    layers.push_back(dense(shape[0], 64));
    layers.push_back(relu());
    layers.push_back(dense(64, 32));
    layers.push_back(relu());
    layers.push_back(dense(32, n_classes));

    NetworkSpec net = make_network(std::move(layers), input_shape, n_classes);
    init_parameters(net, seed);
    return net;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

// C[M,P] += A[M,K] * B[K,P]
void gemm_acc(const double* A, const double* B, double* C, int M, int K, int P) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * K;
        double* c = C + static_cast<std::size_t>(m) * P;
        for (int k = 0; k < K; ++k) {
            const double av = a[k];
            const double* b = B + static_cast<std::size_t>(k) * P;
            for (int p = 0; p < P; ++p) c[p] += av * b[p];
        }
    }
}

// C[M,K] += A[M,P] * B[K,P]^T
void gemm_abt_acc(const double* A, const double* B, double* C, int M, int K, int P) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * P;
        double* c = C + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const double* b = B + static_cast<std::size_t>(k) * P;
            double acc = 0.0;
            for (int p = 0; p < P; ++p) acc += a[p] * b[p];
            c[k] += acc;
        }
    }
}

// C[K,P] += A[M,K]^T * B[M,P]
void gemm_atb_acc(const double* A, const double* B, double* C, int M, int K, int P) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * K;
        const double* b = B + static_cast<std::size_t>(m) * P;
        for (int k = 0; k < K; ++k) {
            const double av = a[k];
            double* c = C + static_cast<std::size_t>(k) * P;
            for (int p = 0; p < P; ++p) c[p] += av * b[p];
        }
    }
}

void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int ph, int pw,
            int OH, int OW, double* col) {
    const int P = OH * OW;
    std::size_t r = 0;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j, ++r) {
                double* dst = col + r * P;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - ph + i;
                    const double* src =
                        (ih >= 0 && ih < H) ? x + (static_cast<std::size_t>(c) * H + ih) * W : nullptr;
                    double* d = dst + static_cast<std::size_t>(oh) * OW;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pw + j;
                        d[ow] = (src && iw >= 0 && iw < W) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, int C, int H, int W, int kh, int kw, int stride, int ph, int pw,
                int OH, int OW, double* x) {
    const int P = OH * OW;
    std::size_t r = 0;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j, ++r) {
                const double* src = col + r * P;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - ph + i;
                    if (ih < 0 || ih >= H) continue;
                    double* dstrow = x + (static_cast<std::size_t>(c) * H + ih) * W;
                    const double* s = src + static_cast<std::size_t>(oh) * OW;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pw + j;
                        if (iw >= 0 && iw < W) dstrow[iw] += s[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const LayerSpec& l, const Tensor& x) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OH = conv_extent(H, l.pad_h, l.kernel_h, l.stride);
    const int OW = conv_extent(W, l.pad_w, l.kernel_w, l.stride);
    const int K = C * l.kernel_h * l.kernel_w;
    const int P = OH * OW;

    Tensor y({N, l.out_channels, OH, OW});
    std::vector<double> col(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        const double* xp = x.data.data() + static_cast<std::size_t>(n) * C * H * W;
        im2col(xp, C, H, W, l.kernel_h, l.kernel_w, l.stride, l.pad_h, l.pad_w, OH, OW, col.data());
        double* yp = y.data.data() + static_cast<std::size_t>(n) * l.out_channels * P;
        for (int oc = 0; oc < l.out_channels; ++oc)
            std::fill_n(yp + static_cast<std::size_t>(oc) * P, P, l.bias.data[oc]);
        gemm_acc(l.weights.data.data(), col.data(), yp, l.out_channels, K, P);
    }
    return y;
}

Tensor conv2d_backward(const LayerSpec& l, const Tensor& x, const Tensor& dy, LayerGrads* grads) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OH = dy.shape[2], OW = dy.shape[3];
    const int K = C * l.kernel_h * l.kernel_w;
    const int P = OH * OW;

    Tensor dx(x.shape);
    std::vector<double> col(static_cast<std::size_t>(K) * P);
    std::vector<double> dcol(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        const double* xp = x.data.data() + static_cast<std::size_t>(n) * C * H * W;
        const double* dyp = dy.data.data() + static_cast<std::size_t>(n) * l.out_channels * P;

        if (grads) {
            im2col(xp, C, H, W, l.kernel_h, l.kernel_w, l.stride, l.pad_h, l.pad_w, OH, OW,
                   col.data());
            gemm_abt_acc(dyp, col.data(), grads->d_weights.data.data(), l.out_channels, K, P);
            for (int oc = 0; oc < l.out_channels; ++oc) {
                double acc = 0.0;
                const double* d = dyp + static_cast<std::size_t>(oc) * P;
                for (int p = 0; p < P; ++p) acc += d[p];
                grads->d_bias.data[oc] += acc;
            }
        }

        std::fill(dcol.begin(), dcol.end(), 0.0);
        gemm_atb_acc(l.weights.data.data(), dyp, dcol.data(), l.out_channels, K, P);
        col2im_acc(dcol.data(), C, H, W, l.kernel_h, l.kernel_w, l.stride, l.pad_h, l.pad_w, OH, OW,
                   dx.data.data() + static_cast<std::size_t>(n) * C * H * W);
    }
    return dx;
}

Tensor dense_forward(const LayerSpec& l, const Tensor& x) {
    const int N = x.shape[0];
    const int F = l.in_features, O = l.out_features;
    Tensor y({N, O});
    for (int n = 0; n < N; ++n) {
        const double* xp = x.data.data() + static_cast<std::size_t>(n) * F;
        double* yp = y.data.data() + static_cast<std::size_t>(n) * O;
        for (int o = 0; o < O; ++o) {
            const double* w = l.weights.data.data() + static_cast<std::size_t>(o) * F;
            double acc = l.bias.data[o];
            for (int i = 0; i < F; ++i) acc += w[i] * xp[i];
            yp[o] = acc;
        }
    }
    return y;
}

Tensor dense_backward(const LayerSpec& l, const Tensor& x, const Tensor& dy, LayerGrads* grads) {
    const int N = x.shape[0];
    const int F = l.in_features, O = l.out_features;
    Tensor dx({N, F});
    for (int n = 0; n < N; ++n) {
        const double* xp = x.data.data() + static_cast<std::size_t>(n) * F;
        const double* dyp = dy.data.data() + static_cast<std::size_t>(n) * O;
        double* dxp = dx.data.data() + static_cast<std::size_t>(n) * F;
        for (int o = 0; o < O; ++o) {
            const double g = dyp[o];
            const double* w = l.weights.data.data() + static_cast<std::size_t>(o) * F;
            for (int i = 0; i < F; ++i) dxp[i] += g * w[i];
            if (grads) {
                double* dw = grads->d_weights.data.data() + static_cast<std::size_t>(o) * F;
                for (int i = 0; i < F; ++i) dw[i] += g * xp[i];
                grads->d_bias.data[o] += g;
            }
        }
    }
    return dx;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (x.data[i] <= 0.0) dx.data[i] = 0.0;
    return dx;
}

Tensor avg_pool_forward(const LayerSpec& l, const Tensor& x) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OH = (H - l.pool_h) / l.pool_stride_h + 1;
    const int OW = (W - l.pool_w) / l.pool_stride_w + 1;
    const double inv = 1.0 / (l.pool_h * l.pool_w);
    Tensor y({N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* yp = y.data.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = 0.0;
                    for (int i = 0; i < l.pool_h; ++i) {
                        const double* row = xp + static_cast<std::size_t>(oh * l.pool_stride_h + i) * W +
                                            ow * l.pool_stride_w;
                        for (int j = 0; j < l.pool_w; ++j) acc += row[j];
                    }
                    yp[static_cast<std::size_t>(oh) * OW + ow] = acc * inv;
                }
        }
    return y;
}

Tensor avg_pool_backward(const LayerSpec& l, const Tensor& x, const Tensor& dy) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OH = dy.shape[2], OW = dy.shape[3];
    const double inv = 1.0 / (l.pool_h * l.pool_w);
    Tensor dx(x.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double* dxp = dx.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            const double* dyp = dy.data.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const double g = dyp[static_cast<std::size_t>(oh) * OW + ow] * inv;
                    for (int i = 0; i < l.pool_h; ++i) {
                        double* row = dxp + static_cast<std::size_t>(oh * l.pool_stride_h + i) * W +
                                      ow * l.pool_stride_w;
                        for (int j = 0; j < l.pool_w; ++j) row[j] += g;
                    }
                }
        }
    return dx;
}

Tensor max_pool_forward(const LayerSpec& l, const Tensor& x) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OH = (H - l.pool_h) / l.pool_stride_h + 1;
    const int OW = (W - l.pool_w) / l.pool_stride_w + 1;
    Tensor y({N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* yp = y.data.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double best = -1e308;
                    for (int i = 0; i < l.pool_h; ++i) {
                        const double* row = xp + static_cast<std::size_t>(oh * l.pool_stride_h + i) * W +
                                            ow * l.pool_stride_w;
                        for (int j = 0; j < l.pool_w; ++j)
                            if (row[j] > best) best = row[j];
                    }
                    yp[static_cast<std::size_t>(oh) * OW + ow] = best;
                }
        }
    return y;
}

// Ties route the gradient to the first maximum in (row, column) scan order;
// the LRP winner-take-all step uses the same rule.
Tensor max_pool_backward(const LayerSpec& l, const Tensor& x, const Tensor& dy) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OH = dy.shape[2], OW = dy.shape[3];
    Tensor dx(x.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* dxp = dx.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            const double* dyp = dy.data.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double best = -1e308;
                    int bi = 0, bj = 0;
                    for (int i = 0; i < l.pool_h; ++i)
                        for (int j = 0; j < l.pool_w; ++j) {
                            const double v = xp[static_cast<std::size_t>(oh * l.pool_stride_h + i) * W +
                                                ow * l.pool_stride_w + j];
                            if (v > best) {
                                best = v;
                                bi = i;
                                bj = j;
                            }
                        }
                    dxp[static_cast<std::size_t>(oh * l.pool_stride_h + bi) * W +
                        ow * l.pool_stride_w + bj] += dyp[static_cast<std::size_t>(oh) * OW + ow];
                }
        }
    return dx;
}

namespace {

// Iterates x as [N, C, spatial] regardless of rank ([N,C,H,W] or [N,F]).
struct ChannelView {
    int n, c, spatial;
};

ChannelView channel_view(const Tensor& x) {
    if (x.shape.size() == 4) return {x.shape[0], x.shape[1], x.shape[2] * x.shape[3]};
    return {x.shape[0], x.shape[1], 1};
}

}  // namespace

Tensor batch_norm_forward(const LayerSpec& l, const Tensor& x) {
    const ChannelView v = channel_view(x);
    Tensor y(x.shape);
    for (int c = 0; c < v.c; ++c) {
        const double inv_sd = 1.0 / std::sqrt(l.bn_var.data[c] + l.bn_eps);
        const double g = l.bn_gamma.data[c], b = l.bn_beta.data[c], m = l.bn_mean.data[c];
        for (int n = 0; n < v.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * v.c + c) * v.spatial;
            for (int s = 0; s < v.spatial; ++s)
                y.data[off + s] = g * (x.data[off + s] - m) * inv_sd + b;
        }
    }
    return y;
}

Tensor batch_norm_forward_train(LayerSpec& l, const Tensor& x, BatchNormCache& cache,
                                double momentum) {
    const ChannelView v = channel_view(x);
    const double m_count = static_cast<double>(v.n) * v.spatial;
    cache.xhat = Tensor(x.shape);
    cache.inv_sd.assign(v.c, 0.0);
    cache.batch_mean.assign(v.c, 0.0);

    Tensor y(x.shape);
    for (int c = 0; c < v.c; ++c) {
        double mean = 0.0;
        for (int n = 0; n < v.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * v.c + c) * v.spatial;
            for (int s = 0; s < v.spatial; ++s) mean += x.data[off + s];
        }
        mean /= m_count;
        double var = 0.0;
        for (int n = 0; n < v.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * v.c + c) * v.spatial;
            for (int s = 0; s < v.spatial; ++s) {
                const double d = x.data[off + s] - mean;
                var += d * d;
            }
        }
        var /= m_count;  // biased, matching the running statistic

        const double inv_sd = 1.0 / std::sqrt(var + l.bn_eps);
        cache.inv_sd[c] = inv_sd;
        cache.batch_mean[c] = mean;
        const double g = l.bn_gamma.data[c], b = l.bn_beta.data[c];
        for (int n = 0; n < v.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * v.c + c) * v.spatial;
            for (int s = 0; s < v.spatial; ++s) {
                const double xh = (x.data[off + s] - mean) * inv_sd;
                cache.xhat.data[off + s] = xh;
                y.data[off + s] = g * xh + b;
            }
        }

        l.bn_mean.data[c] = momentum * l.bn_mean.data[c] + (1.0 - momentum) * mean;
        l.bn_var.data[c] = momentum * l.bn_var.data[c] + (1.0 - momentum) * var;
    }
    return y;
}

Tensor batch_norm_backward(const LayerSpec& l, const BatchNormCache& cache, const Tensor& dy,
                           LayerGrads* grads) {
    const ChannelView v = channel_view(dy);
    const double m_count = static_cast<double>(v.n) * v.spatial;
    Tensor dx(dy.shape);
    for (int c = 0; c < v.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < v.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * v.c + c) * v.spatial;
            for (int s = 0; s < v.spatial; ++s) {
                sum_dy += dy.data[off + s];
                sum_dy_xhat += dy.data[off + s] * cache.xhat.data[off + s];
            }
        }
        if (grads) {
            grads->d_bn_beta.data[c] += sum_dy;
            grads->d_bn_gamma.data[c] += sum_dy_xhat;
        }
        const double g_inv = l.bn_gamma.data[c] * cache.inv_sd[c];
        const double mean_dy = sum_dy / m_count;
        const double mean_dy_xhat = sum_dy_xhat / m_count;
        for (int n = 0; n < v.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * v.c + c) * v.spatial;
            for (int s = 0; s < v.spatial; ++s)
                dx.data[off + s] =
                    g_inv * (dy.data[off + s] - mean_dy - cache.xhat.data[off + s] * mean_dy_xhat);
        }
    }
    return dx;
}

Tensor flatten_forward(const Tensor& x) {
    Tensor y = x;
    long long rest = 1;
    for (std::size_t i = 1; i < x.shape.size(); ++i) rest *= x.shape[i];
    y.shape = {x.shape[0], static_cast<int>(rest)};
    return y;
}

// ---------------------------------------------------------------------------

namespace {

Tensor layer_forward_inference(const LayerSpec& l, const Tensor& x) {
    switch (l.kind) {
        case LayerKind::conv2d: return conv2d_forward(l, x);
        case LayerKind::dense: return dense_forward(l, x);
        case LayerKind::relu: return relu_forward(x);
        case LayerKind::avg_pool: return avg_pool_forward(l, x);
        case LayerKind::max_pool: return max_pool_forward(l, x);
        case LayerKind::batch_norm: return batch_norm_forward(l, x);
        case LayerKind::flatten: return flatten_forward(x);
    }
    throw ShapeError("unknown layer kind in forward");
}

Tensor with_batch_dim(const Tensor& x) {
    Tensor y = x;
    y.shape.insert(y.shape.begin(), 1);
    return y;
}

Tensor without_batch_dim(const Tensor& x) {
    Tensor y = x;
    y.shape.erase(y.shape.begin());
    return y;
}

}  // namespace

std::pair<Tensor, ForwardTrace> forward(const NetworkSpec& net, const Tensor& input) {
    if (!input.same_shape(net.input_shape))
        throw ShapeError("forward: input shape " + shape_str(input.shape) +
                         " does not match network input " + shape_str(net.input_shape));
    ForwardTrace trace;
    trace.net = &net;
    Tensor x = with_batch_dim(input);
    for (const LayerSpec& l : net.layers) {
        Tensor y = layer_forward_inference(l, x);
        trace.steps.push_back({without_batch_dim(x), without_batch_dim(y)});
        x = std::move(y);
    }
    return {without_batch_dim(x), std::move(trace)};
}

Tensor forward_logits(const NetworkSpec& net, const Tensor& input) {
    if (!input.same_shape(net.input_shape))
        throw ShapeError("forward: input shape " + shape_str(input.shape) +
                         " does not match network input " + shape_str(net.input_shape));
    Tensor x = with_batch_dim(input);
    for (const LayerSpec& l : net.layers) x = layer_forward_inference(l, x);
    return without_batch_dim(x);
}

NetworkSpec fold_batchnorm(const NetworkSpec& net) {
    std::vector<LayerSpec> out;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (l.kind != LayerKind::batch_norm) {
            out.push_back(l);
            continue;
        }
        if (out.empty() ||
            (out.back().kind != LayerKind::conv2d && out.back().kind != LayerKind::dense))
            throw ConfigError("fold_batchnorm: batch_norm at layer " + std::to_string(i) +
                              " does not directly follow conv2d or dense");
        LayerSpec& prev = out.back();
        const int units =
            prev.kind == LayerKind::conv2d ? prev.out_channels : prev.out_features;
        const long long per_unit = prev.weights.size() / units;
        for (int u = 0; u < units; ++u) {
            const double scale = l.bn_gamma.data[u] / std::sqrt(l.bn_var.data[u] + l.bn_eps);
            double* w = prev.weights.data.data() + static_cast<std::size_t>(u) * per_unit;
            for (long long k = 0; k < per_unit; ++k) w[k] *= scale;
            prev.bias.data[u] =
                (prev.bias.data[u] - l.bn_mean.data[u]) * scale + l.bn_beta.data[u];
        }
    }
    return make_network(std::move(out), net.input_shape, net.n_classes);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'L', 'E', 'X', 'S', 'T', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

json layer_to_json(const LayerSpec& l) {
    json j{{"kind", layer_kind_name(l.kind)}};
    switch (l.kind) {
        case LayerKind::conv2d:
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["kernel_h"] = l.kernel_h;
            j["kernel_w"] = l.kernel_w;
            j["stride"] = l.stride;
            j["pad_h"] = l.pad_h;
            j["pad_w"] = l.pad_w;
            break;
        case LayerKind::dense:
            j["in_features"] = l.in_features;
            j["out_features"] = l.out_features;
            break;
        case LayerKind::avg_pool:
        case LayerKind::max_pool:
            j["pool_h"] = l.pool_h;
            j["pool_w"] = l.pool_w;
            j["stride_h"] = l.pool_stride_h;
            j["stride_w"] = l.pool_stride_w;
            break;
        case LayerKind::batch_norm:
            j["channels"] = l.channels;
            j["eps"] = l.bn_eps;
            break;
        default: break;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    const LayerKind kind = parse_layer_kind(j.at("kind").get<std::string>());
    switch (kind) {
        case LayerKind::conv2d: {
            LayerSpec l;
            l.kind = kind;
            l.in_channels = j.at("in_channels").get<int>();
            l.out_channels = j.at("out_channels").get<int>();
            l.kernel_h = j.at("kernel_h").get<int>();
            l.kernel_w = j.at("kernel_w").get<int>();
            l.stride = j.at("stride").get<int>();
            l.pad_h = j.at("pad_h").get<int>();
            l.pad_w = j.at("pad_w").get<int>();
            if (l.in_channels < 1 || l.out_channels < 1 || l.kernel_h < 1 || l.kernel_w < 1 ||
                l.stride < 1 || l.pad_h < 0 || l.pad_w < 0)
                throw FormatError("weight file: invalid conv2d geometry");
            l.weights = Tensor({l.out_channels, l.in_channels, l.kernel_h, l.kernel_w});
            l.bias = Tensor({l.out_channels});
            return l;
        }
        case LayerKind::dense: return dense(j.at("in_features").get<int>(), j.at("out_features").get<int>());
        case LayerKind::relu: return relu();
        case LayerKind::flatten: return flatten();
        case LayerKind::avg_pool:
        case LayerKind::max_pool: {
            LayerSpec l;
            l.kind = kind;
            l.pool_h = j.at("pool_h").get<int>();
            l.pool_w = j.at("pool_w").get<int>();
            l.pool_stride_h = j.at("stride_h").get<int>();
            l.pool_stride_w = j.at("stride_w").get<int>();
            if (l.pool_h < 1 || l.pool_w < 1 || l.pool_stride_h < 1 || l.pool_stride_w < 1)
                throw FormatError("weight file: invalid pool geometry");
            return l;
        }
        case LayerKind::batch_norm: return batch_norm(j.at("channels").get<int>(), j.at("eps").get<double>());
    }
    throw FormatError("weight file: unknown layer kind");
}

}  // namespace

void save_weights(const NetworkSpec& net, const std::string& path) {
    json layers = json::array();
    for (const LayerSpec& l : net.layers) layers.push_back(layer_to_json(l));
    const json header{{"input_shape", net.input_shape},
                      {"n_classes", net.n_classes},
                      {"layers", layers}};
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_weights: cannot write " + path);
    out.write(kMagic, 8);
    const std::uint32_t ver = kVersion;
    const auto hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    for (const LayerSpec& l : net.layers) {
        for (const Tensor* t : parameter_tensors(const_cast<LayerSpec&>(l))) {
            for (double v : t->data) {
                const float f = static_cast<float>(v);
                out.write(reinterpret_cast<const char*>(&f), 4);
            }
        }
    }
    if (!out) throw DataError("save_weights: write failed for " + path);
}

NetworkSpec load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_weights: cannot open " + path);

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw FormatError("load_weights: bad magic in " + path);
    std::uint32_t ver = 0, hlen = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in || ver != kVersion)
        throw FormatError("load_weights: unsupported format version " + std::to_string(ver) +
                          " in " + path);

    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw FormatError("load_weights: truncated header in " + path);

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw FormatError("load_weights: invalid header JSON in " + path + ": " + e.what());
    }

    std::vector<LayerSpec> layers;
    std::vector<int> input_shape;
    int n_classes = 0;
    try {
        input_shape = header.at("input_shape").get<std::vector<int>>();
        n_classes = header.at("n_classes").get<int>();
        for (const json& lj : header.at("layers")) layers.push_back(layer_from_json(lj));
    } catch (const json::exception& e) {
        throw FormatError("load_weights: malformed header in " + path + ": " + e.what());
    }

    NetworkSpec net = make_network(std::move(layers), std::move(input_shape), n_classes);
    for (LayerSpec& l : net.layers) {
        for (Tensor* t : parameter_tensors(l)) {
            for (double& v : t->data) {
                float f;
                in.read(reinterpret_cast<char*>(&f), 4);
                if (!in) throw FormatError("load_weights: truncated payload in " + path);
                v = static_cast<double>(f);
            }
        }
    }
    in.peek();
    if (!in.eof()) throw FormatError("load_weights: trailing bytes in " + path);
    return net;
}

}  // namespace lexstress::nn
