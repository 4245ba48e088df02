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

#include "lexstress/lrp.hpp"

#include <algorithm>
#include <cmath>

#include "lexstress/errors.hpp"

namespace lexstress::lrp {

using nn::LayerKind;
using nn::LayerSpec;
using nn::NetworkSpec;

std::string rule_name(Rule r) {
    switch (r) {
        case Rule::z: return "z";
        case Rule::epsilon: return "epsilon";
        case Rule::alphabeta: return "alphabeta";
        case Rule::flat_identity: return "flat_identity";
        case Rule::composite: return "composite";
    }
    return "?";
}

Rule parse_rule(const std::string& name) {
    if (name == "z") return Rule::z;
    if (name == "epsilon") return Rule::epsilon;
    if (name == "alphabeta" || name == "alpha1") return Rule::alphabeta;
    if (name == "flat_identity" || name == "flat") return Rule::flat_identity;
    if (name == "composite") return Rule::composite;
    throw ConfigError("lrp: unknown rule '" + name + "'");
}

std::vector<Rule> composite_assignment(const NetworkSpec& net) {
    int n_conv = 0, n_dense = 0;
    for (const LayerSpec& l : net.layers) {
        if (l.kind == LayerKind::conv2d) ++n_conv;
        if (l.kind == LayerKind::dense) ++n_dense;
    }
    if (n_conv < 2 || n_dense < 1)
        throw ConfigError("composite_assignment: needs >= 2 conv layers and >= 1 dense layer, got " +
                          std::to_string(n_conv) + " conv / " + std::to_string(n_dense) + " dense");

    std::vector<Rule> rules(net.layers.size(), Rule::epsilon);
    int conv_seen = 0;
    Rule last_conv_rule = Rule::flat_identity;
    bool have_conv = false;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        switch (net.layers[i].kind) {
            case LayerKind::conv2d:
                ++conv_seen;
                last_conv_rule = conv_seen <= 2 ? Rule::flat_identity : Rule::alphabeta;
                have_conv = true;
                rules[i] = last_conv_rule;
                break;
            case LayerKind::dense:
                rules[i] = Rule::epsilon;
                break;
            case LayerKind::avg_pool:
            case LayerKind::max_pool:
                if (!have_conv)
                    throw ConfigError("composite_assignment: pooling at layer " + std::to_string(i) +
                                      " has no preceding convolution to inherit a rule from");
                rules[i] = last_conv_rule;
                break;
            default:
                // relu / flatten / batch_norm pass relevance through; the
                // entry is never consulted.
                rules[i] = last_conv_rule;
                break;
        }
    }
    return rules;
}

namespace {

struct LayerRule {
    Rule rule = Rule::z;
    double alpha = 1.0;
    double beta = 0.0;
};

double sign_pos(double v) { return v >= 0.0 ? 1.0 : -1.0; }

// Generic single-unit redistribution used by dense, conv, and avg_pool
// propagation. Callers iterate the contributions twice: once to accumulate
// the denominators, once to distribute.
struct UnitPools {
    double z = 0.0;        // full preactivation sum incl. bias
    double z_pos = 0.0;    // positive pool incl. positive bias part
    double z_neg = 0.0;    // negative pool incl. negative bias part
    long long count = 0;   // receptive field size (flat rule)
};

void add_contribution(UnitPools& u, double zij) {
    u.z += zij;
    if (zij > 0.0)
        u.z_pos += zij;
    else
        u.z_neg += zij;
    ++u.count;
}

void add_bias(UnitPools& u, double b) {
    u.z += b;
    if (b > 0.0)
        u.z_pos += b;
    else
        u.z_neg += b;
}

double z_share(const UnitPools& u, double zij, double r_out, const LayerRule& lr, double epsilon,
               const std::string& unit_name) {
    switch (lr.rule) {
        case Rule::z:
            if (u.z == 0.0)
                throw NumericError("lrp: z-rule singularity (Z_j = 0) at " + unit_name);
            return zij / u.z * r_out;
        case Rule::epsilon:
            return zij / (u.z + epsilon * sign_pos(u.z)) * r_out;
        case Rule::alphabeta: {
            double out = 0.0;
            if (zij > 0.0 && u.z_pos > 0.0) out += lr.alpha * zij / u.z_pos * r_out;
            if (zij < 0.0 && u.z_neg < 0.0) out += lr.beta * zij / u.z_neg * r_out;
            return out;
        }
        case Rule::flat_identity:
            return r_out / static_cast<double>(u.count);
        default:
            throw ConfigError("lrp: composite rule must be resolved per layer");
    }
}

std::vector<double> dense_relevance(const LayerSpec& l, const std::vector<double>& x,
                                    const std::vector<double>& r_out, const LayerRule& lr,
                                    double epsilon, int layer_index) {
    const int F = l.in_features, O = l.out_features;
    std::vector<double> r_in(static_cast<std::size_t>(F), 0.0);
    for (int j = 0; j < O; ++j) {
        const double rj = r_out[static_cast<std::size_t>(j)];
        if (rj == 0.0) continue;
        const double* w = l.weights.data.data() + static_cast<std::size_t>(j) * F;

        UnitPools u;
        for (int i = 0; i < F; ++i) add_contribution(u, w[i] * x[static_cast<std::size_t>(i)]);
        add_bias(u, l.bias.data[static_cast<std::size_t>(j)]);

        const std::string unit = "layer " + std::to_string(layer_index) + " (dense) unit " +
                                 std::to_string(j);
        if (lr.rule == Rule::flat_identity) {
            const double share = rj / static_cast<double>(F);
            for (int i = 0; i < F; ++i) r_in[static_cast<std::size_t>(i)] += share;
        } else {
            for (int i = 0; i < F; ++i)
                r_in[static_cast<std::size_t>(i)] +=
                    z_share(u, w[i] * x[static_cast<std::size_t>(i)], rj, lr, epsilon, unit);
        }
    }
    return r_in;
}

std::vector<double> conv_relevance(const LayerSpec& l, const std::vector<int>& in_shape,
                                   const std::vector<int>& out_shape, const std::vector<double>& x,
                                   const std::vector<double>& r_out, const LayerRule& lr,
                                   double epsilon, int layer_index) {
    const int C = in_shape[0], H = in_shape[1], W = in_shape[2];
    const int OC = out_shape[0], OH = out_shape[1], OW = out_shape[2];
    std::vector<double> r_in(x.size(), 0.0);

    for (int oc = 0; oc < OC; ++oc) {
        const double* wocc = l.weights.data.data() +
                             static_cast<std::size_t>(oc) * C * l.kernel_h * l.kernel_w;
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                const double rj =
                    r_out[(static_cast<std::size_t>(oc) * OH + oh) * OW + ow];
                if (rj == 0.0) continue;

                UnitPools u;
                for (int c = 0; c < C; ++c) {
                    for (int i = 0; i < l.kernel_h; ++i) {
                        const int ih = oh * l.stride - l.pad_h + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int j = 0; j < l.kernel_w; ++j) {
                            const int iw = ow * l.stride - l.pad_w + j;
                            if (iw < 0 || iw >= W) continue;
                            const double wij =
                                wocc[(static_cast<std::size_t>(c) * l.kernel_h + i) * l.kernel_w + j];
                            const double xi = x[(static_cast<std::size_t>(c) * H + ih) * W + iw];
                            add_contribution(u, wij * xi);
                        }
                    }
                }
                add_bias(u, l.bias.data[static_cast<std::size_t>(oc)]);

                const std::string unit = "layer " + std::to_string(layer_index) +
                                         " (conv2d) unit (oc=" + std::to_string(oc) +
                                         ", oh=" + std::to_string(oh) + ", ow=" + std::to_string(ow) +
                                         ")";
                for (int c = 0; c < C; ++c) {
                    for (int i = 0; i < l.kernel_h; ++i) {
                        const int ih = oh * l.stride - l.pad_h + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int j = 0; j < l.kernel_w; ++j) {
                            const int iw = ow * l.stride - l.pad_w + j;
                            if (iw < 0 || iw >= W) continue;
                            const std::size_t xi_idx =
                                (static_cast<std::size_t>(c) * H + ih) * W + iw;
                            if (lr.rule == Rule::flat_identity) {
                                r_in[xi_idx] += rj / static_cast<double>(u.count);
                            } else {
                                const double wij =
                                    wocc[(static_cast<std::size_t>(c) * l.kernel_h + i) * l.kernel_w +
                                         j];
                                r_in[xi_idx] += z_share(u, wij * x[xi_idx], rj, lr, epsilon, unit);
                            }
                        }
                    }
                }
            }
        }
    }
    return r_in;
}

// Average pooling treated as a fixed uniform-weight convolution (weight
// 1/(ph*pw), no bias) under the active rule.
std::vector<double> avg_pool_relevance(const LayerSpec& l, const std::vector<int>& in_shape,
                                       const std::vector<int>& out_shape,
                                       const std::vector<double>& x,
                                       const std::vector<double>& r_out, const LayerRule& lr,
                                       double epsilon, int layer_index) {
    const int C = in_shape[0], H = in_shape[1], W = in_shape[2];
    const int OH = out_shape[1], OW = out_shape[2];
    const double w = 1.0 / (l.pool_h * l.pool_w);
    std::vector<double> r_in(x.size(), 0.0);

    for (int c = 0; c < C; ++c) {
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                const double rj = r_out[(static_cast<std::size_t>(c) * OH + oh) * OW + ow];
                if (rj == 0.0) continue;

                UnitPools u;
                for (int i = 0; i < l.pool_h; ++i) {
                    const int ih = oh * l.pool_stride_h + i;
                    for (int j = 0; j < l.pool_w; ++j) {
                        const int iw = ow * l.pool_stride_w + j;
                        add_contribution(u, w * x[(static_cast<std::size_t>(c) * H + ih) * W + iw]);
                    }
                }

                const std::string unit = "layer " + std::to_string(layer_index) +
                                         " (avg_pool) unit (c=" + std::to_string(c) +
                                         ", oh=" + std::to_string(oh) + ", ow=" + std::to_string(ow) +
                                         ")";
                for (int i = 0; i < l.pool_h; ++i) {
                    const int ih = oh * l.pool_stride_h + i;
                    for (int j = 0; j < l.pool_w; ++j) {
                        const int iw = ow * l.pool_stride_w + j;
                        const std::size_t idx = (static_cast<std::size_t>(c) * H + ih) * W + iw;
                        if (lr.rule == Rule::flat_identity)
                            r_in[idx] += rj / static_cast<double>(u.count);
                        else
                            r_in[idx] += z_share(u, w * x[idx], rj, lr, epsilon, unit);
                    }
                }
            }
        }
    }
    return r_in;
}

// Winner-take-all: all relevance goes to the argmax input of each window
// (first maximum in scan order on ties, matching the backward pass).
std::vector<double> max_pool_relevance(const LayerSpec& l, const std::vector<int>& in_shape,
                                       const std::vector<int>& out_shape,
                                       const std::vector<double>& x,
                                       const std::vector<double>& r_out) {
    const int C = in_shape[0], H = in_shape[1], W = in_shape[2];
    const int OH = out_shape[1], OW = out_shape[2];
    std::vector<double> r_in(x.size(), 0.0);
    for (int c = 0; c < C; ++c) {
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                const double rj = r_out[(static_cast<std::size_t>(c) * OH + oh) * OW + ow];
                double best = -1e308;
                std::size_t best_idx = 0;
                for (int i = 0; i < l.pool_h; ++i) {
                    const int ih = oh * l.pool_stride_h + i;
                    for (int j = 0; j < l.pool_w; ++j) {
                        const int iw = ow * l.pool_stride_w + j;
                        const std::size_t idx = (static_cast<std::size_t>(c) * H + ih) * W + iw;
                        if (x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                r_in[best_idx] += rj;
            }
        }
    }
    return r_in;
}

}  // namespace

RelevanceMap relevance(const nn::ForwardTrace& trace, int target_class, const RuleConfig& cfg) {
    if (!trace.net || trace.steps.size() != trace.net->layers.size())
        throw ConfigError("lrp: trace does not cover the network");
    const NetworkSpec& net = *trace.net;
    if (target_class < 0 || target_class >= net.n_classes)
        throw ConfigError("lrp: target class " + std::to_string(target_class) + " out of range");
    if (cfg.epsilon <= 0.0) throw ConfigError("lrp: epsilon must be positive");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0 || std::abs(cfg.alpha + cfg.beta - 1.0) > 1e-12)
        throw ConfigError("lrp: alpha and beta must be nonnegative with alpha + beta = 1");
    for (const LayerSpec& l : net.layers)
        if (l.kind == LayerKind::batch_norm)
            throw ConfigError("lrp: network contains batch_norm; fold it before propagation");

    // Resolve the per-layer rule.
    std::vector<LayerRule> layer_rules(net.layers.size());
    if (cfg.rule == Rule::composite) {
        std::vector<Rule> map = cfg.composite_map;
        if (map.empty()) map = composite_assignment(net);
        if (map.size() != net.layers.size())
            throw ConfigError("lrp: composite map covers " + std::to_string(map.size()) +
                              " layers, network has " + std::to_string(net.layers.size()));
        for (std::size_t i = 0; i < map.size(); ++i) {
            if (map[i] == Rule::composite)
                throw ConfigError("lrp: composite map may not itself contain 'composite'");
            layer_rules[i] = {map[i], 1.0, 0.0};  // composite uses alpha = 1
        }
    } else {
        for (auto& lr : layer_rules) lr = {cfg.rule, cfg.alpha, cfg.beta};
    }

    // Output relevance: the target-class logit, other outputs zero.
    const nn::Tensor& logits = trace.steps.back().output;
    std::vector<double> r(logits.data.size(), 0.0);
    r[static_cast<std::size_t>(target_class)] = logits.data[static_cast<std::size_t>(target_class)];

    for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
        const LayerSpec& l = net.layers[static_cast<std::size_t>(li)];
        const nn::Tensor& x = trace.steps[static_cast<std::size_t>(li)].input;
        const nn::Tensor& y = trace.steps[static_cast<std::size_t>(li)].output;
        const LayerRule& lr = layer_rules[static_cast<std::size_t>(li)];

        switch (l.kind) {
            case LayerKind::dense:
                r = dense_relevance(l, x.data, r, lr, cfg.epsilon, li);
                break;
            case LayerKind::conv2d:
                r = conv_relevance(l, x.shape, y.shape, x.data, r, lr, cfg.epsilon, li);
                break;
            case LayerKind::avg_pool:
                r = avg_pool_relevance(l, x.shape, y.shape, x.data, r, lr, cfg.epsilon, li);
                break;
            case LayerKind::max_pool:
                r = max_pool_relevance(l, x.shape, y.shape, x.data, r);
                break;
            case LayerKind::relu:
            case LayerKind::flatten:
                break;  // relevance passes unchanged; flatten is a reshape
            case LayerKind::batch_norm:
                throw ConfigError("lrp: unfolded batch_norm in trace");
        }
    }

    RelevanceMap map;
    map.shape = net.input_shape;
    map.values = std::move(r);
    for (double v : map.values)
        if (!std::isfinite(v)) throw NumericError("lrp: non-finite relevance value");
    return map;
}

}  // namespace lexstress::lrp
