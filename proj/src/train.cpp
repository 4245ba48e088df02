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

#include "lexstress/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "lexstress/dsp.hpp"
#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"

namespace lexstress::train {

using nlohmann::json;
using nn::LayerKind;
using nn::LayerSpec;
using nn::NetworkSpec;
using nn::Tensor;

std::pair<double, Tensor> focal_loss(const Tensor& logits, int label, double gamma) {
    const auto n = static_cast<int>(logits.data.size());
    if (n < 2) throw ShapeError("focal_loss: need at least 2 logits");
    if (label < 0 || label >= n) throw ShapeError("focal_loss: label out of range");
    if (gamma < 0.0) throw ConfigError("focal_loss: gamma must be >= 0");
    for (double z : logits.data)
        if (!std::isfinite(z)) throw NumericError("focal_loss: non-finite logit");

    const double zmax = *std::max_element(logits.data.begin(), logits.data.end());
    double sum = 0.0;
    for (double z : logits.data) sum += std::exp(z - zmax);
    const double lse = zmax + std::log(sum);

    std::vector<double> softmax(n);
    for (int k = 0; k < n; ++k) softmax[k] = std::exp(logits.data[k] - lse);

    const double log_p = logits.data[label] - lse;
    const double p = std::exp(log_p);
    const double q = -std::expm1(log_p);  // 1 - p, accurate near p = 1

    Tensor grad(logits.shape);
    if (q <= 0.0) return {0.0, grad};  // perfectly classified

    const double loss = -std::pow(q, gamma) * log_p;
    const double dloss_dp =
        (gamma > 0.0 ? gamma * std::pow(q, gamma - 1.0) * log_p : 0.0) - std::pow(q, gamma) / p;
    for (int k = 0; k < n; ++k) {
        const double dp_dz = p * ((k == label ? 1.0 : 0.0) - softmax[k]);
        grad.data[static_cast<std::size_t>(k)] = dloss_dp * dp_dz;
    }
    return {loss, grad};
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamConfig& config, double learning_rate) {
    if (params.size() != grads.size())
        throw ShapeError("adam_step: parameter/gradient list size mismatch");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape);
            state.v.emplace_back(p->shape);
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state does not match parameter list");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        const Tensor& g = *grads[t];
        if (p.shape != g.shape || p.shape != state.m[t].shape)
            throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(t));
        double* m = state.m[t].data.data();
        double* v = state.v[t].data.data();
        const double* gd = g.data.data();
        double* pd = p.data.data();
        const std::size_t n = p.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gd[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gd[i] * gd[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            pd[i] -= learning_rate * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

Tensor input_tensor(const corpus::Sample& sample, double window_s, double hop_s) {
    const dsp::Spectrogram spec = dsp::zscore(dsp::stft_magnitude(sample.clip, window_s, hop_s));
    Tensor t({1, spec.n_bins, spec.n_frames});
    t.data = spec.values;
    return t;
}

namespace {

bool is_trainable(const LayerSpec& l) {
    return l.kind == LayerKind::conv2d || l.kind == LayerKind::dense ||
           l.kind == LayerKind::batch_norm;
}

std::vector<Tensor*> trainable_tensors(NetworkSpec& net) {
    std::vector<Tensor*> out;
    for (LayerSpec& l : net.layers) {
        if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
            out.push_back(&l.weights);
            out.push_back(&l.bias);
        } else if (l.kind == LayerKind::batch_norm) {
            out.push_back(&l.bn_gamma);
            out.push_back(&l.bn_beta);
        }
    }
    return out;
}

struct BatchWork {
    std::vector<Tensor> inputs;             // per-layer batched input
    std::vector<nn::BatchNormCache> bn;     // per-layer cache (batch_norm only)
    std::vector<nn::LayerGrads> grads;      // per-layer parameter grads
};

Tensor forward_train(NetworkSpec& net, Tensor x, BatchWork& work, double bn_momentum) {
    work.inputs.clear();
    work.bn.assign(net.layers.size(), {});
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerSpec& l = net.layers[i];
        work.inputs.push_back(x);
        switch (l.kind) {
            case LayerKind::conv2d: x = nn::conv2d_forward(l, x); break;
            case LayerKind::dense: x = nn::dense_forward(l, x); break;
            case LayerKind::relu: x = nn::relu_forward(x); break;
            case LayerKind::avg_pool: x = nn::avg_pool_forward(l, x); break;
            case LayerKind::max_pool: x = nn::max_pool_forward(l, x); break;
            case LayerKind::flatten: x = nn::flatten_forward(x); break;
            case LayerKind::batch_norm:
                x = nn::batch_norm_forward_train(l, x, work.bn[i], bn_momentum);
                break;
        }
    }
    return x;
}

void backward_train(NetworkSpec& net, BatchWork& work, Tensor dy) {
    for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
        LayerSpec& l = net.layers[static_cast<std::size_t>(i)];
        const Tensor& x = work.inputs[static_cast<std::size_t>(i)];
        nn::LayerGrads* g = &work.grads[static_cast<std::size_t>(i)];
        switch (l.kind) {
            case LayerKind::conv2d: dy = nn::conv2d_backward(l, x, dy, g); break;
            case LayerKind::dense: dy = nn::dense_backward(l, x, dy, g); break;
            case LayerKind::relu: dy = nn::relu_backward(x, dy); break;
            case LayerKind::avg_pool: dy = nn::avg_pool_backward(l, x, dy); break;
            case LayerKind::max_pool: dy = nn::max_pool_backward(l, x, dy); break;
            case LayerKind::batch_norm:
                dy = nn::batch_norm_backward(l, work.bn[static_cast<std::size_t>(i)], dy, g);
                break;
            case LayerKind::flatten: {
                Tensor r = dy;
                r.shape = x.shape;
                dy = std::move(r);
                break;
            }
        }
    }
}

void reset_grads(NetworkSpec& net, std::vector<nn::LayerGrads>& grads) {
    grads.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        nn::LayerGrads& g = grads[i];
        if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
            if (g.d_weights.shape != l.weights.shape) g.d_weights = Tensor(l.weights.shape);
            else std::fill(g.d_weights.data.begin(), g.d_weights.data.end(), 0.0);
            if (g.d_bias.shape != l.bias.shape) g.d_bias = Tensor(l.bias.shape);
            else std::fill(g.d_bias.data.begin(), g.d_bias.data.end(), 0.0);
        } else if (l.kind == LayerKind::batch_norm) {
            if (g.d_bn_gamma.shape != l.bn_gamma.shape) g.d_bn_gamma = Tensor(l.bn_gamma.shape);
            else std::fill(g.d_bn_gamma.data.begin(), g.d_bn_gamma.data.end(), 0.0);
            if (g.d_bn_beta.shape != l.bn_beta.shape) g.d_bn_beta = Tensor(l.bn_beta.shape);
            else std::fill(g.d_bn_beta.data.begin(), g.d_bn_beta.data.end(), 0.0);
        }
    }
}

std::vector<const Tensor*> grad_tensors(const NetworkSpec& net,
                                        const std::vector<nn::LayerGrads>& grads) {
    std::vector<const Tensor*> out;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
            out.push_back(&grads[i].d_weights);
            out.push_back(&grads[i].d_bias);
        } else if (l.kind == LayerKind::batch_norm) {
            out.push_back(&grads[i].d_bn_gamma);
            out.push_back(&grads[i].d_bn_beta);
        }
    }
    return out;
}

double accuracy_on(const NetworkSpec& net, const std::vector<Tensor>& inputs,
                   const std::vector<int>& labels) {
    if (inputs.empty()) return 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor logits = nn::forward_logits(net, inputs[i]);
        const int pred = static_cast<int>(std::max_element(logits.data.begin(), logits.data.end()) -
                                          logits.data.begin());
        if (pred == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

}  // namespace

std::pair<NetworkSpec, TrainHistory> train(const NetworkSpec& net, const corpus::DatasetSplit& split,
                                           const TrainConfig& config) {
    if (config.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (config.learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
    if (config.gamma < 0.0) throw ConfigError("train: gamma must be >= 0");
    if (config.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (split.train.empty()) throw DataError("train: empty training split");

    NetworkSpec current = net;
    TrainHistory history;
    if (config.epochs == 0) return {current, history};

    // Featurize once; the input pipeline is deterministic.
    std::vector<Tensor> train_x, val_x;
    std::vector<int> train_y, val_y;
    for (const corpus::Sample& s : split.train) {
        train_x.push_back(input_tensor(s, config.stft_window_s, config.stft_hop_s));
        train_y.push_back(stress_class(s.alignment.stress));
    }
    for (const corpus::Sample& s : split.validation) {
        val_x.push_back(input_tensor(s, config.stft_window_s, config.stft_hop_s));
        val_y.push_back(stress_class(s.alignment.stress));
    }

    std::vector<Tensor*> params = trainable_tensors(current);
    AdamState adam;
    BatchWork work;
    Rng shuffle_rng(Rng::mix(config.seed, 0x7214ULL));

    NetworkSpec best = current;
    double best_acc = -1.0;

    std::vector<std::size_t> order(train_x.size());
    std::iota(order.begin(), order.end(), 0);

    const std::vector<int>& in_shape = current.input_shape;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.learning_rate *
                          std::pow(config.decay_factor,
                                   config.decay_every_epochs > 0 ? epoch / config.decay_every_epochs : 0);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        long long seen = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const int bsz = static_cast<int>(
                std::min<std::size_t>(config.batch_size, order.size() - start));

            std::vector<int> bshape = in_shape;
            bshape.insert(bshape.begin(), bsz);
            Tensor bx(bshape);
            const std::size_t per = train_x[0].data.size();
            for (int b = 0; b < bsz; ++b)
                std::copy_n(train_x[order[start + b]].data.begin(), per,
                            bx.data.begin() + static_cast<std::size_t>(b) * per);

            const int n_out = current.n_classes;
            Tensor dlogits;
            double batch_loss = 0.0;
            try {
                Tensor logits = forward_train(current, std::move(bx), work, config.bn_momentum);
                dlogits = Tensor(logits.shape);
                for (int b = 0; b < bsz; ++b) {
                    Tensor row({n_out});
                    std::copy_n(logits.data.begin() + static_cast<std::size_t>(b) * n_out, n_out,
                                row.data.begin());
                    auto [loss, g] = focal_loss(row, train_y[order[start + b]], config.gamma);
                    batch_loss += loss;
                    for (int k = 0; k < n_out; ++k)
                        dlogits.data[static_cast<std::size_t>(b) * n_out + k] = g.data[k] / bsz;
                }
            } catch (const NumericError& e) {
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(start / config.batch_size) + ": " + e.what());
            }
            batch_loss /= bsz;
            if (!std::isfinite(batch_loss))
                throw NumericError("train: diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(start / config.batch_size));

            reset_grads(current, work.grads);
            backward_train(current, work, std::move(dlogits));
            adam_step(params, grad_tensors(current, work.grads), adam, config.adam, lr);

            epoch_loss += batch_loss * bsz;
            seen += bsz;
        }

        const double val_acc = accuracy_on(current, val_x, val_y);
        history.train_loss.push_back(epoch_loss / static_cast<double>(seen));
        history.validation_accuracy.push_back(val_acc);
        history.learning_rate.push_back(lr);
        if (val_acc > best_acc) {
            best_acc = val_acc;
            best = current;
            history.best_epoch = epoch;
        }
    }

    if (val_x.empty()) {
        best = current;  // no validation signal; keep the final epoch
        history.best_epoch = config.epochs - 1;
    }
    return {std::move(best), std::move(history)};
}

double evaluate(const nn::NetworkSpec& net, const std::vector<corpus::Sample>& samples,
                double window_s, double hop_s) {
    if (samples.empty()) throw DataError("evaluate: no samples");
    int correct = 0;
    for (const corpus::Sample& s : samples) {
        const Tensor logits = nn::forward_logits(net, input_tensor(s, window_s, hop_s));
        const int pred = static_cast<int>(std::max_element(logits.data.begin(), logits.data.end()) -
                                          logits.data.begin());
        if (pred == stress_class(s.alignment.stress)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

json config_to_json(const TrainConfig& c) {
    return json{{"gamma", c.gamma},
                {"learning_rate", c.learning_rate},
                {"decay_factor", c.decay_factor},
                {"decay_every_epochs", c.decay_every_epochs},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"beta1", c.adam.beta1},
                {"beta2", c.adam.beta2},
                {"adam_eps", c.adam.eps},
                {"bn_momentum", c.bn_momentum},
                {"stft_window_s", c.stft_window_s},
                {"stft_hop_s", c.stft_hop_s}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.gamma = j.at("gamma").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.decay_factor = j.at("decay_factor").get<double>();
    c.decay_every_epochs = j.at("decay_every_epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.adam.beta1 = j.at("beta1").get<double>();
    c.adam.beta2 = j.at("beta2").get<double>();
    c.adam.eps = j.at("adam_eps").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.stft_window_s = j.at("stft_window_s").get<double>();
    c.stft_hop_s = j.at("stft_hop_s").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& weights_path, const std::string& sidecar_path,
                     const nn::NetworkSpec& net, const TrainConfig& config,
                     const TrainHistory& history) {
    nn::save_weights(net, weights_path);
    const json j{{"config", config_to_json(config)},
                 {"best_epoch", history.best_epoch},
                 {"history",
                  {{"train_loss", history.train_loss},
                   {"validation_accuracy", history.validation_accuracy},
                   {"learning_rate", history.learning_rate}}}};
    std::ofstream out(sidecar_path);
    if (!out) throw DataError("save_checkpoint: cannot write " + sidecar_path);
    out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& weights_path, const std::string& sidecar_path) {
    Checkpoint ck;
    ck.net = nn::load_weights(weights_path);
    std::ifstream in(sidecar_path);
    if (!in) throw DataError("load_checkpoint: cannot open " + sidecar_path);
    json j;
    try {
        in >> j;
        ck.config = config_from_json(j.at("config"));
        ck.history.best_epoch = j.at("best_epoch").get<int>();
        ck.history.train_loss = j.at("history").at("train_loss").get<std::vector<double>>();
        ck.history.validation_accuracy =
            j.at("history").at("validation_accuracy").get<std::vector<double>>();
        ck.history.learning_rate = j.at("history").at("learning_rate").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw FormatError("load_checkpoint: malformed sidecar " + sidecar_path + ": " + e.what());
    }
    return ck;
}

}  // namespace lexstress::train
