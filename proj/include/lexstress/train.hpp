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

#ifndef LEXSTRESS_TRAIN_HPP
#define LEXSTRESS_TRAIN_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lexstress/corpus.hpp"
#include "lexstress/nn.hpp"

namespace lexstress::train {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double gamma = 2.0;  // focal-loss focusing exponent
    double learning_rate = 1e-3;
    double decay_factor = 0.5;    // multiplied in every decay interval
    int decay_every_epochs = 5;
    int batch_size = 16;
    int epochs = 20;
    std::uint64_t seed = 0;
    AdamConfig adam;
    double bn_momentum = 0.9;
    // Input featurization (STFT geometry fed to the network).
    double stft_window_s = 0.02;
    double stft_hop_s = 0.01;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> validation_accuracy;
    std::vector<double> learning_rate;
    int best_epoch = -1;  // epoch of the retained checkpoint, -1 if none
};

// Class index convention: initial stress -> 0, final stress -> 1.
inline int stress_class(corpus::Stress s) { return s == corpus::Stress::initial ? 0 : 1; }

// Focal loss -(1-p)^gamma * ln p on the softmax probability p of the true
// class, with its analytic gradient w.r.t. the logits. gamma = 0 reduces to
// cross-entropy.
std::pair<double, nn::Tensor> focal_loss(const nn::Tensor& logits, int label, double gamma);

struct AdamState {
    std::vector<nn::Tensor> m, v;  // first/second moments, one per parameter tensor
    long long step = 0;
};

// One Adam update over a flat list of parameter tensors. State must either be
// empty (it is initialized to zeros) or match the parameter shapes.
void adam_step(const std::vector<nn::Tensor*>& params, const std::vector<const nn::Tensor*>& grads,
               AdamState& state, const AdamConfig& config, double learning_rate);

// Z-scored magnitude spectrogram of the sample as a [1, bins, frames] tensor.
nn::Tensor input_tensor(const corpus::Sample& sample, double window_s = 0.02,
                        double hop_s = 0.01);

// Focal-loss training with Adam over seeded shuffled mini-batches. Batch norm
// layers train on batch statistics; validation runs in inference mode after
// every epoch and the best-validation checkpoint is returned. With an empty
// validation list the final-epoch network is returned and accuracy records 0.
std::pair<nn::NetworkSpec, TrainHistory> train(const nn::NetworkSpec& net,
                                               const corpus::DatasetSplit& split,
                                               const TrainConfig& config);

// Fraction of argmax-correct predictions.
double evaluate(const nn::NetworkSpec& net, const std::vector<corpus::Sample>& samples,
                double window_s = 0.02, double hop_s = 0.01);

// Checkpoint = weight file + JSON sidecar (config, best epoch, history).
struct Checkpoint {
    nn::NetworkSpec net;
    TrainConfig config;
    TrainHistory history;
};

void save_checkpoint(const std::string& weights_path, const std::string& sidecar_path,
                     const nn::NetworkSpec& net, const TrainConfig& config,
                     const TrainHistory& history);
Checkpoint load_checkpoint(const std::string& weights_path, const std::string& sidecar_path);

}  // namespace lexstress::train

#endif  // LEXSTRESS_TRAIN_HPP
