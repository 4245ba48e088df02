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

#ifndef LEXSTRESS_LRP_HPP
#define LEXSTRESS_LRP_HPP

#include <string>
#include <vector>

#include "lexstress/nn.hpp"

namespace lexstress::lrp {

// Relevance redistribution rules.
//   z:             R_i = sum_j (Z_ij / Z_j) R_j with Z_ij = W_ij * x_i
//   epsilon:       denominator Z_j + eps * sign(Z_j), sign(0) := +1
//   alphabeta:     positive / negative preactivation pools weighted by
//                  alpha / beta (alpha + beta = 1); an empty pool contributes
//                  zero
//   flat_identity: each output unit's relevance spread uniformly over its
//                  receptive field (identity whenever geometry is preserved)
//   composite:     flat_identity for the first two convolutions, alpha=1
//                  alphabeta for remaining convolutions, epsilon for dense
//                  layers; pooling follows its preceding convolution's rule
enum class Rule { z, epsilon, alphabeta, flat_identity, composite };

std::string rule_name(Rule r);
Rule parse_rule(const std::string& name);

struct RuleConfig {
    Rule rule = Rule::composite;
    double epsilon = 1e-6;
    double alpha = 1.0;
    double beta = 0.0;
    // Optional explicit per-layer assignment for composite (one entry per
    // network layer). Empty means derive it with composite_assignment().
    std::vector<Rule> composite_map;
};

// Input-shaped attribution matrix. For spectrogram networks the shape is
// [1, bins, frames]; flat inputs keep their own shape.
struct RelevanceMap {
    std::vector<int> shape;
    std::vector<double> values;

    bool is_grid() const { return shape.size() == 3 && shape[0] == 1; }
    int n_bins() const { return shape[1]; }
    int n_frames() const { return shape[2]; }
    double at(int bin, int frame) const {
        return values[static_cast<std::size_t>(bin) * n_frames() + frame];
    }
};

// Derives the composite per-layer rule map for a network. Requires at least
// two convolutional layers and one dense layer.
std::vector<Rule> composite_assignment(const nn::NetworkSpec& net);

// Backward relevance propagation over a forward trace. The output layer is
// initialized to the target class logit (other outputs zero) and relevance
// is redistributed layer by layer down to the input. The trace must come
// from a batch-norm-folded network.
RelevanceMap relevance(const nn::ForwardTrace& trace, int target_class, const RuleConfig& rules);

}  // namespace lexstress::lrp

#endif  // LEXSTRESS_LRP_HPP
