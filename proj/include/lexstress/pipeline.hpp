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

#ifndef LEXSTRESS_PIPELINE_HPP
#define LEXSTRESS_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lexstress/train.hpp"

namespace lexstress::pipeline {

// Single JSON configuration driving every subcommand. Scalar fields may be
// overridden by CLI flags; the output directory additionally honors the
// LEXSTRESS_OUT_DIR environment variable (flag > env > config > default).
struct PipelineConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";

    std::string manifest = "out/corpus/manifest.jsonl";
    std::string noise_wav = "out/corpus/noise.wav";
    std::string tracks_dir = "out/corpus/tracks";
    double window_s = 0.5;

    double stft_window_s = 0.02;
    double stft_hop_s = 0.01;

    struct Synth {
        int n_per_class = 200;
        int types_per_class = 20;
    } synth;

    struct Augment {
        double lowpass_hz = 3000.0;
        std::vector<double> snr_db = {20.0, 10.0, 3.0};
    } augment;

    struct Split {
        int train_types = 28;
        int val_types = 6;
        int test_types = 6;
    } split;

    struct Training {
        std::string arch = "lenet5";  // or "vgg_mini"
        std::string manifest_kind = "augmented";  // or "base"
        train::TrainConfig config;
    } training;

    struct Explain {
        std::string split = "test";  // train | validation | test
        std::string target = "predicted";  // or "label"
        double epsilon = 1e-6;
        double alpha = 1.0;
        std::vector<std::string> rules = {"composite", "alpha1", "epsilon", "z"};
    } explain;

    struct Analysis {
        double tau = 0.05;
        int permutations = 1000;
    } analysis;
};

// Parses and validates the config file; throws ConfigError on bad values.
PipelineConfig load_config(const std::string& path);

// Derived artifact locations.
std::string augmented_manifest_path(const PipelineConfig& cfg);
std::string checkpoint_weights_path(const PipelineConfig& cfg);
std::string checkpoint_sidecar_path(const PipelineConfig& cfg);

// Subcommands. Each validates its inputs before writing any output and is
// idempotent under a fixed config and seed.
void cmd_synth(const PipelineConfig& cfg, int n_per_class_override = -1);
std::string cmd_ingest(const PipelineConfig& cfg);
void cmd_augment(const PipelineConfig& cfg);
void cmd_train(const PipelineConfig& cfg);
void cmd_eval(const PipelineConfig& cfg);
void cmd_explain(const PipelineConfig& cfg);
void cmd_analyze(const PipelineConfig& cfg);
std::string cmd_report(const PipelineConfig& cfg);

}  // namespace lexstress::pipeline

#endif  // LEXSTRESS_PIPELINE_HPP
