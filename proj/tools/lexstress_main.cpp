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

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lexstress/errors.hpp"
#include "lexstress/pipeline.hpp"

namespace {

using lexstress::pipeline::PipelineConfig;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string rule;
    long long seed = -1;
    int n_per_class = -1;
    int epochs = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("-c,--config", flags.config_path, "pipeline config JSON")->required();
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--out-dir", flags.out_dir, "override the output directory");
}

// Flag > environment > config file > built-in default.
PipelineConfig resolve(const CommonFlags& flags) {
    PipelineConfig cfg = lexstress::pipeline::load_config(flags.config_path);
    if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.epochs >= 0) cfg.training.config.epochs = flags.epochs;
    if (!flags.rule.empty()) cfg.explain.rules = {flags.rule};
    cfg.training.config.seed = cfg.seed;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "lexstress: trains small CNN stress classifiers on word spectrograms and explains "
        "them with layerwise relevance propagation"};
    app.require_subcommand(1);

    CommonFlags flags;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic disyllable corpus");
    add_common(synth, flags);
    synth->add_option("--n-per-class", flags.n_per_class, "samples per stress class");

    CLI::App* ingest = app.add_subcommand("ingest", "validate a corpus and compute vowel statistics");
    add_common(ingest, flags);

    CLI::App* augment = app.add_subcommand("augment", "add low-pass and noise-mixed training rows");
    add_common(augment, flags);

    CLI::App* train_cmd = app.add_subcommand("train", "train the classifier");
    add_common(train_cmd, flags);
    train_cmd->add_option("--epochs", flags.epochs, "override train.epochs");

    CLI::App* eval = app.add_subcommand("eval", "evaluate the checkpoint per split");
    add_common(eval, flags);

    CLI::App* explain = app.add_subcommand("explain", "write per-sample relevance maps");
    add_common(explain, flags);
    explain->add_option("--rule", flags.rule, "explain only this rule");

    CLI::App* analyze = app.add_subcommand("analyze", "relevance region/feature analysis tables");
    add_common(analyze, flags);
    analyze->add_option("--rule", flags.rule, "analyze only this rule");

    CLI::App* report = app.add_subcommand("report", "summarize artifacts");
    add_common(report, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        const PipelineConfig cfg = resolve(flags);
        if (synth->parsed()) {
            lexstress::pipeline::cmd_synth(cfg, flags.n_per_class);
        } else if (ingest->parsed()) {
            std::cout << lexstress::pipeline::cmd_ingest(cfg);
        } else if (augment->parsed()) {
            lexstress::pipeline::cmd_augment(cfg);
        } else if (train_cmd->parsed()) {
            lexstress::pipeline::cmd_train(cfg);
        } else if (eval->parsed()) {
            lexstress::pipeline::cmd_eval(cfg);
        } else if (explain->parsed()) {
            lexstress::pipeline::cmd_explain(cfg);
        } else if (analyze->parsed()) {
            lexstress::pipeline::cmd_analyze(cfg);
        } else if (report->parsed()) {
            std::cout << lexstress::pipeline::cmd_report(cfg);
        }
    } catch (const lexstress::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const lexstress::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const lexstress::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const lexstress::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
