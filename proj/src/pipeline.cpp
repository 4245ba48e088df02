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

#include "lexstress/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lexstress/analysis.hpp"
#include "lexstress/corpus.hpp"
#include "lexstress/dsp.hpp"
#include "lexstress/errors.hpp"
#include "lexstress/lrp.hpp"
#include "lexstress/nn.hpp"
#include "lexstress/pngio.hpp"
#include "lexstress/util.hpp"
#include "lexstress/wav.hpp"

namespace lexstress::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
    ensure_dir(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

}  // namespace

std::string augmented_manifest_path(const PipelineConfig& cfg) {
    return (fs::path(cfg.manifest).parent_path() / "manifest_augmented.jsonl").string();
}

std::string checkpoint_weights_path(const PipelineConfig& cfg) {
    return (fs::path(cfg.out_dir) / "train" / "checkpoint.bin").string();
}

std::string checkpoint_sidecar_path(const PipelineConfig& cfg) {
    return (fs::path(cfg.out_dir) / "train" / "checkpoint.json").string();
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
    }

    PipelineConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.manifest = j.value("manifest", cfg.manifest);
        cfg.noise_wav = j.value("noise_wav", cfg.noise_wav);
        cfg.tracks_dir = j.value("tracks_dir", cfg.tracks_dir);
        cfg.window_s = j.value("window_s", cfg.window_s);

        if (j.contains("stft")) {
            cfg.stft_window_s = j["stft"].value("window_s", cfg.stft_window_s);
            cfg.stft_hop_s = j["stft"].value("hop_s", cfg.stft_hop_s);
        }
        if (j.contains("synth")) {
            cfg.synth.n_per_class = j["synth"].value("n_per_class", cfg.synth.n_per_class);
            cfg.synth.types_per_class =
                j["synth"].value("types_per_class", cfg.synth.types_per_class);
        }
        if (j.contains("augment")) {
            cfg.augment.lowpass_hz = j["augment"].value("lowpass_hz", cfg.augment.lowpass_hz);
            cfg.augment.snr_db =
                j["augment"].value("snr_db", cfg.augment.snr_db);
        }
        if (j.contains("split")) {
            cfg.split.train_types = j["split"].value("train_types", cfg.split.train_types);
            cfg.split.val_types = j["split"].value("val_types", cfg.split.val_types);
            cfg.split.test_types = j["split"].value("test_types", cfg.split.test_types);
        }
        if (j.contains("train")) {
            const json& t = j["train"];
            cfg.training.arch = t.value("arch", cfg.training.arch);
            cfg.training.manifest_kind = t.value("manifest", cfg.training.manifest_kind);
            train::TrainConfig& tc = cfg.training.config;
            tc.gamma = t.value("gamma", tc.gamma);
            tc.learning_rate = t.value("learning_rate", tc.learning_rate);
            tc.decay_factor = t.value("decay_factor", tc.decay_factor);
            tc.decay_every_epochs = t.value("decay_every_epochs", tc.decay_every_epochs);
            tc.batch_size = t.value("batch_size", tc.batch_size);
            tc.epochs = t.value("epochs", tc.epochs);
            tc.adam.beta1 = t.value("beta1", tc.adam.beta1);
            tc.adam.beta2 = t.value("beta2", tc.adam.beta2);
            tc.adam.eps = t.value("adam_eps", tc.adam.eps);
            tc.bn_momentum = t.value("bn_momentum", tc.bn_momentum);
        }
        if (j.contains("explain")) {
            const json& e = j["explain"];
            cfg.explain.split = e.value("split", cfg.explain.split);
            cfg.explain.target = e.value("target", cfg.explain.target);
            cfg.explain.epsilon = e.value("epsilon", cfg.explain.epsilon);
            cfg.explain.alpha = e.value("alpha", cfg.explain.alpha);
            cfg.explain.rules = e.value("rules", cfg.explain.rules);
        }
        if (j.contains("analysis")) {
            cfg.analysis.tau = j["analysis"].value("tau", cfg.analysis.tau);
            cfg.analysis.permutations =
                j["analysis"].value("permutations", cfg.analysis.permutations);
        }
    } catch (const json::exception& e) {
        throw ConfigError("config: malformed field in " + path + ": " + e.what());
    }

    if (const char* env = std::getenv("LEXSTRESS_OUT_DIR"); env && *env) cfg.out_dir = env;

    // Full validation before any command touches outputs.
    if (cfg.window_s <= 0.0) throw ConfigError("config: window_s must be positive");
    if (cfg.stft_window_s <= 0.0 || cfg.stft_hop_s <= 0.0)
        throw ConfigError("config: stft window_s and hop_s must be positive");
    if (cfg.synth.n_per_class < 0) throw ConfigError("config: synth.n_per_class must be >= 0");
    if (cfg.synth.types_per_class < 1)
        throw ConfigError("config: synth.types_per_class must be >= 1");
    if (cfg.augment.lowpass_hz <= 0.0)
        throw ConfigError("config: augment.lowpass_hz must be positive");
    if (cfg.augment.snr_db.size() != 3)
        throw ConfigError("config: augment.snr_db must list exactly 3 levels");
    if (cfg.split.train_types < 0 || cfg.split.val_types < 0 || cfg.split.test_types < 0)
        throw ConfigError("config: split type counts must be >= 0");
    if (cfg.training.arch != "lenet5" && cfg.training.arch != "vgg_mini")
        throw ConfigError("config: train.arch must be 'lenet5' or 'vgg_mini'");
    if (cfg.training.manifest_kind != "augmented" && cfg.training.manifest_kind != "base")
        throw ConfigError("config: train.manifest must be 'augmented' or 'base'");
    if (cfg.training.config.gamma < 0.0) throw ConfigError("config: train.gamma must be >= 0");
    if (cfg.training.config.learning_rate <= 0.0)
        throw ConfigError("config: train.learning_rate must be positive");
    if (cfg.training.config.batch_size < 1)
        throw ConfigError("config: train.batch_size must be >= 1");
    if (cfg.training.config.epochs < 0) throw ConfigError("config: train.epochs must be >= 0");
    if (cfg.explain.split != "train" && cfg.explain.split != "validation" &&
        cfg.explain.split != "test")
        throw ConfigError("config: explain.split must be train, validation, or test");
    if (cfg.explain.target != "predicted" && cfg.explain.target != "label")
        throw ConfigError("config: explain.target must be 'predicted' or 'label'");
    if (cfg.explain.epsilon <= 0.0) throw ConfigError("config: explain.epsilon must be positive");
    if (cfg.explain.rules.empty()) throw ConfigError("config: explain.rules must not be empty");
    for (const std::string& r : cfg.explain.rules) lrp::parse_rule(r);  // rejects unknown names
    if (cfg.analysis.tau <= 0.0 || cfg.analysis.tau >= 1.0)
        throw ConfigError("config: analysis.tau must be in (0, 1)");
    if (cfg.analysis.permutations < 1)
        throw ConfigError("config: analysis.permutations must be >= 1");

    cfg.training.config.seed = cfg.seed;
    cfg.training.config.stft_window_s = cfg.stft_window_s;
    cfg.training.config.stft_hop_s = cfg.stft_hop_s;
    return cfg;
}

// ---------------------------------------------------------------------------
// synth

namespace {

struct TypeParams {
    corpus::SynthParams synth;
    double f3_center = 2850.0;
    double f3_bandwidth = 260.0;
};

TypeParams type_params(const PipelineConfig& cfg, corpus::Stress stress, int type_idx) {
    Rng rng(Rng::mix(cfg.seed, Rng::mix(0x7e9eULL, (stress == corpus::Stress::initial ? 1 : 2) *
                                                        1000ULL +
                                                    static_cast<std::uint64_t>(type_idx))));
    TypeParams tp;
    corpus::SynthParams& p = tp.synth;
    p.sample_rate = 16000;
    p.window_s = cfg.window_s;
    p.base_f0 = rng.uniform(100.0, 120.0);
    p.initial_f1 = rng.uniform(580.0, 720.0);
    p.initial_f2 = rng.uniform(960.0, 1120.0);
    p.final_f1 = rng.uniform(410.0, 520.0);
    p.final_f2 = rng.uniform(810.0, 930.0);
    p.bandwidth_f1 = 160.0;
    p.bandwidth_f2 = 200.0;
    p.vowel_duration_s = rng.uniform(0.09, 0.11);
    tp.f3_center = rng.uniform(2700.0, 2950.0);
    return tp;
}

std::string type_label(corpus::Stress stress, int type_idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn_%s_%02d",
                  stress == corpus::Stress::initial ? "is" : "fs", type_idx);
    return buf;
}

std::string sample_id(corpus::Stress stress, int type_idx, int sample_idx) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s_t%02d_s%03d",
                  stress == corpus::Stress::initial ? "is" : "fs", type_idx, sample_idx);
    return buf;
}

// Ground-truth feature track in window coordinates: per-frame F0/F1/F2 from
// the synthesis parameters over the vowel intervals, a nominal F3, and the
// frame intensity measured from the windowed audio.
analysis::FeatureTrack ground_truth_track(const AudioClip& windowed,
                                          const corpus::Alignment& rebased,
                                          const TypeParams& tp, corpus::Stress stress,
                                          double stft_window_s, double stft_hop_s) {
    const corpus::SynthParams& p = tp.synth;
    const int sr = windowed.sample_rate;
    const int win = static_cast<int>(std::llround(stft_window_s * sr));
    const int hop = static_cast<int>(std::llround(stft_hop_s * sr));
    const int n_frames = static_cast<int>((static_cast<long long>(windowed.samples.size()) - win) / hop) + 1;

    const bool initial_stressed = (stress == corpus::Stress::initial);
    const corpus::Phone* vowels[2] = {nullptr, nullptr};
    for (const corpus::Phone& ph : rebased.phones) {
        if (!ph.is_vowel) continue;
        if (!vowels[0])
            vowels[0] = &ph;
        else
            vowels[1] = &ph;
    }

    analysis::FeatureTrack track;
    for (int f = 0; f < n_frames; ++f) {
        const double t = f * stft_hop_s;
        analysis::TrackFrame tf;

        double rms = 0.0;
        for (int i = 0; i < win; ++i) {
            const double v = windowed.samples[static_cast<std::size_t>(f) * hop + i];
            rms += v * v;
        }
        rms = std::sqrt(rms / win);
        tf.intensity_db = 20.0 * std::log10(rms + 1e-9);

        for (int side = 0; side < 2; ++side) {
            const corpus::Phone* v = vowels[side];
            if (!v || t < v->start || t >= v->end) continue;
            const bool stressed_side = (side == 0) == initial_stressed;
            tf.f0 = p.base_f0 * (stressed_side ? p.stressed_f0_mult : 1.0);
            tf.f1 = side == 0 ? p.initial_f1 : p.final_f1;
            tf.f2 = side == 0 ? p.initial_f2 : p.final_f2;
            tf.b1 = p.bandwidth_f1;
            tf.b2 = p.bandwidth_f2;
            tf.f3 = tp.f3_center;
            tf.b3 = tp.f3_bandwidth;
        }
        track.frames.push_back(tf);
    }
    return track;
}

AudioClip make_noise_clip(std::uint64_t seed, int sample_rate, double duration_s) {
    Rng rng(Rng::mix(seed, 0x4015eULL));
    AudioClip noise;
    noise.sample_rate = sample_rate;
    noise.samples.resize(static_cast<std::size_t>(std::llround(duration_s * sample_rate)));
    for (double& v : noise.samples) v = 0.18 * rng.normal();
    noise = dsp::lowpass(noise, 4000.0);
    for (double& v : noise.samples) v = std::clamp(v, -1.0, 1.0);
    return noise;
}

}  // namespace

void cmd_synth(const PipelineConfig& cfg, int n_per_class_override) {
    const int n_per_class = n_per_class_override >= 0 ? n_per_class_override : cfg.synth.n_per_class;
    const fs::path corpus_dir = fs::path(cfg.manifest).parent_path();
    ensure_dir(corpus_dir / "audio");
    ensure_dir(corpus_dir / "align");
    ensure_dir(cfg.tracks_dir);
    ensure_dir(fs::path(cfg.noise_wav).parent_path());

    write_wav(cfg.noise_wav, make_noise_clip(cfg.seed, 16000, 2.0));

    std::ofstream manifest = open_out(cfg.manifest);
    if (n_per_class == 0)
        std::cerr << "synth: n_per_class is 0, writing an empty manifest\n";

    const corpus::Stress classes[2] = {corpus::Stress::initial, corpus::Stress::final};
    for (corpus::Stress stress : classes) {
        for (int i = 0; i < n_per_class; ++i) {
            const int type_idx = i % cfg.synth.types_per_class;
            const int sample_idx = i / cfg.synth.types_per_class;
            TypeParams tp = type_params(cfg, stress, type_idx);
            tp.synth.word_label = type_label(stress, type_idx);

            const std::uint64_t sample_seed =
                Rng::mix(cfg.seed, Rng::mix(stress == corpus::Stress::initial ? 11 : 22,
                                            static_cast<std::uint64_t>(i)));
            Rng jitter(Rng::mix(sample_seed, 0x71aeULL));
            tp.synth.base_f0 *= jitter.uniform(0.98, 1.02);
            tp.synth.amplitude *= jitter.uniform(0.92, 1.08);
            tp.synth.vowel_duration_s *= jitter.uniform(0.96, 1.04);

            auto [clip, align] = corpus::synthesize_disyllable(stress, sample_seed, tp.synth);
            const std::string id = sample_id(stress, type_idx, sample_idx);

            write_wav((corpus_dir / "audio" / (id + ".wav")).string(), clip);
            corpus::save_alignment((corpus_dir / "align" / (id + ".json")).string(), align);

            const AudioClip windowed = corpus::extract_word_window(clip, align, cfg.window_s);
            const corpus::Alignment rebased = corpus::rebase_alignment(align, align.word_start);
            analysis::save_track_csv(
                (fs::path(cfg.tracks_dir) / (id + ".csv")).string(),
                ground_truth_track(windowed, rebased, tp, stress, cfg.stft_window_s, cfg.stft_hop_s),
                cfg.stft_hop_s);

            const json row{{"audio_path", "audio/" + id + ".wav"},
                           {"alignment_path", "align/" + id + ".json"},
                           {"word_type", tp.synth.word_label},
                           {"source_id", id}};
            manifest << row.dump() << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// ingest

std::string cmd_ingest(const PipelineConfig& cfg) {
    if (!fs::exists(cfg.manifest))
        throw DataError("ingest: manifest not found at " + cfg.manifest +
                        "; run 'lexstress synth' or point the config at your corpus");
    const std::vector<corpus::Sample> samples = corpus::load_manifest(cfg.manifest, cfg.window_s);

    std::map<std::string, int> types;
    int n_initial = 0, n_final = 0;
    for (const corpus::Sample& s : samples) {
        ++types[s.word_type];
        (s.alignment.stress == corpus::Stress::initial ? n_initial : n_final)++;
    }

    std::ostringstream summary;
    summary << "samples: " << samples.size() << " (initial " << n_initial << ", final " << n_final
            << "), word types: " << types.size() << "\n";

    auto summary_csv = open_out(fs::path(cfg.out_dir) / "ingest" / "summary.csv");
    summary_csv << "name,value\n";
    summary_csv << "samples," << samples.size() << "\n";
    summary_csv << "initial_stress," << n_initial << "\n";
    summary_csv << "final_stress," << n_final << "\n";
    summary_csv << "word_types," << types.size() << "\n";

    if (n_initial > 0 && n_final > 0) {
        const dsp::RatioStats stats = dsp::vowel_ratio_stats(samples);
        std::vector<double> amp_i, amp_f, dur_i, dur_f;
        for (const auto& ps : stats.per_sample) {
            if (ps.stress == corpus::Stress::initial) {
                amp_i.push_back(ps.amplitude_ratio);
                dur_i.push_back(ps.duration_ratio);
            } else {
                amp_f.push_back(ps.amplitude_ratio);
                dur_f.push_back(ps.duration_ratio);
            }
        }
        const dsp::BootstrapCI amp_ci = dsp::bootstrap_mean_diff(amp_i, amp_f, 1000, 0.95, cfg.seed);
        const dsp::BootstrapCI dur_ci =
            dsp::bootstrap_mean_diff(dur_i, dur_f, 1000, 0.95, Rng::mix(cfg.seed, 2));

        auto stats_csv = open_out(fs::path(cfg.out_dir) / "ingest" / "stats.csv");
        stats_csv << "measure,mean_initial,sd_initial,mean_final,sd_final,mean_diff,ci_low,ci_high,"
                     "replicates,confidence,skipped\n";
        stats_csv << "amplitude_ratio," << fmt(stats.amplitude_mean_initial) << ","
                  << fmt(stats.amplitude_sd_initial) << "," << fmt(stats.amplitude_mean_final) << ","
                  << fmt(stats.amplitude_sd_final) << "," << fmt(amp_ci.mean_diff) << ","
                  << fmt(amp_ci.ci_low) << "," << fmt(amp_ci.ci_high) << "," << amp_ci.replicates
                  << "," << fmt(amp_ci.confidence) << "," << stats.skipped << "\n";
        stats_csv << "duration_ratio," << fmt(stats.duration_mean_initial) << ","
                  << fmt(stats.duration_sd_initial) << "," << fmt(stats.duration_mean_final) << ","
                  << fmt(stats.duration_sd_final) << "," << fmt(dur_ci.mean_diff) << ","
                  << fmt(dur_ci.ci_low) << "," << fmt(dur_ci.ci_high) << "," << dur_ci.replicates
                  << "," << fmt(dur_ci.confidence) << "," << stats.skipped << "\n";

        summary << "amplitude ratio: initial " << fmt(stats.amplitude_mean_initial) << " (sd "
                << fmt(stats.amplitude_sd_initial) << ") vs final "
                << fmt(stats.amplitude_mean_final) << " (sd " << fmt(stats.amplitude_sd_final)
                << "); diff " << fmt(amp_ci.mean_diff) << " CI [" << fmt(amp_ci.ci_low) << ", "
                << fmt(amp_ci.ci_high) << "]\n";
        summary << "duration ratio: initial " << fmt(stats.duration_mean_initial) << " vs final "
                << fmt(stats.duration_mean_final) << "; diff " << fmt(dur_ci.mean_diff) << " CI ["
                << fmt(dur_ci.ci_low) << ", " << fmt(dur_ci.ci_high) << "]\n";
    }
    return summary.str();
}

// ---------------------------------------------------------------------------
// augment

void cmd_augment(const PipelineConfig& cfg) {
    if (!fs::exists(cfg.manifest))
        throw DataError("augment: manifest not found at " + cfg.manifest +
                        "; run 'lexstress synth' first");
    if (!fs::exists(cfg.noise_wav))
        throw ConfigError("augment: noise WAV not found at " + cfg.noise_wav);

    const std::vector<corpus::Sample> samples = corpus::load_manifest(cfg.manifest, cfg.window_s);
    const corpus::DatasetSplit split = corpus::split_by_word_type(
        samples, cfg.split.train_types, cfg.split.val_types, cfg.split.test_types, cfg.seed);
    const AudioClip noise = read_wav(cfg.noise_wav);

    const fs::path corpus_dir = fs::path(cfg.manifest).parent_path();
    ensure_dir(corpus_dir / "augmented");

    // Copy every base row verbatim, then append augmented rows for the
    // training split only.
    std::ifstream base_in(cfg.manifest);
    std::ofstream out = open_out(augmented_manifest_path(cfg));
    std::string line;
    while (std::getline(base_in, line)) {
        if (line.find_first_not_of(" \t\r") != std::string::npos) out << line << "\n";
    }

    const corpus::AugmentationTag snr_tags[3] = {corpus::AugmentationTag::snr20,
                                                 corpus::AugmentationTag::snr10,
                                                 corpus::AugmentationTag::snr3};
    for (const corpus::Sample& s : split.train) {
        // Rebased alignment shared by this sample's augmented variants.
        const std::string align_rel = "augmented/" + s.source_id + ".align.json";
        corpus::save_alignment((corpus_dir / align_rel).string(), s.alignment);

        auto emit = [&](const AudioClip& clip, corpus::AugmentationTag tag) {
            const std::string name = s.source_id + "_" + corpus::augmentation_name(tag);
            const std::string audio_rel = "augmented/" + name + ".wav";
            write_wav((corpus_dir / audio_rel).string(), clip);
            const json row{{"audio_path", audio_rel},
                           {"alignment_path", align_rel},
                           {"word_type", s.word_type},
                           {"source_id", name},
                           {"augmentation", corpus::augmentation_name(tag)}};
            out << row.dump() << "\n";
        };

        emit(dsp::lowpass(s.clip, cfg.augment.lowpass_hz), corpus::AugmentationTag::lowpass);
        for (int k = 0; k < 3; ++k)
            emit(dsp::mix_at_snr(s.clip, noise, cfg.augment.snr_db[static_cast<std::size_t>(k)]),
                 snr_tags[k]);
    }
}

// ---------------------------------------------------------------------------
// train / eval

namespace {

std::string training_manifest(const PipelineConfig& cfg) {
    return cfg.training.manifest_kind == "augmented" ? augmented_manifest_path(cfg) : cfg.manifest;
}

corpus::DatasetSplit load_split(const PipelineConfig& cfg, const std::string& manifest) {
    if (!fs::exists(manifest))
        throw DataError("manifest not found at " + manifest +
                        (manifest == augmented_manifest_path(cfg)
                             ? "; run 'lexstress augment' first"
                             : "; run 'lexstress synth' first"));
    const std::vector<corpus::Sample> samples = corpus::load_manifest(manifest, cfg.window_s);
    return corpus::split_by_word_type(samples, cfg.split.train_types, cfg.split.val_types,
                                      cfg.split.test_types, cfg.seed);
}

nn::NetworkSpec build_arch(const PipelineConfig& cfg, const std::vector<int>& input_shape) {
    if (cfg.training.arch == "lenet5") return nn::make_lenet5(input_shape, cfg.seed);
    return nn::make_vgg_mini(input_shape, cfg.seed);
}

train::Checkpoint load_pipeline_checkpoint(const PipelineConfig& cfg, const std::string& who) {
    const std::string wpath = checkpoint_weights_path(cfg);
    if (!fs::exists(wpath) || !fs::exists(checkpoint_sidecar_path(cfg)))
        throw DataError(who + ": checkpoint not found at " + wpath +
                        "; run 'lexstress train' first");
    return train::load_checkpoint(wpath, checkpoint_sidecar_path(cfg));
}

}  // namespace

void cmd_train(const PipelineConfig& cfg) {
    const corpus::DatasetSplit split = load_split(cfg, training_manifest(cfg));
    if (split.train.empty()) throw DataError("train: training split is empty");

    const nn::Tensor probe =
        train::input_tensor(split.train.front(), cfg.stft_window_s, cfg.stft_hop_s);
    nn::NetworkSpec net = build_arch(cfg, probe.shape);

    auto [trained, history] = train::train(net, split, cfg.training.config);

    ensure_dir(fs::path(cfg.out_dir) / "train");
    train::save_checkpoint(checkpoint_weights_path(cfg), checkpoint_sidecar_path(cfg), trained,
                           cfg.training.config, history);

    auto hist_csv = open_out(fs::path(cfg.out_dir) / "train" / "history.csv");
    hist_csv << "epoch,train_loss,validation_accuracy,learning_rate\n";
    for (std::size_t e = 0; e < history.train_loss.size(); ++e)
        hist_csv << e << "," << fmt(history.train_loss[e]) << ","
                 << fmt(history.validation_accuracy[e]) << "," << fmt(history.learning_rate[e])
                 << "\n";
}

void cmd_eval(const PipelineConfig& cfg) {
    const train::Checkpoint ck = load_pipeline_checkpoint(cfg, "eval");
    const corpus::DatasetSplit split = load_split(cfg, training_manifest(cfg));

    auto csv = open_out(fs::path(cfg.out_dir) / "eval" / "accuracy.csv");
    csv << "split,n,accuracy\n";
    auto row = [&](const char* name, const std::vector<corpus::Sample>& ss) {
        if (ss.empty()) {
            csv << name << ",0,\n";
            return;
        }
        csv << name << "," << ss.size() << ","
            << fmt(train::evaluate(ck.net, ss, cfg.stft_window_s, cfg.stft_hop_s)) << "\n";
    };
    row("train", split.train);
    row("validation", split.validation);
    row("test", split.test);
}

// ---------------------------------------------------------------------------
// explain / analyze

namespace {

lrp::RuleConfig rule_config_named(const PipelineConfig& cfg, const std::string& name) {
    lrp::RuleConfig rc;
    rc.epsilon = cfg.explain.epsilon;
    if (name == "alpha1") {
        rc.rule = lrp::Rule::alphabeta;
        rc.alpha = 1.0;
        rc.beta = 0.0;
    } else {
        rc.rule = lrp::parse_rule(name);
        if (rc.rule == lrp::Rule::alphabeta) {
            rc.alpha = cfg.explain.alpha;
            rc.beta = 1.0 - cfg.explain.alpha;
        }
    }
    return rc;
}

const std::vector<corpus::Sample>& pick_split(const corpus::DatasetSplit& split,
                                              const std::string& name) {
    if (name == "train") return split.train;
    if (name == "validation") return split.validation;
    return split.test;
}

void write_relevance_csv(const fs::path& path, const lrp::RelevanceMap& map) {
    auto out = open_out(path);
    for (int b = 0; b < map.n_bins(); ++b) {
        for (int f = 0; f < map.n_frames(); ++f) out << (f ? "," : "") << fmt(map.at(b, f));
        out << "\n";
    }
}

// PNG rows run top-down from the highest frequency bin.
void write_relevance_png(const fs::path& path, const lrp::RelevanceMap& map, double lo, double hi) {
    const int bins = map.n_bins(), frames = map.n_frames();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(bins) * frames, 0);
    const double range = hi - lo;
    for (int b = 0; b < bins; ++b)
        for (int f = 0; f < frames; ++f) {
            const double v = range > 0.0 ? (map.at(b, f) - lo) / range : 0.0;
            px[static_cast<std::size_t>(bins - 1 - b) * frames + f] =
                static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    ensure_dir(path.parent_path());
    write_png_gray8(path.string(), px, frames, bins);
}

struct ExplainedSample {
    const corpus::Sample* sample = nullptr;
    int target = 0;
    std::vector<double> logits;
    lrp::RelevanceMap map;
};

ExplainedSample explain_one(const nn::NetworkSpec& folded, const corpus::Sample& s,
                            const lrp::RuleConfig& rc, const PipelineConfig& cfg) {
    ExplainedSample ex;
    ex.sample = &s;
    const nn::Tensor x = train::input_tensor(s, cfg.stft_window_s, cfg.stft_hop_s);
    auto [logits, trace] = nn::forward(folded, x);
    ex.logits = logits.data;
    const int predicted = static_cast<int>(
        std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
    ex.target = cfg.explain.target == "label" ? train::stress_class(s.alignment.stress) : predicted;
    ex.map = lrp::relevance(trace, ex.target, rc);
    return ex;
}

}  // namespace

void cmd_explain(const PipelineConfig& cfg) {
    const train::Checkpoint ck = load_pipeline_checkpoint(cfg, "explain");
    const nn::NetworkSpec folded = nn::fold_batchnorm(ck.net);
    const corpus::DatasetSplit split = load_split(cfg, training_manifest(cfg));
    const std::vector<corpus::Sample>& samples = pick_split(split, cfg.explain.split);
    if (samples.empty()) throw DataError("explain: split '" + cfg.explain.split + "' is empty");

    for (const std::string& rule : cfg.explain.rules) {
        const lrp::RuleConfig rc = rule_config_named(cfg, rule);
        const fs::path dir = fs::path(cfg.out_dir) / "explain" / rule;
        for (const corpus::Sample& s : samples) {
            const ExplainedSample ex = explain_one(folded, s, rc, cfg);
            const double lo = *std::min_element(ex.map.values.begin(), ex.map.values.end());
            const double hi = *std::max_element(ex.map.values.begin(), ex.map.values.end());

            write_relevance_csv(dir / (s.source_id + ".csv"), ex.map);
            write_relevance_png(dir / (s.source_id + ".png"), ex.map, lo, hi);

            const json sidecar{{"sample", s.source_id},
                               {"rule", rule},
                               {"target_class", ex.target},
                               {"logits", ex.logits},
                               {"scale_min", lo},
                               {"scale_max", hi},
                               {"png_rows", "top row = highest frequency bin"}};
            auto out = open_out(dir / (s.source_id + ".json"));
            out << sidecar.dump(2) << "\n";
        }
    }
}

void cmd_analyze(const PipelineConfig& cfg) {
    const train::Checkpoint ck = load_pipeline_checkpoint(cfg, "analyze");
    const nn::NetworkSpec folded = nn::fold_batchnorm(ck.net);
    const corpus::DatasetSplit split = load_split(cfg, training_manifest(cfg));
    const std::vector<corpus::Sample>& samples = split.test;
    if (samples.empty()) throw DataError("analyze: test split is empty");

    const fs::path dir = fs::path(cfg.out_dir) / "analysis";

    // ---- mu by rule (Table 3 layout) ----
    struct MuAccum {
        double sv = 0, so = 0, uv = 0, uo = 0;
        int n = 0, skipped = 0;
    };
    std::map<std::string, MuAccum> mu_by_rule;
    std::vector<lrp::RelevanceMap> composite_maps(samples.size());
    std::vector<bool> composite_ok(samples.size(), false);

    auto mu_samples_csv = open_out(dir / "mu_samples.csv");
    mu_samples_csv << "rule,sample,mu_vowel_stressed,mu_vowel_unstressed,mu_other_stressed,"
                      "mu_other_unstressed\n";

    for (const std::string& rule : cfg.explain.rules) {
        const lrp::RuleConfig rc = rule_config_named(cfg, rule);
        MuAccum& acc = mu_by_rule[rule];
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const corpus::Sample& s = samples[i];
            try {
                const dsp::Spectrogram spec =
                    dsp::stft_magnitude(s.clip, cfg.stft_window_s, cfg.stft_hop_s);
                const std::vector<analysis::Region> regions = analysis::make_regions(s.alignment, spec);
                const ExplainedSample ex = explain_one(folded, s, rc, cfg);
                const double sv = analysis::iou_mu_tag(ex.map, regions, analysis::RegionTag::stressed_vowel);
                const double so = analysis::iou_mu_tag(ex.map, regions, analysis::RegionTag::stressed_other);
                const double uv = analysis::iou_mu_tag(ex.map, regions, analysis::RegionTag::unstressed_vowel);
                const double uo = analysis::iou_mu_tag(ex.map, regions, analysis::RegionTag::unstressed_other);
                acc.sv += sv;
                acc.so += so;
                acc.uv += uv;
                acc.uo += uo;
                acc.n += 1;
                mu_samples_csv << rule << "," << s.source_id << "," << fmt(sv) << "," << fmt(uv)
                               << "," << fmt(so) << "," << fmt(uo) << "\n";
                if (rule == "composite") {
                    composite_maps[i] = ex.map;
                    composite_ok[i] = true;
                }
            } catch (const NumericError&) {
                acc.skipped += 1;  // singular or zero-mass map for this rule
            }
        }
    }

    auto mu_csv = open_out(dir / "mu_by_rule.csv");
    mu_csv << "rule,mu_vowel_stressed,mu_vowel_unstressed,mu_other_stressed,mu_other_unstressed,"
              "n,skipped\n";
    for (const std::string& rule : cfg.explain.rules) {
        const MuAccum& a = mu_by_rule[rule];
        const double n = a.n > 0 ? a.n : 1;
        mu_csv << rule << "," << fmt(a.sv / n) << "," << fmt(a.uv / n) << "," << fmt(a.so / n)
               << "," << fmt(a.uo / n) << "," << a.n << "," << a.skipped << "\n";
    }

    // ---- feature subsets against the composite maps (Table 4 layout) ----
    const bool have_composite =
        std::find(cfg.explain.rules.begin(), cfg.explain.rules.end(), "composite") !=
        cfg.explain.rules.end();
    if (!have_composite)
        std::cerr << "analyze: 'composite' not in explain.rules; skipping feature tables\n";

    struct SubsetAccum {
        double r = 0, p = 0;
        int n = 0;
    };
    std::map<analysis::FeatureSet, SubsetAccum> subset_acc;
    struct ResidualAccum {
        double f0f1 = 0, f1f2 = 0, f2f3 = 0, above = 0;
        int n = 0, empty = 0;
    };
    ResidualAccum res_initial, res_final;
    int missing_tracks = 0, degenerate = 0;

    if (have_composite) {
        auto residual_samples_csv = open_out(dir / "residual_samples.csv");
        residual_samples_csv << "sample,stress,f0_f1,f1_f2,f2_f3,above_f3,residual_cells\n";

        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!composite_ok[i]) continue;
            const corpus::Sample& s = samples[i];
            const fs::path track_path = fs::path(cfg.tracks_dir) / (s.source_id + ".csv");
            if (!fs::exists(track_path)) {
                ++missing_tracks;
                continue;
            }
            const analysis::FeatureTrack track = analysis::load_track_csv(track_path.string());
            const dsp::Spectrogram spec =
                dsp::stft_magnitude(s.clip, cfg.stft_window_s, cfg.stft_hop_s);
            const std::vector<analysis::Region> regions = analysis::make_regions(s.alignment, spec);
            const analysis::Region* sv_region = nullptr;
            for (const analysis::Region& r : regions)
                if (r.tag == analysis::RegionTag::stressed_vowel) sv_region = &r;
            if (!sv_region) continue;

            for (analysis::FeatureSet subset : analysis::all_feature_subsets()) {
                try {
                    const analysis::Heatmap hm = analysis::feature_heatmap(track, subset, spec);
                    analysis::CorrelationResult cr = analysis::correlate_region(
                        composite_maps[i], hm, *sv_region, cfg.analysis.permutations,
                        Rng::mix(cfg.seed, Rng::mix(subset, static_cast<std::uint64_t>(i))));
                    SubsetAccum& sa = subset_acc[subset];
                    sa.r += cr.r;
                    sa.p += cr.p;
                    sa.n += 1;
                } catch (const NumericError&) {
                    ++degenerate;
                }
            }

            const analysis::Heatmap combined = analysis::feature_heatmap(track, 0xF, spec);
            const analysis::ResidualBands rb = analysis::residual_distribution(
                composite_maps[i], combined, track, *sv_region, cfg.analysis.tau, spec.bin_hz);
            ResidualAccum& ra =
                s.alignment.stress == corpus::Stress::initial ? res_initial : res_final;
            if (rb.empty) {
                ++ra.empty;
            } else {
                ra.f0f1 += rb.f0_f1;
                ra.f1f2 += rb.f1_f2;
                ra.f2f3 += rb.f2_f3;
                ra.above += rb.above_f3;
                ra.n += 1;
                residual_samples_csv << s.source_id << ","
                                     << corpus::stress_name(s.alignment.stress) << ","
                                     << fmt(rb.f0_f1) << "," << fmt(rb.f1_f2) << ","
                                     << fmt(rb.f2_f3) << "," << fmt(rb.above_f3) << ","
                                     << rb.residual_cells << "\n";
            }
        }

        // Sorted by mean r, best subset first.
        std::vector<std::pair<analysis::FeatureSet, SubsetAccum>> rows(subset_acc.begin(),
                                                                       subset_acc.end());
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
            const double ra = a.second.n ? a.second.r / a.second.n : -2.0;
            const double rb = b.second.n ? b.second.r / b.second.n : -2.0;
            if (ra != rb) return ra > rb;
            return a.first < b.first;
        });
        auto subsets_csv = open_out(dir / "feature_subsets.csv");
        subsets_csv << "subset,mean_r,mean_p,n\n";
        for (const auto& [subset, sa] : rows) {
            const double n = sa.n > 0 ? sa.n : 1;
            subsets_csv << analysis::feature_set_name(subset) << "," << fmt(sa.r / n) << ","
                        << fmt(sa.p / n) << "," << sa.n << "\n";
        }

        auto residual_csv = open_out(dir / "residual_bands.csv");
        residual_csv << "band,initial_stress_mean,final_stress_mean\n";
        auto band_row = [&](const char* name, double ResidualAccum::* field) {
            residual_csv << name << ","
                         << fmt(res_initial.n ? res_initial.*field / res_initial.n : 0.0) << ","
                         << fmt(res_final.n ? res_final.*field / res_final.n : 0.0) << "\n";
        };
        band_row("f0_f1", &ResidualAccum::f0f1);
        band_row("f1_f2", &ResidualAccum::f1f2);
        band_row("f2_f3", &ResidualAccum::f2f3);
        band_row("above_f3", &ResidualAccum::above);

        auto notes_csv = open_out(dir / "analysis_notes.csv");
        notes_csv << "name,value\n";
        notes_csv << "missing_tracks," << missing_tracks << "\n";
        notes_csv << "degenerate_correlations," << degenerate << "\n";
        notes_csv << "empty_residual_initial," << res_initial.empty << "\n";
        notes_csv << "empty_residual_final," << res_final.empty << "\n";
        notes_csv << "residual_n_initial," << res_initial.n << "\n";
        notes_csv << "residual_n_final," << res_final.n << "\n";
    }
}

// ---------------------------------------------------------------------------
// report

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

std::string cmd_report(const PipelineConfig& cfg) {
    const fs::path out(cfg.out_dir);
    std::ostringstream text;
    auto summary = open_out(out / "report" / "summary.csv");
    summary << "section,name,value\n";

    const auto acc = read_csv(out / "eval" / "accuracy.csv");
    if (acc.size() > 1) {
        text << "accuracy:\n";
        for (std::size_t i = 1; i < acc.size(); ++i) {
            if (acc[i].size() < 3) continue;
            text << "  " << acc[i][0] << " (n=" << acc[i][1] << "): " << acc[i][2] << "\n";
            summary << "accuracy," << acc[i][0] << "," << acc[i][2] << "\n";
        }
    }

    const auto mu = read_csv(out / "analysis" / "mu_by_rule.csv");
    if (mu.size() > 1) {
        text << "mean mu (vowel stressed / vowel unstressed / other stressed / other unstressed):\n";
        for (std::size_t i = 1; i < mu.size(); ++i) {
            if (mu[i].size() < 5) continue;
            text << "  " << mu[i][0] << ": " << mu[i][1] << " / " << mu[i][2] << " / " << mu[i][3]
                 << " / " << mu[i][4] << "\n";
            summary << "mu_vowel_stressed," << mu[i][0] << "," << mu[i][1] << "\n";
            summary << "mu_vowel_unstressed," << mu[i][0] << "," << mu[i][2] << "\n";
        }
    }

    const auto subsets = read_csv(out / "analysis" / "feature_subsets.csv");
    if (subsets.size() > 1) {
        text << "feature subsets by mean r:\n";
        for (std::size_t i = 1; i < subsets.size(); ++i) {
            if (subsets[i].size() < 3) continue;
            text << "  " << subsets[i][0] << ": r=" << subsets[i][1] << " p=" << subsets[i][2]
                 << "\n";
            summary << "subset_r," << subsets[i][0] << "," << subsets[i][1] << "\n";
        }
    }

    const auto residual = read_csv(out / "analysis" / "residual_bands.csv");
    if (residual.size() > 1) {
        text << "residual band fractions (initial / final stress):\n";
        for (std::size_t i = 1; i < residual.size(); ++i) {
            if (residual[i].size() < 3) continue;
            text << "  " << residual[i][0] << ": " << residual[i][1] << " / " << residual[i][2]
                 << "\n";
            summary << "residual," << residual[i][0] << "," << residual[i][1] << "\n";
        }
    }

    const auto stats = read_csv(out / "ingest" / "stats.csv");
    if (stats.size() > 1) {
        for (std::size_t i = 1; i < stats.size(); ++i) {
            if (stats[i].size() < 8) continue;
            text << stats[i][0] << ": mean diff " << stats[i][5] << " CI [" << stats[i][6] << ", "
                 << stats[i][7] << "]\n";
            summary << "ratio_diff," << stats[i][0] << "," << stats[i][5] << "\n";
        }
    }

    if (text.str().empty()) text << "report: no artifacts found under " << cfg.out_dir << "\n";
    return text.str();
}

}  // namespace lexstress::pipeline
