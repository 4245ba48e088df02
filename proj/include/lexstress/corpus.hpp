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

#ifndef LEXSTRESS_CORPUS_HPP
#define LEXSTRESS_CORPUS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lexstress/wav.hpp"

namespace lexstress::corpus {

enum class Stress { initial, final };

std::string stress_name(Stress s);
Stress parse_stress(const std::string& name);

struct Phone {
    std::string label;
    double start = 0.0;  // seconds
    double end = 0.0;
    bool is_vowel = false;
    bool is_stressed_vowel = false;
};

// Word-level time annotation: word interval, ordered phone intervals, the
// syllable boundary between the two syllables, and the stress position.
struct Alignment {
    std::string word_label;
    double word_start = 0.0;
    double word_end = 0.0;
    std::vector<Phone> phones;
    double syllable_boundary = 0.0;
    Stress stress = Stress::initial;
};

enum class AugmentationTag { none, lowpass, snr20, snr10, snr3 };

std::string augmentation_name(AugmentationTag tag);
AugmentationTag parse_augmentation(const std::string& name);

struct Sample {
    AudioClip clip;        // fixed-width window, alignment times relative to it
    Alignment alignment;
    std::string word_type;  // case-folded orthography
    std::string source_id;
    AugmentationTag augmentation = AugmentationTag::none;
};

struct DatasetSplit {
    std::vector<Sample> train, validation, test;
};

// Checks the Alignment invariants (ordered non-overlapping phones nested in
// the word interval, exactly one stressed vowel, boundary inside the word).
// Throws DataError with `context` prefixed to the message.
void validate_alignment(const Alignment& alignment, const std::string& context);

// Parses an alignment JSON file.
Alignment load_alignment(const std::string& path);
void save_alignment(const std::string& path, const Alignment& alignment);

// Loads a JSON-lines manifest. Each row names an audio file, an alignment
// file, the word type, and a source id; paths are resolved relative to the
// manifest's directory. Audio is windowed to `window_s` starting at the
// aligned word onset and the alignment is rebased to the window.
std::vector<Sample> load_manifest(const std::string& path, double window_s = 0.5);

// Cuts a fixed-length window starting at the aligned word onset. Zero-padded
// when the source ends early; errors if the onset lies past the clip.
AudioClip extract_word_window(const AudioClip& clip, const Alignment& alignment, double window_s);

// Shifts all alignment times by -offset_s (window rebase).
Alignment rebase_alignment(const Alignment& alignment, double offset_s);

// Deterministically partitions word types into train/validation/test and
// routes every sample to the split owning its type. The three counts must
// sum to the number of distinct word types.
DatasetSplit split_by_word_type(const std::vector<Sample>& samples, int n_train_types,
                                int n_val_types, int n_test_types, std::uint64_t seed);

// Synthetic disyllable generator. Two harmonic vowel bursts (stacked
// harmonics of F0 shaped by two Gaussian resonance envelopes) separated by a
// low-energy gap, each preceded by a short noise burst. The stressed side is
// longer, louder, and higher-pitched by the given multipliers.
struct SynthParams {
    std::string word_label = "synth";
    int sample_rate = 16000;
    double window_s = 0.5;
    int n_harmonics = 12;

    double base_f0 = 110.0;
    // Resonance centers per vowel (Hz). The two vowels get different
    // qualities so the word has internal spectral structure.
    double initial_f1 = 650.0, initial_f2 = 1050.0;
    double final_f1 = 460.0, final_f2 = 880.0;
    double bandwidth_f1 = 140.0, bandwidth_f2 = 180.0;

    double vowel_duration_s = 0.10;  // unstressed vowel
    double stressed_duration_mult = 1.5;
    double stressed_amp_mult = 1.9;
    double stressed_f0_mult = 1.2;
    double amplitude = 0.12;  // unstressed vowel RMS target

    double onset_s = 0.03;   // silence before the word
    double burst_s = 0.025;  // consonant-like noise burst before each vowel
    double burst_amplitude = 0.05;
    double gap_s = 0.06;   // inter-syllable low-energy gap
    double coda_s = 0.02;  // trailing word portion after the final vowel
    double ramp_s = 0.01;  // linear onset/offset ramp per vowel
    double noise_floor = 1e-4;
};

std::pair<AudioClip, Alignment> synthesize_disyllable(Stress stress, std::uint64_t seed,
                                                      const SynthParams& params = {});

}  // namespace lexstress::corpus

#endif  // LEXSTRESS_CORPUS_HPP
