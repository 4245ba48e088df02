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

#ifndef LEXSTRESS_ANALYSIS_HPP
#define LEXSTRESS_ANALYSIS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lexstress/corpus.hpp"
#include "lexstress/dsp.hpp"
#include "lexstress/lrp.hpp"

namespace lexstress::analysis {

enum class RegionTag { stressed_vowel, stressed_other, unstressed_vowel, unstressed_other };

std::string region_tag_name(RegionTag tag);

// Axis-aligned box in spectrogram coordinates; frames and bins half-open.
struct Region {
    int frame_begin = 0, frame_end = 0;
    int bin_begin = 0, bin_end = 0;
    RegionTag tag = RegionTag::stressed_vowel;

    bool empty() const { return frame_end <= frame_begin || bin_end <= bin_begin; }
    long long cells() const {
        return empty() ? 0
                       : static_cast<long long>(frame_end - frame_begin) * (bin_end - bin_begin);
    }
};

// Converts alignment times to frame-indexed boxes spanning the full band.
// A time point maps to the frame whose hop-start is nearest below it. The
// vowel of each syllable gets its own box; the syllable remainder becomes
// "other" boxes (possibly two fragments sharing the tag; empty fragments are
// dropped). The four tags tile the word's frames without overlap.
std::vector<Region> make_regions(const corpus::Alignment& alignment,
                                 const dsp::Spectrogram& spec);

// Inside-total overlap ratio: positive relevance mass inside the region over
// total positive mass (negative relevance is clamped to zero first).
double iou_mu(const lrp::RelevanceMap& map, const Region& region);

// Sum of iou_mu over every box carrying the tag (boxes are disjoint);
// 0 when the tag has no boxes.
double iou_mu_tag(const lrp::RelevanceMap& map, const std::vector<Region>& regions, RegionTag tag);

enum class Feature : unsigned { F0 = 0, F1 = 1, F2 = 2, F3 = 3 };

// Bitmask over Feature values; bit i set = Fi in the subset.
using FeatureSet = unsigned;

constexpr FeatureSet feature_bit(Feature f) { return 1u << static_cast<unsigned>(f); }
std::string feature_set_name(FeatureSet set);  // e.g. "F1+F2"
std::vector<FeatureSet> all_feature_subsets(); // the 15 nonempty subsets

struct TrackFrame {
    std::optional<double> f0, f1, f2, f3;  // center frequencies (Hz)
    double b1 = 0.0, b2 = 0.0, b3 = 0.0;   // formant bandwidths (Hz)
    double intensity_db = 0.0;
};

struct FeatureTrack {
    std::vector<TrackFrame> frames;
};

// CSV: one row per frame: time_s, F0, F1, B1, F2, B2, F3, B3, intensity_db.
// An empty field is an absent value; a header row is accepted and written.
FeatureTrack load_track_csv(const std::string& path);
void save_track_csv(const std::string& path, const FeatureTrack& track, double hop_s);

// Feature-specific heatmap, same geometry as the spectrogram, values in
// [0, 1]. Per frame and feature: cells inside the feature's band receive the
// spectrogram magnitude normalized by the in-band per-frame maximum, scaled
// by the frame intensity min-max normalized over the word. F0 uses a fixed
// one-bin-each-side band. Subsets combine by cell-wise maximum.
struct Heatmap {
    int n_bins = 0, n_frames = 0;
    std::vector<double> values;
    double at(int bin, int frame) const {
        return values[static_cast<std::size_t>(bin) * n_frames + frame];
    }
    double& at(int bin, int frame) {
        return values[static_cast<std::size_t>(bin) * n_frames + frame];
    }
};

Heatmap feature_heatmap(const FeatureTrack& track, FeatureSet subset,
                        const dsp::Spectrogram& spec);

struct CorrelationResult {
    double r = 0.0;        // Pearson coefficient over region cells
    double p = 1.0;        // permutation p-value, (0, 1]
    FeatureSet subset = 0;
};

// Pearson r between the relevance map and a feature heatmap restricted to
// the region, with a seeded permutation test:
// p = (1 + #{|r_perm| >= |r|}) / (1 + permutations).
CorrelationResult correlate_region(const lrp::RelevanceMap& map, const Heatmap& feat,
                                   const Region& region, int permutations, std::uint64_t seed);

// Frequency-band distribution of relevance mass unexplained by the combined
// feature heatmap: cells with positive (clamped) relevance whose combined
// feature value is <= tau * regional max. Masses are assigned per frame to
// the band between adjacent feature tracks (cells below F0 fold into the
// F0-F1 band) and normalized to sum 1.
struct ResidualBands {
    double f0_f1 = 0.0, f1_f2 = 0.0, f2_f3 = 0.0, above_f3 = 0.0;
    long long residual_cells = 0;
    bool empty = true;  // no residual cells (reported, not an error)
};

ResidualBands residual_distribution(const lrp::RelevanceMap& map, const Heatmap& combined_feat,
                                    const FeatureTrack& track, const Region& region, double tau,
                                    double bin_hz);

}  // namespace lexstress::analysis

#endif  // LEXSTRESS_ANALYSIS_HPP
