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

#include "lexstress/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"

namespace lexstress::analysis {

std::string region_tag_name(RegionTag tag) {
    switch (tag) {
        case RegionTag::stressed_vowel: return "stressed_vowel";
        case RegionTag::stressed_other: return "stressed_other";
        case RegionTag::unstressed_vowel: return "unstressed_vowel";
        case RegionTag::unstressed_other: return "unstressed_other";
    }
    return "?";
}

namespace {

int frame_of(double t, double hop_s) {
    return static_cast<int>(std::floor(t / hop_s + 1e-9));
}

}  // namespace

std::vector<Region> make_regions(const corpus::Alignment& a, const dsp::Spectrogram& spec) {
    const double hop = spec.hop_s;
    if (hop <= 0.0) throw ConfigError("make_regions: spectrogram has no hop geometry");

    const corpus::Phone* initial_vowel = nullptr;
    const corpus::Phone* final_vowel = nullptr;
    for (const corpus::Phone& p : a.phones) {
        if (!p.is_vowel) continue;
        if (p.start < a.syllable_boundary) {
            initial_vowel = &p;
        } else if (!final_vowel) {
            final_vowel = &p;
        }
        if (frame_of(p.end, hop) > spec.n_frames)
            throw DataError("make_regions: phone '" + p.label +
                            "' extends past the spectrogram's time extent");
    }
    if (!initial_vowel || !final_vowel)
        throw DataError("make_regions: alignment does not mark a vowel on each side of the boundary");

    const int wf0 = std::clamp(frame_of(a.word_start, hop), 0, spec.n_frames);
    const int wf1 = std::clamp(frame_of(a.word_end, hop), 0, spec.n_frames);
    const int bf = std::clamp(frame_of(a.syllable_boundary, hop), wf0, wf1);

    const bool initial_stressed = (a.stress == corpus::Stress::initial);
    const RegionTag init_vowel_tag =
        initial_stressed ? RegionTag::stressed_vowel : RegionTag::unstressed_vowel;
    const RegionTag init_other_tag =
        initial_stressed ? RegionTag::stressed_other : RegionTag::unstressed_other;
    const RegionTag fin_vowel_tag =
        initial_stressed ? RegionTag::unstressed_vowel : RegionTag::stressed_vowel;
    const RegionTag fin_other_tag =
        initial_stressed ? RegionTag::unstressed_other : RegionTag::stressed_other;

    std::vector<Region> regions;
    auto add_box = [&](int f0, int f1, RegionTag tag) {
        if (f1 <= f0) return;
        Region r;
        r.frame_begin = f0;
        r.frame_end = f1;
        r.bin_begin = 0;
        r.bin_end = spec.n_bins;
        r.tag = tag;
        regions.push_back(r);
    };

    auto add_syllable = [&](int s0, int s1, const corpus::Phone& vowel, RegionTag vtag,
                            RegionTag otag) {
        int v0 = std::clamp(frame_of(vowel.start, hop), s0, s1);
        int v1 = std::clamp(frame_of(vowel.end, hop), s0, s1);
        if (v1 <= v0)
            throw DataError("make_regions: vowel '" + vowel.label +
                            "' is shorter than one hop (degenerate region)");
        add_box(v0, v1, vtag);
        add_box(s0, v0, otag);
        add_box(v1, s1, otag);
    };

    add_syllable(wf0, bf, *initial_vowel, init_vowel_tag, init_other_tag);
    add_syllable(bf, wf1, *final_vowel, fin_vowel_tag, fin_other_tag);
    return regions;
}

double iou_mu(const lrp::RelevanceMap& map, const Region& region) {
    if (!map.is_grid()) throw ConfigError("iou_mu: relevance map is not a spectrogram grid");
    double total = 0.0;
    for (double v : map.values) total += std::max(v, 0.0);
    if (total <= 0.0) throw NumericError("iou_mu: all-zero relevance map, ratio undefined");

    double inside = 0.0;
    for (int b = region.bin_begin; b < region.bin_end; ++b)
        for (int f = region.frame_begin; f < region.frame_end; ++f)
            inside += std::max(map.at(b, f), 0.0);
    return inside / total;
}

double iou_mu_tag(const lrp::RelevanceMap& map, const std::vector<Region>& regions,
                  RegionTag tag) {
    double mu = 0.0;
    bool any = false;
    for (const Region& r : regions) {
        if (r.tag != tag) continue;
        mu += iou_mu(map, r);
        any = true;
    }
    return any ? mu : 0.0;
}

std::string feature_set_name(FeatureSet set) {
    std::string out;
    for (unsigned i = 0; i < 4; ++i) {
        if (set & (1u << i)) {
            if (!out.empty()) out += "+";
            out += "F" + std::to_string(i);
        }
    }
    return out.empty() ? "none" : out;
}

std::vector<FeatureSet> all_feature_subsets() {
    std::vector<FeatureSet> out;
    for (FeatureSet s = 1; s < 16; ++s) out.push_back(s);
    return out;
}

FeatureTrack load_track_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("feature track: cannot open " + path);
    FeatureTrack track;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < 9) fields.emplace_back();

        // Header row: first field not numeric.
        if (row == 1 && !fields[0].empty() &&
            fields[0].find_first_not_of("0123456789+-.eE \t") != std::string::npos)
            continue;

        auto opt = [&](const std::string& s) -> std::optional<double> {
            if (s.find_first_not_of(" \t\r") == std::string::npos) return std::nullopt;
            return std::stod(s);
        };
        auto num = [&](const std::string& s) {
            auto v = opt(s);
            return v ? *v : 0.0;
        };

        try {
            TrackFrame f;
            f.f0 = opt(fields[1]);
            f.f1 = opt(fields[2]);
            f.b1 = num(fields[3]);
            f.f2 = opt(fields[4]);
            f.b2 = num(fields[5]);
            f.f3 = opt(fields[6]);
            f.b3 = num(fields[7]);
            f.intensity_db = num(fields[8]);
            if ((f.f1 && f.b1 <= 0.0) || (f.f2 && f.b2 <= 0.0) || (f.f3 && f.b3 <= 0.0))
                throw DataError("feature track " + path + " row " + std::to_string(row) +
                                ": formant center without a positive bandwidth");
            track.frames.push_back(f);
        } catch (const std::invalid_argument&) {
            throw DataError("feature track " + path + " row " + std::to_string(row) +
                            ": non-numeric field");
        }
    }
    return track;
}

void save_track_csv(const std::string& path, const FeatureTrack& track, double hop_s) {
    std::ofstream out(path);
    if (!out) throw DataError("feature track: cannot write " + path);
    out << "time_s,f0,f1,b1,f2,b2,f3,b3,intensity_db\n";
    auto field = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string();
    };
    for (std::size_t i = 0; i < track.frames.size(); ++i) {
        const TrackFrame& f = track.frames[i];
        out << static_cast<double>(i) * hop_s << "," << field(f.f0) << "," << field(f.f1) << ","
            << f.b1 << "," << field(f.f2) << "," << f.b2 << "," << field(f.f3) << "," << f.b3 << ","
            << f.intensity_db << "\n";
    }
}

namespace {

struct BinRange {
    int lo = 0, hi = -1;  // inclusive; empty when hi < lo
};

BinRange band_to_bins(double lo_hz, double hi_hz, double bin_hz, int n_bins) {
    BinRange r;
    r.lo = std::max(0, static_cast<int>(std::ceil(lo_hz / bin_hz - 1e-9)));
    r.hi = std::min(n_bins - 1, static_cast<int>(std::floor(hi_hz / bin_hz + 1e-9)));
    return r;
}

}  // namespace

Heatmap feature_heatmap(const FeatureTrack& track, FeatureSet subset,
                        const dsp::Spectrogram& spec) {
    if (subset == 0 || subset > 15) throw ConfigError("feature_heatmap: empty or invalid subset");
    if (spec.normalized)
        throw ConfigError("feature_heatmap: needs raw magnitudes, not a z-scored spectrogram");
    if (static_cast<int>(track.frames.size()) < spec.n_frames)
        throw DataError("feature_heatmap: track covers " + std::to_string(track.frames.size()) +
                        " frames, spectrogram has " + std::to_string(spec.n_frames));

    const double nyquist = (spec.n_bins - 1) * spec.bin_hz;

    // Intensity min-max normalized over the word; a flat profile yields zeros.
    double imin = 1e308, imax = -1e308;
    for (int f = 0; f < spec.n_frames; ++f) {
        imin = std::min(imin, track.frames[static_cast<std::size_t>(f)].intensity_db);
        imax = std::max(imax, track.frames[static_cast<std::size_t>(f)].intensity_db);
    }
    const double irange = imax - imin;

    Heatmap hm;
    hm.n_bins = spec.n_bins;
    hm.n_frames = spec.n_frames;
    hm.values.assign(static_cast<std::size_t>(spec.n_bins) * spec.n_frames, 0.0);
    if (irange <= 0.0) return hm;

    for (int f = 0; f < spec.n_frames; ++f) {
        const TrackFrame& tf = track.frames[static_cast<std::size_t>(f)];
        const double inorm = (tf.intensity_db - imin) / irange;
        if (inorm <= 0.0) continue;

        auto apply_band = [&](const BinRange& range) {
            if (range.hi < range.lo) return;
            double band_max = 0.0;
            for (int k = range.lo; k <= range.hi; ++k)
                band_max = std::max(band_max, spec.at(k, f));
            if (band_max <= 0.0) return;
            for (int k = range.lo; k <= range.hi; ++k) {
                const double v = spec.at(k, f) / band_max * inorm;
                hm.at(k, f) = std::max(hm.at(k, f), v);
            }
        };

        auto check_center = [&](double c, const char* name) {
            if (c <= 0.0 || c > nyquist)
                throw DataError("feature_heatmap: frame " + std::to_string(f) + " " + name +
                                " center " + std::to_string(c) + " Hz outside (0, Nyquist]");
        };

        if ((subset & feature_bit(Feature::F0)) && tf.f0) {
            check_center(*tf.f0, "F0");
            const int cb = static_cast<int>(std::llround(*tf.f0 / spec.bin_hz));
            BinRange r{std::max(0, cb - 1), std::min(spec.n_bins - 1, cb + 1)};
            apply_band(r);
        }
        if ((subset & feature_bit(Feature::F1)) && tf.f1) {
            check_center(*tf.f1, "F1");
            apply_band(band_to_bins(*tf.f1 - tf.b1 / 2.0, *tf.f1 + tf.b1 / 2.0, spec.bin_hz,
                                    spec.n_bins));
        }
        if ((subset & feature_bit(Feature::F2)) && tf.f2) {
            check_center(*tf.f2, "F2");
            apply_band(band_to_bins(*tf.f2 - tf.b2 / 2.0, *tf.f2 + tf.b2 / 2.0, spec.bin_hz,
                                    spec.n_bins));
        }
        if ((subset & feature_bit(Feature::F3)) && tf.f3) {
            check_center(*tf.f3, "F3");
            apply_band(band_to_bins(*tf.f3 - tf.b3 / 2.0, *tf.f3 + tf.b3 / 2.0, spec.bin_hz,
                                    spec.n_bins));
        }
    }
    return hm;
}

CorrelationResult correlate_region(const lrp::RelevanceMap& map, const Heatmap& feat,
                                   const Region& region, int permutations, std::uint64_t seed) {
    if (!map.is_grid()) throw ConfigError("correlate_region: relevance map is not a grid");
    if (map.n_bins() != feat.n_bins || map.n_frames() != feat.n_frames)
        throw ShapeError("correlate_region: map and heatmap geometry differ");
    if (region.empty()) throw DataError("correlate_region: empty region");
    if (permutations < 1) throw ConfigError("correlate_region: permutations must be >= 1");

    std::vector<double> a, b;
    a.reserve(static_cast<std::size_t>(region.cells()));
    b.reserve(static_cast<std::size_t>(region.cells()));
    for (int k = region.bin_begin; k < region.bin_end; ++k)
        for (int f = region.frame_begin; f < region.frame_end; ++f) {
            a.push_back(map.at(k, f));
            b.push_back(feat.at(k, f));
        }

    const std::size_t n = a.size();
    const double ma = mean_of(a), mb = mean_of(b);
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cov += (a[i] - ma) * (b[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0)
        throw NumericError("correlate_region: zero variance inside the region");

    const double denom = std::sqrt(va * vb);
    const double r = std::clamp(cov / denom, -1.0, 1.0);

    // Permutation test: shuffling preserves mean and variance of b, so only
    // the cross term needs recomputation.
    Rng rng(Rng::mix(seed, 0x9e2aULL));
    std::vector<double> bp = b;
    int count = 0;
    const double abs_r = std::abs(r);
    for (int p = 0; p < permutations; ++p) {
        rng.shuffle(bp);
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += (a[i] - ma) * (bp[i] - mb);
        if (std::abs(c / denom) >= abs_r) ++count;
    }

    CorrelationResult res;
    res.r = r;
    res.p = static_cast<double>(1 + count) / static_cast<double>(1 + permutations);
    return res;
}

ResidualBands residual_distribution(const lrp::RelevanceMap& map, const Heatmap& combined_feat,
                                    const FeatureTrack& track, const Region& region, double tau,
                                    double bin_hz) {
    if (region.tag != RegionTag::stressed_vowel)
        throw ConfigError("residual_distribution: region must be the stressed vowel");
    if (tau <= 0.0 || tau >= 1.0) throw ConfigError("residual_distribution: tau must be in (0, 1)");
    if (!map.is_grid()) throw ConfigError("residual_distribution: relevance map is not a grid");
    if (bin_hz <= 0.0) throw ConfigError("residual_distribution: bin_hz must be positive");
    if (static_cast<int>(track.frames.size()) < region.frame_end)
        throw DataError("residual_distribution: track does not cover the region");

    double feat_max = 0.0;
    for (int k = region.bin_begin; k < region.bin_end; ++k)
        for (int f = region.frame_begin; f < region.frame_end; ++f)
            feat_max = std::max(feat_max, combined_feat.at(k, f));
    const double threshold = tau * feat_max;

    ResidualBands out;
    double mass_f0f1 = 0.0, mass_f1f2 = 0.0, mass_f2f3 = 0.0, mass_above = 0.0;

    for (int f = region.frame_begin; f < region.frame_end; ++f) {
        const TrackFrame& tf = track.frames[static_cast<std::size_t>(f)];
        if (!tf.f1 || !tf.f2 || !tf.f3) continue;  // no band edges this frame
        for (int k = region.bin_begin; k < region.bin_end; ++k) {
            const double rel = std::max(map.at(k, f), 0.0);
            if (rel <= 0.0) continue;
            if (combined_feat.at(k, f) > threshold) continue;
            const double freq = static_cast<double>(k) * bin_hz;
            if (freq < *tf.f1)
                mass_f0f1 += rel;  // cells below F0 fold into the F0-F1 band
            else if (freq < *tf.f2)
                mass_f1f2 += rel;
            else if (freq < *tf.f3)
                mass_f2f3 += rel;
            else
                mass_above += rel;
            ++out.residual_cells;
        }
    }

    const double total = mass_f0f1 + mass_f1f2 + mass_f2f3 + mass_above;
    if (out.residual_cells == 0 || total <= 0.0) {
        out.empty = true;
        return out;
    }
    out.empty = false;
    out.f0_f1 = mass_f0f1 / total;
    out.f1_f2 = mass_f1f2 / total;
    out.f2_f3 = mass_f2f3 / total;
    out.above_f3 = mass_above / total;
    return out;
}

}  // namespace lexstress::analysis
