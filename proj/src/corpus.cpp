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

#include "lexstress/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"

namespace lexstress::corpus {

using nlohmann::json;

std::string stress_name(Stress s) { return s == Stress::initial ? "initial" : "final"; }

Stress parse_stress(const std::string& name) {
    if (name == "initial") return Stress::initial;
    if (name == "final") return Stress::final;
    throw DataError("alignment: unknown stress value '" + name + "'");
}

std::string augmentation_name(AugmentationTag tag) {
    switch (tag) {
        case AugmentationTag::none: return "none";
        case AugmentationTag::lowpass: return "lowpass";
        case AugmentationTag::snr20: return "snr20";
        case AugmentationTag::snr10: return "snr10";
        case AugmentationTag::snr3: return "snr3";
    }
    return "none";
}

AugmentationTag parse_augmentation(const std::string& name) {
    if (name == "none") return AugmentationTag::none;
    if (name == "lowpass") return AugmentationTag::lowpass;
    if (name == "snr20") return AugmentationTag::snr20;
    if (name == "snr10") return AugmentationTag::snr10;
    if (name == "snr3") return AugmentationTag::snr3;
    throw DataError("manifest: unknown augmentation tag '" + name + "'");
}

void validate_alignment(const Alignment& a, const std::string& context) {
    const double tol = 1e-9;
    if (a.word_end <= a.word_start)
        throw DataError(context + ": field word_end: word interval is empty or reversed");
    if (a.syllable_boundary < a.word_start - tol || a.syllable_boundary > a.word_end + tol)
        throw DataError(context + ": field syllable_boundary: outside the word interval");
    if (a.phones.empty()) throw DataError(context + ": field phones: empty");

    int stressed = 0;
    double prev_end = a.word_start - tol;
    for (std::size_t i = 0; i < a.phones.size(); ++i) {
        const Phone& p = a.phones[i];
        if (p.end <= p.start)
            throw DataError(context + ": field phones[" + std::to_string(i) + "]: empty interval");
        if (p.start < a.word_start - tol || p.end > a.word_end + tol)
            throw DataError(context + ": field phones[" + std::to_string(i) +
                            "]: outside the word interval");
        if (p.start < prev_end - tol)
            throw DataError(context + ": field phones[" + std::to_string(i) +
                            "]: overlaps the previous phone");
        prev_end = p.end;
        if (p.is_stressed_vowel) {
            ++stressed;
            if (!p.is_vowel)
                throw DataError(context + ": field phones[" + std::to_string(i) +
                                "]: stressed-vowel flag on a non-vowel");
        }
    }
    if (stressed != 1)
        throw DataError(context + ": field phones: expected exactly one stressed vowel, found " +
                        std::to_string(stressed));
}

namespace {

Alignment alignment_from_json(const json& j, const std::string& context) {
    Alignment a;
    try {
        a.word_label = j.at("word_label").get<std::string>();
        a.word_start = j.at("word_start").get<double>();
        a.word_end = j.at("word_end").get<double>();
        a.syllable_boundary = j.at("syllable_boundary").get<double>();
        a.stress = parse_stress(j.at("stress").get<std::string>());
        for (const auto& pj : j.at("phones")) {
            Phone p;
            p.label = pj.at("label").get<std::string>();
            p.start = pj.at("start").get<double>();
            p.end = pj.at("end").get<double>();
            p.is_vowel = pj.at("is_vowel").get<bool>();
            p.is_stressed_vowel = pj.at("is_stressed_vowel").get<bool>();
            a.phones.push_back(p);
        }
    } catch (const json::exception& e) {
        throw DataError(context + ": malformed alignment JSON: " + e.what());
    }
    return a;
}

json alignment_to_json(const Alignment& a) {
    json phones = json::array();
    for (const Phone& p : a.phones) {
        phones.push_back({{"label", p.label},
                          {"start", p.start},
                          {"end", p.end},
                          {"is_vowel", p.is_vowel},
                          {"is_stressed_vowel", p.is_stressed_vowel}});
    }
    return json{{"word_label", a.word_label},
                {"word_start", a.word_start},
                {"word_end", a.word_end},
                {"syllable_boundary", a.syllable_boundary},
                {"stress", stress_name(a.stress)},
                {"phones", phones}};
}

}  // namespace

Alignment load_alignment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("alignment: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("alignment: invalid JSON in " + path + ": " + e.what());
    }
    Alignment a = alignment_from_json(j, path);
    validate_alignment(a, path);
    return a;
}

void save_alignment(const std::string& path, const Alignment& a) {
    std::ofstream out(path);
    if (!out) throw DataError("alignment: cannot write " + path);
    out << alignment_to_json(a).dump(2) << "\n";
}

AudioClip extract_word_window(const AudioClip& clip, const Alignment& alignment, double window_s) {
    if (window_s <= 0.0) throw ConfigError("extract_word_window: window_s must be positive");
    const auto n = static_cast<long long>(clip.samples.size());
    const long long start = std::llround(alignment.word_start * clip.sample_rate);
    if (start < 0 || start >= n)
        throw DataError("extract_word_window: word onset " + std::to_string(alignment.word_start) +
                        " s lies outside the clip (" + std::to_string(clip.duration_s()) + " s)");
    const long long len = std::llround(window_s * clip.sample_rate);
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(static_cast<std::size_t>(len), 0.0);
    const long long avail = std::min(len, n - start);
    std::copy_n(clip.samples.begin() + start, avail, out.samples.begin());
    return out;
}

Alignment rebase_alignment(const Alignment& alignment, double offset_s) {
    Alignment a = alignment;
    a.word_start -= offset_s;
    a.word_end -= offset_s;
    a.syllable_boundary -= offset_s;
    for (Phone& p : a.phones) {
        p.start -= offset_s;
        p.end -= offset_s;
    }
    return a;
}

std::vector<Sample> load_manifest(const std::string& path, double window_s) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    std::vector<Sample> samples;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string context = "manifest row " + std::to_string(row);

        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(context + ": invalid JSON: " + e.what());
        }

        Sample s;
        std::string audio_rel, align_rel;
        try {
            audio_rel = j.at("audio_path").get<std::string>();
            align_rel = j.at("alignment_path").get<std::string>();
            s.word_type = j.at("word_type").get<std::string>();
            s.source_id = j.at("source_id").get<std::string>();
            if (j.contains("augmentation"))
                s.augmentation = parse_augmentation(j.at("augmentation").get<std::string>());
        } catch (const json::exception& e) {
            throw DataError(context + ": missing or malformed field: " + e.what());
        }

        const auto audio_path = (base / audio_rel).string();
        const auto align_path = (base / align_rel).string();
        if (!std::filesystem::exists(audio_path))
            throw DataError(context + ": audio file not found: " + audio_path);
        if (!std::filesystem::exists(align_path))
            throw DataError(context + ": alignment file not found: " + align_path);

        AudioClip clip = read_wav(audio_path);
        Alignment alignment = alignment_from_json(
            [&] {
                std::ifstream af(align_path);
                json aj;
                try {
                    af >> aj;
                } catch (const json::exception& e) {
                    throw DataError(context + ": invalid alignment JSON in " + align_path + ": " +
                                    e.what());
                }
                return aj;
            }(),
            context);
        validate_alignment(alignment, context);

        if (ascii_lower(alignment.word_label) != s.word_type)
            throw DataError(context + ": field word_type: '" + s.word_type +
                            "' does not match case-folded word label '" +
                            ascii_lower(alignment.word_label) + "'");

        s.clip = extract_word_window(clip, alignment, window_s);
        s.alignment = rebase_alignment(alignment, alignment.word_start);
        samples.push_back(std::move(s));
    }
    return samples;
}

DatasetSplit split_by_word_type(const std::vector<Sample>& samples, int n_train_types,
                                int n_val_types, int n_test_types, std::uint64_t seed) {
    std::set<std::string> type_set;
    for (const Sample& s : samples) type_set.insert(s.word_type);
    std::vector<std::string> types(type_set.begin(), type_set.end());

    const int total = n_train_types + n_val_types + n_test_types;
    if (n_train_types < 0 || n_val_types < 0 || n_test_types < 0 ||
        total != static_cast<int>(types.size()))
        throw ConfigError("split_by_word_type: counts (" + std::to_string(n_train_types) + ", " +
                          std::to_string(n_val_types) + ", " + std::to_string(n_test_types) +
                          ") do not sum to the " + std::to_string(types.size()) +
                          " distinct word types");

    Rng rng(Rng::mix(seed, 0x5317ULL));
    rng.shuffle(types);

    enum Bucket { kTrain = 0, kVal = 1, kTest = 2 };
    std::vector<std::pair<std::string, Bucket>> owner;
    owner.reserve(types.size());
    for (int i = 0; i < static_cast<int>(types.size()); ++i) {
        Bucket b = i < n_train_types ? kTrain : (i < n_train_types + n_val_types ? kVal : kTest);
        owner.emplace_back(types[i], b);
    }

    DatasetSplit split;
    for (const Sample& s : samples) {
        auto it = std::find_if(owner.begin(), owner.end(),
                               [&](const auto& o) { return o.first == s.word_type; });
        switch (it->second) {
            case kTrain: split.train.push_back(s); break;
            case kVal: split.validation.push_back(s); break;
            case kTest: split.test.push_back(s); break;
        }
    }
    return split;
}

namespace {

// Gaussian resonance gain for one harmonic.
double resonance_gain(double freq, double center, double bandwidth) {
    const double sigma = bandwidth / 3.0;
    const double d = (freq - center) / sigma;
    return std::exp(-0.5 * d * d);
}

// Adds one harmonic vowel burst over clip[start, start+len). Returns nothing;
// amplitude is scaled so the burst's plateau RMS is ~amp.
void add_vowel(std::vector<double>& x, int sr, long long start, long long len, double f0,
               double f1, double f2, double bw1, double bw2, int n_harmonics, double amp,
               double ramp_s, Rng& rng) {
    std::vector<double> gains(static_cast<std::size_t>(n_harmonics) + 1, 0.0);
    std::vector<double> phases(static_cast<std::size_t>(n_harmonics) + 1, 0.0);
    double energy = 0.0;
    for (int h = 1; h <= n_harmonics; ++h) {
        const double fh = h * f0;
        if (fh >= sr / 2.0) break;
        gains[h] = resonance_gain(fh, f1, bw1) + resonance_gain(fh, f2, bw2);
        phases[h] = rng.uniform(0.0, 2.0 * M_PI);
        energy += 0.5 * gains[h] * gains[h];
    }
    if (energy <= 0.0) return;
    const double scale = amp / std::sqrt(energy);

    const long long ramp = std::llround(ramp_s * sr);
    for (long long i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = 0.0;
        for (int h = 1; h <= n_harmonics; ++h) {
            if (gains[h] == 0.0) continue;
            v += gains[h] * std::sin(2.0 * M_PI * h * f0 * t + phases[h]);
        }
        double env = 1.0;
        if (ramp > 0) {
            if (i < ramp) env = static_cast<double>(i) / ramp;
            const long long from_end = len - 1 - i;
            if (from_end < ramp) env = std::min(env, static_cast<double>(from_end) / ramp);
        }
        x[static_cast<std::size_t>(start + i)] += scale * env * v;
    }
}

void add_burst(std::vector<double>& x, int sr, long long start, long long len, double amp,
               Rng& rng) {
    const long long ramp = std::llround(0.005 * sr);
    for (long long i = 0; i < len; ++i) {
        double env = 1.0;
        if (ramp > 0) {
            if (i < ramp) env = static_cast<double>(i) / ramp;
            const long long from_end = len - 1 - i;
            if (from_end < ramp) env = std::min(env, static_cast<double>(from_end) / ramp);
        }
        x[static_cast<std::size_t>(start + i)] += amp * env * (2.0 * rng.uniform01() - 1.0);
    }
}

}  // namespace

std::pair<AudioClip, Alignment> synthesize_disyllable(Stress stress, std::uint64_t seed,
                                                      const SynthParams& p) {
    if (p.stressed_amp_mult <= 0.0 || p.stressed_duration_mult <= 0.0 || p.stressed_f0_mult <= 0.0)
        throw ConfigError("synthesize_disyllable: stressed multipliers must be positive");
    if (p.base_f0 <= 0.0 || p.vowel_duration_s <= 0.0 || p.amplitude <= 0.0)
        throw ConfigError("synthesize_disyllable: base_f0, vowel_duration_s, amplitude must be positive");

    const int sr = p.sample_rate;
    const auto total = static_cast<std::size_t>(std::llround(p.window_s * sr));
    std::vector<double> x(total, 0.0);

    Rng rng(Rng::mix(seed, 0xd155111ab1eULL));

    for (double& v : x) v += p.noise_floor * (2.0 * rng.uniform01() - 1.0);

    const bool initial_stressed = (stress == Stress::initial);
    const double d1 = p.vowel_duration_s * (initial_stressed ? p.stressed_duration_mult : 1.0);
    const double d2 = p.vowel_duration_s * (initial_stressed ? 1.0 : p.stressed_duration_mult);
    const double a1 = p.amplitude * (initial_stressed ? p.stressed_amp_mult : 1.0);
    const double a2 = p.amplitude * (initial_stressed ? 1.0 : p.stressed_amp_mult);
    const double f0_1 = p.base_f0 * (initial_stressed ? p.stressed_f0_mult : 1.0);
    const double f0_2 = p.base_f0 * (initial_stressed ? 1.0 : p.stressed_f0_mult);

    const double tb1 = p.onset_s;
    const double tv1 = tb1 + p.burst_s;
    const double tb2 = tv1 + d1 + p.gap_s;
    const double tv2 = tb2 + p.burst_s;
    const double word_end = tv2 + d2 + p.coda_s;
    if (word_end > p.window_s)
        throw ConfigError("synthesize_disyllable: word (" + std::to_string(word_end) +
                          " s) does not fit in the " + std::to_string(p.window_s) + " s window");

    auto at = [&](double t) { return std::llround(t * sr); };
    add_burst(x, sr, at(tb1), at(tb1 + p.burst_s) - at(tb1), p.burst_amplitude, rng);
    add_vowel(x, sr, at(tv1), at(tv1 + d1) - at(tv1), f0_1, p.initial_f1, p.initial_f2,
              p.bandwidth_f1, p.bandwidth_f2, p.n_harmonics, a1, p.ramp_s, rng);
    add_burst(x, sr, at(tb2), at(tb2 + p.burst_s) - at(tb2), p.burst_amplitude, rng);
    add_vowel(x, sr, at(tv2), at(tv2 + d2) - at(tv2), f0_2, p.final_f1, p.final_f2, p.bandwidth_f1,
              p.bandwidth_f2, p.n_harmonics, a2, p.ramp_s, rng);

    for (double& v : x) v = std::clamp(v, -1.0, 1.0);

    AudioClip clip;
    clip.sample_rate = sr;
    clip.samples = std::move(x);

    Alignment a;
    a.word_label = p.word_label;
    a.word_start = tb1;
    a.word_end = word_end;
    a.syllable_boundary = tv1 + d1 + p.gap_s / 2.0;
    a.stress = stress;
    a.phones = {
        {"t", tb1, tv1, false, false},
        {"a", tv1, tv1 + d1, true, initial_stressed},
        {"k", tb2, tv2, false, false},
        {"e", tv2, tv2 + d2, true, !initial_stressed},
    };
    validate_alignment(a, "synthesize_disyllable");
    return {std::move(clip), std::move(a)};
}

}  // namespace lexstress::corpus
