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

#include "lexstress/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"

namespace lexstress::dsp {

namespace {

struct DftPlan {
    std::vector<double> window;  // Hamming
    std::vector<double> cos_t;   // [bin * win + n]
    std::vector<double> sin_t;
};

const DftPlan& plan_for(int win) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<DftPlan>> plans;
    std::lock_guard<std::mutex> lock(mu);
    auto& p = plans[win];
    if (!p) {
        p = std::make_unique<DftPlan>();
        p->window.resize(win);
        for (int n = 0; n < win; ++n)
            p->window[n] = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (win - 1));
        const int bins = win / 2 + 1;
        p->cos_t.resize(static_cast<std::size_t>(bins) * win);
        p->sin_t.resize(static_cast<std::size_t>(bins) * win);
        for (int k = 0; k < bins; ++k) {
            for (int n = 0; n < win; ++n) {
                const double phi = 2.0 * M_PI * k * n / win;
                p->cos_t[static_cast<std::size_t>(k) * win + n] = std::cos(phi);
                p->sin_t[static_cast<std::size_t>(k) * win + n] = std::sin(phi);
            }
        }
    }
    return *p;
}

}  // namespace

Spectrogram stft_magnitude(const AudioClip& clip, double window_s, double hop_s) {
    if (window_s <= 0.0 || hop_s <= 0.0)
        throw ConfigError("stft: window_s and hop_s must be positive");
    const int sr = clip.sample_rate;
    const int win = static_cast<int>(std::llround(window_s * sr));
    const int hop = static_cast<int>(std::llround(hop_s * sr));
    const auto n = static_cast<long long>(clip.samples.size());
    if (win < 2 || hop < 1) throw ConfigError("stft: window/hop too small for the sample rate");
    if (n < win)
        throw DataError("stft: clip of " + std::to_string(n) + " samples is shorter than one " +
                        std::to_string(win) + "-sample window");

    const DftPlan& plan = plan_for(win);
    const int n_bins = win / 2 + 1;
    const int n_frames = static_cast<int>((n - win) / hop) + 1;

    Spectrogram spec;
    spec.n_bins = n_bins;
    spec.n_frames = n_frames;
    spec.bin_hz = static_cast<double>(sr) / win;
    spec.hop_s = hop_s;
    spec.window_s = window_s;
    spec.values.assign(static_cast<std::size_t>(n_bins) * n_frames, 0.0);

    std::vector<double> frame(win);
    for (int f = 0; f < n_frames; ++f) {
        const double* x = clip.samples.data() + static_cast<std::size_t>(f) * hop;
        for (int i = 0; i < win; ++i) frame[i] = x[i] * plan.window[i];
        for (int k = 0; k < n_bins; ++k) {
            const double* ct = plan.cos_t.data() + static_cast<std::size_t>(k) * win;
            const double* st = plan.sin_t.data() + static_cast<std::size_t>(k) * win;
            double re = 0.0, im = 0.0;
            for (int i = 0; i < win; ++i) {
                re += frame[i] * ct[i];
                im -= frame[i] * st[i];
            }
            spec.at(k, f) = std::sqrt(re * re + im * im);
        }
    }
    return spec;
}

Spectrogram zscore(const Spectrogram& spec) {
    const std::size_t n = spec.values.size();
    if (n < 2) throw DataError("zscore: spectrogram has fewer than 2 cells");
    double mean = 0.0;
    for (double v : spec.values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : spec.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (var <= 0.0)
        throw NumericError("zscore: zero variance (constant spectrogram)");
    const double sd = std::sqrt(var);

    Spectrogram out = spec;
    for (double& v : out.values) v = (v - mean) / sd;
    out.normalized = true;
    return out;
}

std::vector<double> lowpass_taps(double cutoff_hz, int sample_rate, int n_taps) {
    if (cutoff_hz <= 0.0 || cutoff_hz >= sample_rate / 2.0)
        throw ConfigError("lowpass: cutoff " + std::to_string(cutoff_hz) +
                          " Hz outside (0, Nyquist) for fs=" + std::to_string(sample_rate));
    if (n_taps < 3 || n_taps % 2 == 0) throw ConfigError("lowpass: n_taps must be odd and >= 3");

    const double fc = cutoff_hz / sample_rate;  // normalized (0, 0.5)
    const int mid = n_taps / 2;
    std::vector<double> h(n_taps);
    for (int i = 0; i < n_taps; ++i) {
        const int m = i - mid;
        double v = (m == 0) ? 2.0 * fc : std::sin(2.0 * M_PI * fc * m) / (M_PI * m);
        v *= 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n_taps - 1));
        h[i] = v;
    }
    return h;
}

AudioClip lowpass(const AudioClip& clip, double cutoff_hz) {
    const std::vector<double> h = lowpass_taps(cutoff_hz, clip.sample_rate);
    const int mid = static_cast<int>(h.size()) / 2;
    const auto n = static_cast<long long>(clip.samples.size());

    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(clip.samples.size(), 0.0);
    for (long long i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < static_cast<int>(h.size()); ++k) {
            const long long j = i + k - mid;
            if (j >= 0 && j < n) acc += h[k] * clip.samples[static_cast<std::size_t>(j)];
        }
        out.samples[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

AudioClip mix_at_snr(const AudioClip& clip, const AudioClip& noise, double snr_db) {
    if (noise.samples.empty()) throw ConfigError("mix_at_snr: empty noise clip");
    if (noise.sample_rate != clip.sample_rate)
        throw ConfigError("mix_at_snr: sample rate mismatch (" + std::to_string(clip.sample_rate) +
                          " vs " + std::to_string(noise.sample_rate) + ")");

    const std::size_t n = clip.samples.size();
    std::vector<double> looped(n);
    for (std::size_t i = 0; i < n; ++i) looped[i] = noise.samples[i % noise.samples.size()];

    double p_sig = 0.0, p_noise = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p_sig += clip.samples[i] * clip.samples[i];
        p_noise += looped[i] * looped[i];
    }
    p_sig /= static_cast<double>(n);
    p_noise /= static_cast<double>(n);
    if (p_noise <= 0.0) throw ConfigError("mix_at_snr: noise is silent over the mixing window");
    if (p_sig <= 0.0) throw ConfigError("mix_at_snr: signal is silent, SNR undefined");

    const double scale = std::sqrt(p_sig / (p_noise * std::pow(10.0, snr_db / 10.0)));

    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.samples[i] = std::clamp(clip.samples[i] + scale * looped[i], -1.0, 1.0);
    return out;
}

namespace {

double rms_over(const AudioClip& clip, double start_s, double end_s) {
    const auto n = static_cast<long long>(clip.samples.size());
    long long lo = std::clamp<long long>(std::llround(start_s * clip.sample_rate), 0, n);
    long long hi = std::clamp<long long>(std::llround(end_s * clip.sample_rate), 0, n);
    if (hi <= lo) return 0.0;
    double acc = 0.0;
    for (long long i = lo; i < hi; ++i) acc += clip.samples[static_cast<std::size_t>(i)] *
                                                clip.samples[static_cast<std::size_t>(i)];
    return std::sqrt(acc / static_cast<double>(hi - lo));
}

}  // namespace

RatioStats vowel_ratio_stats(const std::vector<corpus::Sample>& samples) {
    RatioStats stats;
    std::vector<double> amp_i, amp_f, dur_i, dur_f;

    for (std::size_t si = 0; si < samples.size(); ++si) {
        const corpus::Sample& s = samples[si];
        const corpus::Phone* initial_vowel = nullptr;
        const corpus::Phone* final_vowel = nullptr;
        for (const corpus::Phone& p : s.alignment.phones) {
            if (!p.is_vowel) continue;
            if (p.start < s.alignment.syllable_boundary) {
                initial_vowel = &p;
            } else if (!final_vowel) {
                final_vowel = &p;
            }
        }
        if (!initial_vowel || !final_vowel)
            throw DataError("vowel_ratio_stats: sample " + s.source_id +
                            ": alignment does not mark a vowel on each side of the boundary");

        const double rms_i = rms_over(s.clip, initial_vowel->start, initial_vowel->end);
        const double rms_f = rms_over(s.clip, final_vowel->start, final_vowel->end);
        if (rms_i + rms_f <= 0.0) {
            ++stats.skipped;
            continue;
        }
        const double di = initial_vowel->end - initial_vowel->start;
        const double df = final_vowel->end - final_vowel->start;

        RatioStats::PerSample ps;
        ps.amplitude_ratio = rms_i / (rms_i + rms_f);
        ps.duration_ratio = di / (di + df);
        ps.stress = s.alignment.stress;
        stats.per_sample.push_back(ps);

        if (ps.stress == corpus::Stress::initial) {
            amp_i.push_back(ps.amplitude_ratio);
            dur_i.push_back(ps.duration_ratio);
        } else {
            amp_f.push_back(ps.amplitude_ratio);
            dur_f.push_back(ps.duration_ratio);
        }
    }

    stats.amplitude_mean_initial = mean_of(amp_i);
    stats.amplitude_sd_initial = sample_sd(amp_i);
    stats.amplitude_mean_final = mean_of(amp_f);
    stats.amplitude_sd_final = sample_sd(amp_f);
    stats.duration_mean_initial = mean_of(dur_i);
    stats.duration_sd_initial = sample_sd(dur_i);
    stats.duration_mean_final = mean_of(dur_f);
    stats.duration_sd_final = sample_sd(dur_f);
    return stats;
}

BootstrapCI bootstrap_mean_diff(const std::vector<double>& group_a,
                                const std::vector<double>& group_b, int replicates,
                                double confidence, std::uint64_t seed) {
    if (group_a.empty() || group_b.empty())
        throw DataError("bootstrap_mean_diff: empty group");
    if (replicates < 100)
        throw ConfigError("bootstrap_mean_diff: replicates must be >= 100");
    if (confidence <= 0.0 || confidence >= 1.0)
        throw ConfigError("bootstrap_mean_diff: confidence must be in (0, 1)");

    Rng rng(Rng::mix(seed, 0xb0075ULL));
    std::vector<double> diffs(replicates);
    for (int r = 0; r < replicates; ++r) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < group_a.size(); ++i)
            ma += group_a[rng.below(group_a.size())];
        for (std::size_t i = 0; i < group_b.size(); ++i)
            mb += group_b[rng.below(group_b.size())];
        diffs[r] = ma / static_cast<double>(group_a.size()) - mb / static_cast<double>(group_b.size());
    }
    std::sort(diffs.begin(), diffs.end());

    auto quantile = [&](double q) {
        const double h = q * (replicates - 1);
        const auto lo = static_cast<std::size_t>(h);
        if (lo + 1 >= diffs.size()) return diffs.back();
        const double frac = h - static_cast<double>(lo);
        return diffs[lo] + (diffs[lo + 1] - diffs[lo]) * frac;
    };

    BootstrapCI ci;
    ci.mean_diff = mean_of(group_a) - mean_of(group_b);
    ci.ci_low = quantile((1.0 - confidence) / 2.0);
    ci.ci_high = quantile((1.0 + confidence) / 2.0);
    ci.replicates = replicates;
    ci.confidence = confidence;
    return ci;
}

}  // namespace lexstress::dsp
