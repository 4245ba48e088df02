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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lexstress/corpus.hpp"
#include "lexstress/dsp.hpp"
#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"

using namespace lexstress;

namespace {

AudioClip tone(double freq, double amp, double duration_s, int sr = 16000) {
    AudioClip c;
    c.sample_rate = sr;
    c.samples.resize(static_cast<std::size_t>(std::llround(duration_s * sr)));
    for (std::size_t i = 0; i < c.samples.size(); ++i)
        c.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / sr);
    return c;
}

double rms(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

// Independent single-frame DFT magnitude oracle (Hamming window, unnormalized
// DFT), written without reference to the dsp implementation.
std::vector<double> oracle_frame_magnitudes(const std::vector<double>& clip, int offset, int win) {
    std::vector<double> mags(static_cast<std::size_t>(win / 2 + 1));
    for (int k = 0; k <= win / 2; ++k) {
        double re = 0.0, im = 0.0;
        for (int n = 0; n < win; ++n) {
            const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (win - 1));
            const double v = clip[static_cast<std::size_t>(offset + n)] * w;
            re += v * std::cos(2.0 * M_PI * k * n / win);
            im -= v * std::sin(2.0 * M_PI * k * n / win);
        }
        mags[static_cast<std::size_t>(k)] = std::hypot(re, im);
    }
    return mags;
}

}  // namespace

TEST_CASE("stft geometry: 0.5 s at 16 kHz with defaults is 161 x 49") {
    // win = 0.02 * 16000 = 320, hop = 160; frames = (8000 - 320) / 160 + 1.
    const int win = 320, hop = 160, n = 8000;
    const int expect_frames = (n - win) / hop + 1;
    const int expect_bins = win / 2 + 1;
    CHECK(expect_frames == 49);
    CHECK(expect_bins == 161);

    const dsp::Spectrogram spec = dsp::stft_magnitude(tone(440.0, 0.5, 0.5));
    CHECK(spec.n_bins == 161);
    CHECK(spec.n_frames == 49);
    CHECK(spec.bin_hz == doctest::Approx(50.0));
    CHECK_FALSE(spec.normalized);
}

TEST_CASE("stft of a 1 kHz tone peaks at bin 20 in every frame") {
    const AudioClip clip = tone(1000.0, 0.5, 0.5);
    const dsp::Spectrogram spec = dsp::stft_magnitude(clip);
    for (int f = 0; f < spec.n_frames; ++f) {
        int argmax = 0;
        for (int k = 1; k < spec.n_bins; ++k)
            if (spec.at(k, f) > spec.at(argmax, f)) argmax = k;
        CHECK(argmax == 20);  // 1000 Hz / (16000 / 320) Hz per bin
    }

    // Frame magnitudes agree with the independent DFT oracle.
    const std::vector<double> oracle = oracle_frame_magnitudes(clip.samples, 3 * 160, 320);
    for (int k = 0; k < spec.n_bins; ++k)
        CHECK(spec.at(k, 3) == doctest::Approx(oracle[static_cast<std::size_t>(k)]).epsilon(1e-9));
}

TEST_CASE("stft of silence is all-zero") {
    AudioClip clip;
    clip.samples.assign(8000, 0.0);
    const dsp::Spectrogram spec = dsp::stft_magnitude(clip);
    for (double v : spec.values) CHECK(v == 0.0);
}

TEST_CASE("stft rejects clips shorter than one window") {
    AudioClip clip;
    clip.samples.assign(300, 0.1);
    CHECK_THROWS_AS(dsp::stft_magnitude(clip), DataError);
}

TEST_CASE("stft frame alignment is stable under self-concatenation") {
    AudioClip clip = tone(700.0, 0.3, 0.25);
    AudioClip doubled = clip;
    doubled.samples.insert(doubled.samples.end(), clip.samples.begin(), clip.samples.end());

    const dsp::Spectrogram a = dsp::stft_magnitude(clip);
    const dsp::Spectrogram b = dsp::stft_magnitude(doubled);
    REQUIRE(b.n_frames >= a.n_frames);
    for (int k = 0; k < a.n_bins; ++k)
        for (int f = 0; f < a.n_frames; ++f) CHECK(a.at(k, f) == b.at(k, f));
}

TEST_CASE("stft satisfies the Parseval identity per frame") {
    Rng rng(7);
    AudioClip clip;
    clip.samples.resize(2000);
    for (double& v : clip.samples) v = rng.uniform(-0.8, 0.8);
    const dsp::Spectrogram spec = dsp::stft_magnitude(clip);
    const int win = 320, hop = 160;

    for (int f = 0; f < spec.n_frames; ++f) {
        double frame_energy = 0.0;
        for (int n = 0; n < win; ++n) {
            const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (win - 1));
            const double v = clip.samples[static_cast<std::size_t>(f * hop + n)] * w;
            frame_energy += v * v;
        }
        // Two-sided spectrum energy from the one-sided magnitudes.
        double spectral = spec.at(0, f) * spec.at(0, f) + spec.at(160, f) * spec.at(160, f);
        for (int k = 1; k < 160; ++k) spectral += 2.0 * spec.at(k, f) * spec.at(k, f);
        CHECK(spectral / win == doctest::Approx(frame_energy).epsilon(1e-6));
    }
}

TEST_CASE("zscore normalizes to mean 0, sd 1 and is idempotent") {
    const dsp::Spectrogram spec = dsp::stft_magnitude(tone(900.0, 0.4, 0.5));
    const dsp::Spectrogram z = dsp::zscore(spec);
    CHECK(z.normalized);

    double mean = 0.0;
    for (double v : z.values) mean += v;
    mean /= static_cast<double>(z.values.size());
    double var = 0.0;
    for (double v : z.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.values.size());
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

    const dsp::Spectrogram zz = dsp::zscore(z);
    for (std::size_t i = 0; i < z.values.size(); ++i)
        CHECK(std::abs(zz.values[i] - z.values[i]) < 1e-6);
}

TEST_CASE("zscore rejects a constant spectrogram") {
    dsp::Spectrogram spec;
    spec.n_bins = 4;
    spec.n_frames = 3;
    spec.values.assign(12, 2.5);
    CHECK_THROWS_AS(dsp::zscore(spec), NumericError);
}

TEST_CASE("lowpass passes 1 kHz and attenuates 6 kHz at a 3 kHz cutoff") {
    // Oracle: frequency response of the designed taps via direct DFT.
    const std::vector<double> taps = dsp::lowpass_taps(3000.0, 16000);
    auto response = [&](double freq) {
        double re = 0.0, im = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
            re += taps[k] * std::cos(2.0 * M_PI * freq * static_cast<double>(k) / 16000.0);
            im -= taps[k] * std::sin(2.0 * M_PI * freq * static_cast<double>(k) / 16000.0);
        }
        return std::hypot(re, im);
    };
    CHECK(std::abs(20.0 * std::log10(response(1000.0))) < 0.5);  // passband ~unity
    CHECK(20.0 * std::log10(response(6000.0)) < -40.0);          // stopband

    const AudioClip in_pass = tone(1000.0, 0.5, 0.5);
    const AudioClip out_pass = dsp::lowpass(in_pass, 3000.0);
    const double pass_db = 20.0 * std::log10(rms(out_pass.samples) / rms(in_pass.samples));
    CHECK(std::abs(pass_db) < 1.0);

    const AudioClip in_stop = tone(6000.0, 0.5, 0.5);
    const AudioClip out_stop = dsp::lowpass(in_stop, 3000.0);
    const double stop_db = 20.0 * std::log10(rms(out_stop.samples) / rms(in_stop.samples));
    CHECK(stop_db <= -40.0);

    CHECK(out_pass.samples.size() == in_pass.samples.size());
}

TEST_CASE("lowpass passes DC with gain ~1") {
    AudioClip dc;
    dc.samples.assign(4000, 0.25);
    const AudioClip out = dsp::lowpass(dc, 3000.0);
    // Away from the edges the output matches the constant input.
    for (std::size_t i = 200; i + 200 < out.samples.size(); ++i)
        CHECK(out.samples[i] == doctest::Approx(0.25).epsilon(1e-3));
}

TEST_CASE("lowpass rejects out-of-range cutoffs") {
    const AudioClip clip = tone(500.0, 0.2, 0.1);
    CHECK_THROWS_AS(dsp::lowpass(clip, 0.0), ConfigError);
    CHECK_THROWS_AS(dsp::lowpass(clip, 8000.0), ConfigError);
}

TEST_CASE("mix_at_snr uses scale 1 for equal-power components at 0 dB") {
    const AudioClip sig = tone(500.0, 0.3, 0.25);
    AudioClip noise = tone(1700.0, 0.3, 0.25);  // equal power
    const AudioClip mix = dsp::mix_at_snr(sig, noise, 0.0);
    for (std::size_t i = 0; i < mix.samples.size(); ++i)
        CHECK(mix.samples[i] ==
              doctest::Approx(sig.samples[i] + noise.samples[i]).epsilon(1e-9));
}

TEST_CASE("mix_at_snr reproduces the requested SNR from recovered components") {
    const AudioClip sig = tone(600.0, 0.2, 0.3);
    Rng rng(11);
    AudioClip noise;
    noise.samples.resize(1000);  // shorter than the clip: exercises looping
    for (double& v : noise.samples) v = 0.05 * rng.normal();

    for (double snr : {20.0, 10.0, 3.0, 0.0, -10.0}) {
        const AudioClip mix = dsp::mix_at_snr(sig, noise, snr);
        // Oracle: recover the scaled noise component and remeasure powers.
        double p_sig = 0.0, p_noise = 0.0;
        for (std::size_t i = 0; i < mix.samples.size(); ++i) {
            const double n = mix.samples[i] - sig.samples[i];
            p_sig += sig.samples[i] * sig.samples[i];
            p_noise += n * n;
        }
        const double measured = 10.0 * std::log10(p_sig / p_noise);
        CHECK(std::abs(measured - snr) < 0.1);
    }
}

TEST_CASE("mix_at_snr rejects silent noise and rate mismatches") {
    const AudioClip sig = tone(600.0, 0.2, 0.1);
    AudioClip silent;
    silent.samples.assign(100, 0.0);
    CHECK_THROWS_AS(dsp::mix_at_snr(sig, silent, 10.0), ConfigError);

    AudioClip wrong_rate = tone(600.0, 0.2, 0.1, 8000);
    CHECK_THROWS_AS(dsp::mix_at_snr(sig, wrong_rate, 10.0), ConfigError);
}

namespace {

corpus::Sample ratio_sample(double amp_initial, double amp_final, double dur_initial,
                            double dur_final, corpus::Stress stress) {
    corpus::Sample s;
    s.clip.sample_rate = 16000;
    s.clip.samples.assign(8000, 0.0);
    const auto fill = [&](double start, double dur, double amp) {
        const auto lo = static_cast<std::size_t>(start * 16000);
        const auto n = static_cast<std::size_t>(dur * 16000);
        for (std::size_t i = lo; i < lo + n; ++i) s.clip.samples[i] = amp;
    };
    fill(0.05, dur_initial, amp_initial);
    fill(0.30, dur_final, amp_final);

    s.alignment.word_label = "pair";
    s.word_type = "pair";
    s.source_id = "ratio";
    s.alignment.word_start = 0.0;
    s.alignment.word_end = 0.45;
    s.alignment.syllable_boundary = 0.25;
    s.alignment.stress = stress;
    s.alignment.phones = {
        {"a", 0.05, 0.05 + dur_initial, true, stress == corpus::Stress::initial},
        {"e", 0.30, 0.30 + dur_final, true, stress == corpus::Stress::final},
    };
    return s;
}

}  // namespace

TEST_CASE("vowel_ratio_stats: constant-amplitude vowels give the forced ratios") {
    // RMS of a constant segment equals its amplitude, so 0.6 vs 0.4 gives 0.6.
    const auto s = ratio_sample(0.6, 0.4, 0.1, 0.1, corpus::Stress::initial);
    const dsp::RatioStats stats = dsp::vowel_ratio_stats({s});
    REQUIRE(stats.per_sample.size() == 1);
    CHECK(stats.per_sample[0].amplitude_ratio == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(stats.per_sample[0].duration_ratio == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("vowel_ratio_stats: equal vowels give 0.5 on both ratios") {
    const auto s = ratio_sample(0.5, 0.5, 0.08, 0.08, corpus::Stress::final);
    const dsp::RatioStats stats = dsp::vowel_ratio_stats({s});
    CHECK(stats.per_sample[0].amplitude_ratio == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(stats.per_sample[0].duration_ratio == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("vowel_ratio_stats: silent vowels are skipped with a count") {
    auto s = ratio_sample(0.0, 0.0, 0.1, 0.1, corpus::Stress::initial);
    const dsp::RatioStats stats = dsp::vowel_ratio_stats({s});
    CHECK(stats.per_sample.empty());
    CHECK(stats.skipped == 1);
}

TEST_CASE("vowel_ratio_stats: synthetic corpus shows the stress-group ordering") {
    std::vector<corpus::Sample> samples;
    for (int i = 0; i < 20; ++i) {
        for (corpus::Stress st : {corpus::Stress::initial, corpus::Stress::final}) {
            auto [clip, align] = corpus::synthesize_disyllable(st, 1000 + i);
            corpus::Sample s;
            s.clip = std::move(clip);
            s.alignment = align;
            s.word_type = "syn";
            s.source_id = "syn" + std::to_string(i);
            samples.push_back(std::move(s));

            // Independent RMS oracle over the vowel intervals.
            const corpus::Sample& back = samples.back();
            double r[2] = {0, 0};
            int vi = 0;
            for (const corpus::Phone& p : back.alignment.phones) {
                if (!p.is_vowel) continue;
                double acc = 0.0;
                const auto lo = static_cast<std::size_t>(p.start * 16000);
                const auto hi = static_cast<std::size_t>(p.end * 16000);
                for (std::size_t k = lo; k < hi; ++k) acc += back.clip.samples[k] * back.clip.samples[k];
                r[vi++] = std::sqrt(acc / static_cast<double>(hi - lo));
            }
            if (st == corpus::Stress::initial)
                CHECK(r[0] > r[1]);
            else
                CHECK(r[0] < r[1]);
        }
    }
    const dsp::RatioStats stats = dsp::vowel_ratio_stats(samples);
    CHECK(stats.amplitude_mean_initial > stats.amplitude_mean_final);
    CHECK(stats.duration_mean_initial > stats.duration_mean_final);
}

TEST_CASE("bootstrap_mean_diff: identical groups give a CI containing 0") {
    const std::vector<double> g = {0.1, 0.4, 0.3, 0.8, 0.2, 0.6, 0.5};
    const dsp::BootstrapCI ci = dsp::bootstrap_mean_diff(g, g, 1000, 0.95, 3);
    CHECK(ci.mean_diff == doctest::Approx(0.0));
    CHECK(ci.ci_low <= 0.0);
    CHECK(ci.ci_high >= 0.0);
    CHECK(ci.replicates == 1000);
    CHECK(ci.confidence == doctest::Approx(0.95));
}

TEST_CASE("bootstrap_mean_diff: constant groups give a zero-width CI at the difference") {
    const std::vector<double> a(8, 1.0), b(5, 0.0);
    const dsp::BootstrapCI ci = dsp::bootstrap_mean_diff(a, b, 1000, 0.95, 3);
    CHECK(ci.mean_diff == doctest::Approx(1.0));
    CHECK(ci.ci_low == doctest::Approx(1.0));
    CHECK(ci.ci_high == doctest::Approx(1.0));
}

TEST_CASE("bootstrap_mean_diff: deterministic under seed, errors on bad input") {
    const std::vector<double> a = {1.0, 2.0, 3.0}, b = {0.5, 1.5};
    const dsp::BootstrapCI c1 = dsp::bootstrap_mean_diff(a, b, 500, 0.9, 42);
    const dsp::BootstrapCI c2 = dsp::bootstrap_mean_diff(a, b, 500, 0.9, 42);
    CHECK(c1.ci_low == c2.ci_low);
    CHECK(c1.ci_high == c2.ci_high);

    CHECK_THROWS_AS(dsp::bootstrap_mean_diff({}, b, 1000, 0.95, 1), DataError);
    CHECK_THROWS_AS(dsp::bootstrap_mean_diff(a, b, 50, 0.95, 1), ConfigError);
    CHECK_THROWS_AS(dsp::bootstrap_mean_diff(a, b, 1000, 1.5, 1), ConfigError);
}

TEST_CASE("bootstrap 95% CI covers a known mean difference in ~95% of trials") {
    const double true_diff = 0.3;
    int covered = 0;
    const int trials = 200;
    Rng rng(20260810);
    for (int t = 0; t < trials; ++t) {
        std::vector<double> a(60), b(60);
        for (double& v : a) v = 0.8 + rng.normal();
        for (double& v : b) v = 0.5 + rng.normal();
        const dsp::BootstrapCI ci =
            dsp::bootstrap_mean_diff(a, b, 1000, 0.95, Rng::mix(99, static_cast<std::uint64_t>(t)));
        if (ci.ci_low <= true_diff && true_diff <= ci.ci_high) ++covered;
    }
    // 95% +/- 4% of 200 trials.
    CHECK(covered >= 182);
    CHECK(covered <= 198);
}
