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

#ifndef LEXSTRESS_DSP_HPP
#define LEXSTRESS_DSP_HPP

#include <cstdint>
#include <vector>

#include "lexstress/corpus.hpp"
#include "lexstress/wav.hpp"

namespace lexstress::dsp {

// Time-frequency magnitude matrix. Row-major [bin][frame]; bin 0 is DC.
struct Spectrogram {
    int n_bins = 0;
    int n_frames = 0;
    double bin_hz = 0.0;
    double hop_s = 0.0;
    double window_s = 0.0;
    bool normalized = false;
    std::vector<double> values;

    double at(int bin, int frame) const { return values[static_cast<std::size_t>(bin) * n_frames + frame]; }
    double& at(int bin, int frame) { return values[static_cast<std::size_t>(bin) * n_frames + frame]; }
};

// Hamming-windowed STFT magnitudes (unnormalized DFT, one-sided spectrum).
// FFT size equals the window length in samples; a trailing partial frame is
// dropped. With the 0.02 s / 0.01 s defaults at 16 kHz a 0.5 s clip yields a
// 161 x 49 grid with 50 Hz bins.
//
// DFT convention: X[k] = sum_n x[n] w[n] e^{-2*pi*i*k*n/N}, magnitude |X[k]|.
// Under this convention sum_k |X[k]|^2 over the full (two-sided) spectrum
// equals N times the windowed-frame energy.
Spectrogram stft_magnitude(const AudioClip& clip, double window_s = 0.02, double hop_s = 0.01);

// Z-score over all cells jointly ((x - mean) / sd, population sd).
Spectrogram zscore(const Spectrogram& spec);

// Windowed-sinc FIR low-pass taps (Hamming, odd length, linear phase).
std::vector<double> lowpass_taps(double cutoff_hz, int sample_rate, int n_taps = 101);

// Zero-phase-aligned FIR low-pass; output length equals input length.
AudioClip lowpass(const AudioClip& clip, double cutoff_hz);

// Adds noise scaled so that 10*log10(P_signal / P_noise) = snr_db over the
// clip; noise is cropped or looped to the clip length; the sum is clipped to
// [-1, 1] afterwards so the component powers stay exact.
AudioClip mix_at_snr(const AudioClip& clip, const AudioClip& noise, double snr_db);

// Relative phonetic measurements of the two vowels: per sample,
//   amplitude_ratio = RMS(initial vowel) / (RMS(initial) + RMS(final))
//   duration_ratio  = dur(initial vowel) / (dur(initial) + dur(final))
// with group means / standard deviations per stress class.
struct RatioStats {
    struct PerSample {
        double amplitude_ratio = 0.0;
        double duration_ratio = 0.0;
        corpus::Stress stress = corpus::Stress::initial;
    };
    std::vector<PerSample> per_sample;
    double amplitude_mean_initial = 0.0, amplitude_sd_initial = 0.0;
    double amplitude_mean_final = 0.0, amplitude_sd_final = 0.0;
    double duration_mean_initial = 0.0, duration_sd_initial = 0.0;
    double duration_mean_final = 0.0, duration_sd_final = 0.0;
    int skipped = 0;  // samples with two silent vowels
};

RatioStats vowel_ratio_stats(const std::vector<corpus::Sample>& samples);

// Percentile bootstrap confidence interval for mean(a) - mean(b).
struct BootstrapCI {
    double mean_diff = 0.0;  // observed statistic
    double ci_low = 0.0;
    double ci_high = 0.0;
    int replicates = 0;
    double confidence = 0.0;
};

BootstrapCI bootstrap_mean_diff(const std::vector<double>& group_a,
                                const std::vector<double>& group_b, int replicates = 1000,
                                double confidence = 0.95, std::uint64_t seed = 0);

}  // namespace lexstress::dsp

#endif  // LEXSTRESS_DSP_HPP
