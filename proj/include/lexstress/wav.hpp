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

#ifndef LEXSTRESS_WAV_HPP
#define LEXSTRESS_WAV_HPP

#include <string>
#include <vector>

namespace lexstress {

struct AudioClip {
    std::vector<double> samples;  // amplitudes in [-1, 1]
    int sample_rate = 16000;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// Reads a mono 16-bit PCM WAV file; samples are scaled to [-1, 1).
// Any other encoding (stereo, float, 8/24-bit, compressed) is rejected.
AudioClip read_wav(const std::string& path);

// Writes mono 16-bit PCM. Samples are clipped to [-1, 1] before quantization.
void write_wav(const std::string& path, const AudioClip& clip);

}  // namespace lexstress

#endif  // LEXSTRESS_WAV_HPP
