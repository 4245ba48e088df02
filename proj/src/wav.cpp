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

#include "lexstress/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lexstress/errors.hpp"

namespace lexstress {

namespace {

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("wav: cannot open " + path);

    char riff[4], wave[4];
    file.read(riff, 4);
    std::uint32_t riff_size = read_u32(file);
    (void)riff_size;
    file.read(wave, 4);
    if (!file || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
        throw FormatError("wav: not a RIFF/WAVE file: " + path);

    std::uint16_t audio_format = 0, num_channels = 0, bits_per_sample = 0;
    std::uint32_t sample_rate = 0;
    bool have_fmt = false;
    std::vector<char> data;

    while (file) {
        char chunk_id[4];
        file.read(chunk_id, 4);
        if (!file) break;
        std::uint32_t chunk_size = read_u32(file);
        if (!file) break;

        if (std::memcmp(chunk_id, "fmt ", 4) == 0) {
            audio_format = read_u16(file);
            num_channels = read_u16(file);
            sample_rate = read_u32(file);
            read_u32(file);  // byte rate
            read_u16(file);  // block align
            bits_per_sample = read_u16(file);
            if (chunk_size > 16) file.seekg(chunk_size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(chunk_id, "data", 4) == 0) {
            data.resize(chunk_size);
            file.read(data.data(), chunk_size);
            if (static_cast<std::uint32_t>(file.gcount()) != chunk_size)
                throw FormatError("wav: truncated data chunk in " + path);
        } else {
            file.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
        }
    }

    if (!have_fmt || data.empty()) throw FormatError("wav: missing fmt/data chunk in " + path);
    if (audio_format != 1 || num_channels != 1 || bits_per_sample != 16)
        throw FormatError("wav: only mono 16-bit PCM supported, got format=" +
                          std::to_string(audio_format) + " channels=" + std::to_string(num_channels) +
                          " bits=" + std::to_string(bits_per_sample) + " in " + path);
    if (sample_rate == 0) throw FormatError("wav: zero sample rate in " + path);

    AudioClip clip;
    clip.sample_rate = static_cast<int>(sample_rate);
    std::size_t n = data.size() / 2;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s;
        std::memcpy(&s, data.data() + 2 * i, 2);
        clip.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw DataError("wav: cannot write " + path);

    std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    file.write("RIFF", 4);
    write_u32(file, 36 + data_bytes);
    file.write("WAVE", 4);
    file.write("fmt ", 4);
    write_u32(file, 16);
    write_u16(file, 1);  // PCM
    write_u16(file, 1);  // mono
    write_u32(file, static_cast<std::uint32_t>(clip.sample_rate));
    write_u32(file, static_cast<std::uint32_t>(clip.sample_rate * 2));
    write_u16(file, 2);
    write_u16(file, 16);
    file.write("data", 4);
    write_u32(file, data_bytes);
    for (double v : clip.samples) {
        double c = std::clamp(v, -1.0, 1.0);
        auto s = static_cast<std::int16_t>(std::lround(c * 32767.0));
        char b[2] = {static_cast<char>(s & 0xff), static_cast<char>((s >> 8) & 0xff)};
        file.write(b, 2);
    }
    if (!file) throw DataError("wav: write failed for " + path);
}

}  // namespace lexstress
