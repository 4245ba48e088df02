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
#include <filesystem>
#include <fstream>
#include <set>

#include "lexstress/corpus.hpp"
#include "lexstress/errors.hpp"
#include "lexstress/util.hpp"
#include "lexstress/wav.hpp"

using namespace lexstress;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("lexstress_corpus_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

corpus::Alignment simple_alignment(corpus::Stress stress = corpus::Stress::initial) {
    corpus::Alignment a;
    a.word_label = "Wallet";
    a.word_start = 0.1;
    a.word_end = 0.55;
    a.syllable_boundary = 0.3;
    a.stress = stress;
    a.phones = {
        {"w", 0.10, 0.15, false, false},
        {"a", 0.15, 0.28, true, stress == corpus::Stress::initial},
        {"l", 0.30, 0.35, false, false},
        {"e", 0.35, 0.50, true, stress == corpus::Stress::final},
    };
    return a;
}

AudioClip test_tone(double seconds, double freq = 440.0) {
    AudioClip c;
    c.sample_rate = 16000;
    c.samples.resize(static_cast<std::size_t>(std::llround(seconds * 16000)));
    for (std::size_t i = 0; i < c.samples.size(); ++i)
        c.samples[i] = 0.4 * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / 16000.0);
    return c;
}

void write_manifest_row(std::ofstream& out, const std::string& audio, const std::string& align,
                        const std::string& word_type, const std::string& id) {
    out << "{\"audio_path\":\"" << audio << "\",\"alignment_path\":\"" << align
        << "\",\"word_type\":\"" << word_type << "\",\"source_id\":\"" << id << "\"}\n";
}

}  // namespace

TEST_CASE("wav round trip preserves samples to quantization accuracy") {
    const fs::path dir = make_temp_dir("wav");
    AudioClip clip = test_tone(0.1);
    write_wav((dir / "t.wav").string(), clip);
    const AudioClip back = read_wav((dir / "t.wav").string());
    REQUIRE(back.samples.size() == clip.samples.size());
    CHECK(back.sample_rate == 16000);
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);
}

TEST_CASE("wav reader rejects non-PCM and stereo payloads") {
    const fs::path dir = make_temp_dir("wavbad");
    std::ofstream(dir / "junk.wav") << "definitely not a wav";
    CHECK_THROWS_AS(read_wav((dir / "junk.wav").string()), FormatError);
}

TEST_CASE("extract_word_window copies the prefix when the word starts at 0") {
    AudioClip clip = test_tone(1.0);
    corpus::Alignment a = simple_alignment();
    a.word_start = 0.0;
    const AudioClip w = corpus::extract_word_window(clip, a, 0.5);
    REQUIRE(w.samples.size() == 8000);
    for (std::size_t i = 0; i < 8000; ++i) CHECK(w.samples[i] == clip.samples[i]);
}

TEST_CASE("extract_word_window zero-pads when the source ends early") {
    AudioClip clip = test_tone(1.0);
    corpus::Alignment a = simple_alignment();
    a.word_start = 0.9;
    const AudioClip w = corpus::extract_word_window(clip, a, 0.5);
    REQUIRE(w.samples.size() == 8000);
    const std::size_t start = 14400;  // 0.9 s * 16 kHz
    for (std::size_t i = 0; i < 1600; ++i) CHECK(w.samples[i] == clip.samples[start + i]);
    for (std::size_t i = 1600; i < 8000; ++i) CHECK(w.samples[i] == 0.0);
}

TEST_CASE("extract_word_window rejects onsets beyond the clip") {
    AudioClip clip = test_tone(1.0);
    corpus::Alignment a = simple_alignment();
    a.word_start = 1.2;
    CHECK_THROWS_AS(corpus::extract_word_window(clip, a, 0.5), DataError);
}

TEST_CASE("extract_word_window length equals round(window * rate) for any window") {
    AudioClip clip = test_tone(0.7);
    corpus::Alignment a = simple_alignment();
    a.word_start = 0.05;
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const double win = rng.uniform(0.01, 1.2);
        const AudioClip w = corpus::extract_word_window(clip, a, win);
        CHECK(static_cast<long long>(w.samples.size()) == std::llround(win * 16000));
    }
}

TEST_CASE("validate_alignment rejects the documented invariant violations") {
    corpus::Alignment ok = simple_alignment();
    CHECK_NOTHROW(corpus::validate_alignment(ok, "t"));

    corpus::Alignment two_stressed = ok;
    two_stressed.phones[3].is_stressed_vowel = true;
    CHECK_THROWS_AS(corpus::validate_alignment(two_stressed, "t"), DataError);

    corpus::Alignment overlapping = ok;
    overlapping.phones[1].end = 0.32;  // overlaps phone 2 at 0.30
    CHECK_THROWS_AS(corpus::validate_alignment(overlapping, "t"), DataError);

    corpus::Alignment bad_boundary = ok;
    bad_boundary.syllable_boundary = 0.9;
    CHECK_THROWS_AS(corpus::validate_alignment(bad_boundary, "t"), DataError);

    corpus::Alignment outside = ok;
    outside.phones[0].start = 0.01;  // before word_start
    CHECK_THROWS_AS(corpus::validate_alignment(outside, "t"), DataError);

    corpus::Alignment stressed_consonant = ok;
    stressed_consonant.phones[1].is_stressed_vowel = false;
    stressed_consonant.phones[0].is_stressed_vowel = true;
    CHECK_THROWS_AS(corpus::validate_alignment(stressed_consonant, "t"), DataError);
}

TEST_CASE("load_manifest on an empty manifest returns an empty list") {
    const fs::path dir = make_temp_dir("manifest_empty");
    std::ofstream(dir / "manifest.jsonl");
    CHECK(corpus::load_manifest((dir / "manifest.jsonl").string()).empty());
}

TEST_CASE("load_manifest returns one sample per row with matching word types") {
    const fs::path dir = make_temp_dir("manifest3");
    corpus::Alignment a = simple_alignment();
    const char* words[3] = {"wallet", "extend", "record"};
    std::ofstream manifest(dir / "manifest.jsonl");
    for (int i = 0; i < 3; ++i) {
        corpus::Alignment ai = a;
        ai.word_label = words[i];
        write_wav((dir / ("a" + std::to_string(i) + ".wav")).string(), test_tone(1.0));
        corpus::save_alignment((dir / ("a" + std::to_string(i) + ".json")).string(), ai);
        write_manifest_row(manifest, "a" + std::to_string(i) + ".wav",
                           "a" + std::to_string(i) + ".json", words[i], "s" + std::to_string(i));
    }
    manifest.close();

    const auto samples = corpus::load_manifest((dir / "manifest.jsonl").string());
    REQUIRE(samples.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(samples[static_cast<std::size_t>(i)].word_type == words[i]);
        CHECK(samples[static_cast<std::size_t>(i)].clip.samples.size() == 8000);
        // Alignment rebased to the window: the word now starts at 0.
        CHECK(samples[static_cast<std::size_t>(i)].alignment.word_start ==
              doctest::Approx(0.0));
        CHECK(samples[static_cast<std::size_t>(i)].augmentation ==
              corpus::AugmentationTag::none);
    }
}

TEST_CASE("load_manifest flags a row whose alignment has two stressed vowels") {
    const fs::path dir = make_temp_dir("manifest_bad");
    corpus::Alignment a = simple_alignment();
    a.phones[3].is_stressed_vowel = true;
    write_wav((dir / "a.wav").string(), test_tone(1.0));
    corpus::save_alignment((dir / "a.json").string(), simple_alignment());
    // save_alignment validates, so write the bad alignment manually.
    std::ofstream(dir / "bad.json")
        << "{\"word_label\":\"wallet\",\"word_start\":0.1,\"word_end\":0.55,"
           "\"syllable_boundary\":0.3,\"stress\":\"initial\",\"phones\":["
           "{\"label\":\"a\",\"start\":0.15,\"end\":0.28,\"is_vowel\":true,\"is_stressed_vowel\":true},"
           "{\"label\":\"e\",\"start\":0.35,\"end\":0.5,\"is_vowel\":true,\"is_stressed_vowel\":true}]}";
    std::ofstream manifest(dir / "manifest.jsonl");
    write_manifest_row(manifest, "a.wav", "bad.json", "wallet", "s0");
    manifest.close();

    CHECK_THROWS_WITH_AS(corpus::load_manifest((dir / "manifest.jsonl").string()),
                         doctest::Contains("stressed vowel"), DataError);
}

TEST_CASE("load_manifest names the row of a missing audio file") {
    const fs::path dir = make_temp_dir("manifest_missing");
    corpus::save_alignment((dir / "a.json").string(), simple_alignment());
    std::ofstream manifest(dir / "manifest.jsonl");
    write_manifest_row(manifest, "nope.wav", "a.json", "wallet", "s0");
    manifest.close();
    CHECK_THROWS_WITH_AS(corpus::load_manifest((dir / "manifest.jsonl").string()),
                         doctest::Contains("row 1"), DataError);
}

TEST_CASE("load_manifest enforces case-folded word types") {
    const fs::path dir = make_temp_dir("manifest_case");
    write_wav((dir / "a.wav").string(), test_tone(1.0));
    corpus::save_alignment((dir / "a.json").string(), simple_alignment());  // label "Wallet"
    std::ofstream manifest(dir / "manifest.jsonl");
    write_manifest_row(manifest, "a.wav", "a.json", "WALLET", "s0");  // not case-folded
    manifest.close();
    CHECK_THROWS_AS(corpus::load_manifest((dir / "manifest.jsonl").string()), DataError);
}

namespace {

std::vector<corpus::Sample> samples_with_types(int n_types, int per_type) {
    std::vector<corpus::Sample> out;
    for (int t = 0; t < n_types; ++t) {
        for (int i = 0; i < per_type; ++i) {
            corpus::Sample s;
            s.clip.samples.assign(10, 0.1);
            s.word_type = "type" + std::to_string(t);
            s.source_id = s.word_type + "_" + std::to_string(i);
            s.alignment = simple_alignment(t % 2 == 0 ? corpus::Stress::initial
                                                      : corpus::Stress::final);
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::set<std::string> type_set(const std::vector<corpus::Sample>& v) {
    std::set<std::string> s;
    for (const auto& x : v) s.insert(x.word_type);
    return s;
}

}  // namespace

TEST_CASE("split_by_word_type partitions 249 types into 201/24/24 disjointly") {
    const auto samples = samples_with_types(249, 2);
    const corpus::DatasetSplit split = corpus::split_by_word_type(samples, 201, 24, 24, 7);

    const auto tr = type_set(split.train), va = type_set(split.validation), te = type_set(split.test);
    CHECK(tr.size() == 201);
    CHECK(va.size() == 24);
    CHECK(te.size() == 24);
    for (const auto& t : va) CHECK(tr.count(t) == 0);
    for (const auto& t : te) {
        CHECK(tr.count(t) == 0);
        CHECK(va.count(t) == 0);
    }
    CHECK(split.train.size() + split.validation.size() + split.test.size() == samples.size());
}

TEST_CASE("split_by_word_type is deterministic under the seed") {
    const auto samples = samples_with_types(30, 3);
    const auto s1 = corpus::split_by_word_type(samples, 20, 5, 5, 99);
    const auto s2 = corpus::split_by_word_type(samples, 20, 5, 5, 99);
    REQUIRE(s1.train.size() == s2.train.size());
    for (std::size_t i = 0; i < s1.train.size(); ++i)
        CHECK(s1.train[i].source_id == s2.train[i].source_id);

    const auto s3 = corpus::split_by_word_type(samples, 20, 5, 5, 100);
    bool same = s1.test.size() == s3.test.size();
    if (same)
        for (std::size_t i = 0; i < s1.test.size(); ++i)
            same = same && s1.test[i].source_id == s3.test[i].source_id;
    CHECK_FALSE(same);  // a different seed should move types around
}

TEST_CASE("split_by_word_type rejects counts that do not sum to the type count") {
    const auto samples = samples_with_types(249, 1);
    CHECK_THROWS_AS(corpus::split_by_word_type(samples, 200, 24, 24, 7), ConfigError);
}

namespace {

double vowel_rms(const AudioClip& clip, const corpus::Phone& p) {
    const auto lo = static_cast<std::size_t>(std::llround(p.start * clip.sample_rate));
    const auto hi = static_cast<std::size_t>(std::llround(p.end * clip.sample_rate));
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += clip.samples[i] * clip.samples[i];
    return std::sqrt(acc / static_cast<double>(hi - lo));
}

}  // namespace

TEST_CASE("synthesize_disyllable: stressed side is longer and louder, both orders") {
    for (corpus::Stress st : {corpus::Stress::initial, corpus::Stress::final}) {
        auto [clip, align] = corpus::synthesize_disyllable(st, 4242);
        CHECK(clip.samples.size() == 8000);
        CHECK_NOTHROW(corpus::validate_alignment(align, "synth"));

        const corpus::Phone* v[2] = {nullptr, nullptr};
        for (const corpus::Phone& p : align.phones)
            if (p.is_vowel) (v[0] ? v[1] : v[0]) = &p;
        REQUIRE(v[1] != nullptr);

        const double rms0 = vowel_rms(clip, *v[0]), rms1 = vowel_rms(clip, *v[1]);
        const double d0 = v[0]->end - v[0]->start, d1 = v[1]->end - v[1]->start;
        if (st == corpus::Stress::initial) {
            CHECK(rms0 > rms1);
            CHECK(d0 > d1);
            CHECK(v[0]->is_stressed_vowel);
        } else {
            CHECK(rms1 > rms0);
            CHECK(d1 > d0);
            CHECK(v[1]->is_stressed_vowel);
        }
    }
}

TEST_CASE("synthesize_disyllable: per-vowel RMS ordering swaps with the stress flag") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto [ci, ai] = corpus::synthesize_disyllable(corpus::Stress::initial, seed);
        auto [cf, af] = corpus::synthesize_disyllable(corpus::Stress::final, seed);
        auto rms_pair = [&](const AudioClip& c, const corpus::Alignment& a) {
            std::pair<double, double> r{0, 0};
            int vi = 0;
            for (const corpus::Phone& p : a.phones)
                if (p.is_vowel) (vi++ == 0 ? r.first : r.second) = vowel_rms(c, p);
            return r;
        };
        const auto ri = rms_pair(ci, ai);
        const auto rf = rms_pair(cf, af);
        CHECK(ri.first > ri.second);
        CHECK(rf.first < rf.second);
    }
}

TEST_CASE("synthesize_disyllable is bit-identical under a fixed seed") {
    auto [c1, a1] = corpus::synthesize_disyllable(corpus::Stress::initial, 77);
    auto [c2, a2] = corpus::synthesize_disyllable(corpus::Stress::initial, 77);
    REQUIRE(c1.samples.size() == c2.samples.size());
    for (std::size_t i = 0; i < c1.samples.size(); ++i) CHECK(c1.samples[i] == c2.samples[i]);
    CHECK(a1.word_end == a2.word_end);
}

TEST_CASE("synthesize_disyllable rejects non-positive multipliers") {
    corpus::SynthParams p;
    p.stressed_amp_mult = 0.0;
    CHECK_THROWS_AS(corpus::synthesize_disyllable(corpus::Stress::initial, 1, p), ConfigError);
    corpus::SynthParams q;
    q.stressed_duration_mult = -1.0;
    CHECK_THROWS_AS(corpus::synthesize_disyllable(corpus::Stress::initial, 1, q), ConfigError);
}

TEST_CASE("alignment json round trip preserves the structure") {
    const fs::path dir = make_temp_dir("alignjson");
    const corpus::Alignment a = simple_alignment(corpus::Stress::final);
    corpus::save_alignment((dir / "a.json").string(), a);
    const corpus::Alignment b = corpus::load_alignment((dir / "a.json").string());
    CHECK(b.word_label == a.word_label);
    CHECK(b.word_start == doctest::Approx(a.word_start));
    CHECK(b.syllable_boundary == doctest::Approx(a.syllable_boundary));
    CHECK(b.stress == a.stress);
    REQUIRE(b.phones.size() == a.phones.size());
    for (std::size_t i = 0; i < a.phones.size(); ++i) {
        CHECK(b.phones[i].label == a.phones[i].label);
        CHECK(b.phones[i].is_vowel == a.phones[i].is_vowel);
        CHECK(b.phones[i].is_stressed_vowel == a.phones[i].is_stressed_vowel);
    }
}
