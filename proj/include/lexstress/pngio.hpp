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

#ifndef LEXSTRESS_PNGIO_HPP
#define LEXSTRESS_PNGIO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace lexstress {

// Writes an 8-bit grayscale PNG. pixels are row-major, top row first, one
// byte per pixel. Compression settings are fixed so identical inputs produce
// byte-identical files.
void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels, int width,
                     int height);

}  // namespace lexstress

#endif  // LEXSTRESS_PNGIO_HPP
