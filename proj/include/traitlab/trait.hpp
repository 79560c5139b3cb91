// Copyright 2026 The traitlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>

#include "traitlab/error.hpp"

namespace traitlab {

// The Big Five. The enumerator order is the canonical order used for
// classifier weight columns, probability vectors and per-trait tables.
enum class Trait : int {
  Openness = 0,
  Conscientiousness = 1,
  Extraversion = 2,
  Agreeableness = 3,
  Neuroticism = 4,
};

inline constexpr std::size_t kNumTraits = 5;

inline constexpr std::array<Trait, kNumTraits> kAllTraits = {
    Trait::Openness, Trait::Conscientiousness, Trait::Extraversion,
    Trait::Agreeableness, Trait::Neuroticism};

// Row/column order of the published confusion-matrix layout.
inline constexpr std::array<Trait, kNumTraits> kConfusionDisplayOrder = {
    Trait::Extraversion, Trait::Agreeableness, Trait::Neuroticism,
    Trait::Openness, Trait::Conscientiousness};

constexpr std::size_t index_of(Trait t) noexcept {
  return static_cast<std::size_t>(t);
}

constexpr std::string_view to_string(Trait t) noexcept {
  switch (t) {
    case Trait::Openness: return "Openness";
    case Trait::Conscientiousness: return "Conscientiousness";
    case Trait::Extraversion: return "Extraversion";
    case Trait::Agreeableness: return "Agreeableness";
    case Trait::Neuroticism: return "Neuroticism";
  }
  return "?";
}

// Case-insensitive, surrounding whitespace ignored. Anything outside the five
// names is an error.
inline Trait parse_trait(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  for (Trait t : kAllTraits) {
    std::string_view name = to_string(t);
    if (name.size() == s.size() &&
        std::equal(name.begin(), name.end(), s.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) ==
                 std::tolower(static_cast<unsigned char>(b));
        })) {
      return t;
    }
  }
  throw ParseError("unknown personality trait '" + std::string(s) + "'");
}

}  // namespace traitlab
