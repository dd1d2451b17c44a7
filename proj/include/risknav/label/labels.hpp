// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cstdint>
#include <string>

#include "risknav/core/errors.hpp"

namespace risknav {

/// Semantic class of a lidar point. The numeric values are the on-disk
/// label column encoding and must stay stable.
enum class SemanticLabel : std::uint8_t {
  Ground = 0,
  Permanent = 1,  // fixed structure: walls, pillars
  Movable = 2,    // still but displaceable: chairs, boxes
  Dynamic = 3,    // moving obstacles: people
  Uncertain = 4,
};

inline constexpr int kNumLabels = 5;

inline const char* label_name(SemanticLabel l) {
  switch (l) {
    case SemanticLabel::Ground: return "ground";
    case SemanticLabel::Permanent: return "permanent";
    case SemanticLabel::Movable: return "movable";
    case SemanticLabel::Dynamic: return "dynamic";
    case SemanticLabel::Uncertain: return "uncertain";
  }
  return "?";
}

inline SemanticLabel label_from_u8(std::uint8_t v) {
  if (v >= kNumLabels) throw DataError("unknown semantic label value " + std::to_string(v));
  return static_cast<SemanticLabel>(v);
}

}  // namespace risknav
