#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "prvr/matrix.hpp"

namespace prvr {

enum class MaskKind { kGaussian, kBoxcar, kBartlett };

inline const char* to_string(MaskKind k) {
  switch (k) {
    case MaskKind::kGaussian: return "gaussian";
    case MaskKind::kBoxcar: return "boxcar";
    case MaskKind::kBartlett: return "bartlett";
  }
  return "?";
}

inline MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "gaussian") return MaskKind::kGaussian;
  if (s == "boxcar") return MaskKind::kBoxcar;
  if (s == "bartlett") return MaskKind::kBartlett;
  throw std::invalid_argument("unknown constraint kind: " + s);
}

/// Symmetric Toeplitz attention-rescaling matrix. Entries depend only on
/// |i-j| and are nonincreasing in it. sigma = infinity gives an all-ones
/// matrix for every kind, which reduces the constrained block to a vanilla
/// encoder layer.
struct LocalityMask {
  int size = 0;
  double sigma = 0.0;
  MaskKind kind = MaskKind::kGaussian;
  Matrix values;
};

constexpr double kMaskFloor = 1e-6;

inline LocalityMask build_locality_mask(int m, double sigma, MaskKind kind) {
  if (m < 1) throw std::invalid_argument("build_locality_mask: empty mask (M must be >= 1)");
  if (!(sigma > 0.0)) throw std::invalid_argument("build_locality_mask: sigma must be > 0");
  LocalityMask lm;
  lm.size = m;
  lm.sigma = sigma;
  lm.kind = kind;
  lm.values = Matrix(m, m);
  const bool infinite = std::isinf(sigma);
  const int w = infinite ? 0 : static_cast<int>(std::ceil(sigma));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double dist = std::abs(j - i);
      double v;
      if (infinite) {
        v = 1.0;
      } else {
        switch (kind) {
          case MaskKind::kGaussian:
            v = (1.0 / (2.0 * std::numbers::pi)) * std::exp(-(dist * dist) / (sigma * sigma));
            break;
          case MaskKind::kBoxcar:
            v = dist <= w ? 1.0 : kMaskFloor;
            break;
          case MaskKind::kBartlett:
            v = std::max(kMaskFloor, 1.0 - dist / static_cast<double>(w));
            break;
        }
      }
      lm.values.at(i, j) = v;
    }
  }
  return lm;
}

}  // namespace prvr
