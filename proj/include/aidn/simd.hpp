#pragma once

// Minimal wrappers over the GNU vector extensions for the float microkernels.
// Sixteen lanes everywhere: the hot channel count is 16, and wider shapes
// decompose into 16-lane chunks with a scalar tail.

#include <cstring>

namespace aidn::simd {

#if defined(__GNUC__) && !defined(AIDN_NO_SIMD)
#define AIDN_SIMD_VF16 1

typedef float vf16 __attribute__((vector_size(64), aligned(4), may_alias));

inline vf16 load16(const float* p) { return *reinterpret_cast<const vf16*>(p); }

inline void store16(float* p, vf16 v) { *reinterpret_cast<vf16*>(p) = v; }

inline vf16 splat16(float x) { return vf16{} + x; }

inline float hsum16(vf16 v) {
  float tmp[16];
  std::memcpy(tmp, &v, sizeof tmp);
  float a = 0, b = 0, c = 0, d = 0;
  for (int i = 0; i < 4; ++i) {
    a += tmp[i];
    b += tmp[4 + i];
    c += tmp[8 + i];
    d += tmp[12 + i];
  }
  return (a + b) + (c + d);
}

#endif

}  // namespace aidn::simd
