/* Copyright 2026 The sspnet-toy Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>

namespace sspnet {

/// Axis-aligned box, top-left origin, pixels.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  static Box centered(double cx, double cy, double w, double h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

  friend bool operator==(const Box&, const Box&) = default;
};

struct GtBox {
  Box box;
  bool ignore = false;

  double scale() const { return std::sqrt(box.w * box.h); }
};

inline double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  return iw > 0 && ih > 0 ? iw * ih : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Intersection over the foreground box `fg`: area(fg ∩ other) / area(fg).
double iof(const Box& fg, const Box& other);

}  // namespace sspnet
