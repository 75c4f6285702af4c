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

#include "sspnet/neck.hpp"

namespace sspnet {

namespace {

void require_gate(const Var& a, const char* what) {
  const Tensor& v = a.value();
  if (v.rank() != 4 || v.dim(1) != 1) {
    throw DimensionError(std::string(what) + " must be a single-channel map, got " + shape_str(v.shape()));
  }
}

void require_plane(const Var& a, const Var& b, const char* op) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 4 || y.rank() != 4 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3)) {
    throw DimensionError(std::string(op) + ": misaligned maps " + shape_str(x.shape()) + " and " +
                         shape_str(y.shape()));
  }
}

}  // namespace

NeckParams init_neck(Index channels, Rng& rng) {
  NeckParams p;
  for (int k = kFirstLevel; k <= kLastLevel; ++k) p.output_convs.push_back(make_conv(channels, channels, 3, {1, 1, 1}, rng));
  return p;
}

Var sem(const Var& features, const Var& attention) {
  require_gate(attention, "sem attention");
  require_plane(features, attention, "sem");
  return mul(features, one_plus(attention));
}

Var ssm_merge(const Var& p_next, const Var& a_k, const Var& a_km1, const Var& c_km1) {
  require_gate(a_k, "ssm A_k");
  require_gate(a_km1, "ssm A_{k-1}");
  Var a_up = nearest_upsample(a_k, 2);
  require_plane(a_up, a_km1, "ssm attention");
  Var p_up = nearest_upsample(p_next, 2);
  require_plane(p_up, c_km1, "ssm features");
  require_plane(p_up, a_km1, "ssm gate");
  if (p_up.shape() != c_km1.shape()) {
    throw DimensionError("ssm: " + shape_str(p_up.shape()) + " vs " + shape_str(c_km1.shape()));
  }
  return add(mul(mul(a_km1, a_up), p_up), c_km1);
}

FeaturePyramid ssm_chain(const FeaturePyramid& laterals, const AttentionPyramid& attention) {
  if (laterals.size() != attention.size() || laterals.size() < 2) {
    throw DimensionError("ssm_chain: pyramid and attention level counts differ");
  }
  FeaturePyramid merged = laterals;
  for (size_t i = laterals.size() - 1; i-- > 0;) {
    merged.levels[i] = ssm_merge(merged.levels[i + 1], attention.maps[i + 1], attention.maps[i], laterals.levels[i]);
  }
  return merged;
}

namespace {

FeaturePyramid apply_outputs(const FeaturePyramid& merged, const NeckParams& params, ParamBinding& bind) {
  if (params.output_convs.size() != merged.size()) throw DimensionError("neck: output conv count mismatch");
  FeaturePyramid out = merged;
  for (size_t i = 0; i < merged.size(); ++i) out.levels[i] = apply(params.output_convs[i], merged.levels[i], bind);
  return out;
}

}  // namespace

NeckOutput sspnet_neck(const FeaturePyramid& c, const AttentionPyramid& attention, const NeckParams& params,
                       ParamBinding& bind) {
  if (c.size() != attention.size()) throw DimensionError("sspnet_neck: level count mismatch");
  FeaturePyramid enhanced = c;
  for (size_t i = 0; i < c.size(); ++i) enhanced.levels[i] = sem(c.levels[i], attention.maps[i]);
  NeckOutput out;
  out.merged = ssm_chain(enhanced, attention);
  out.outputs = apply_outputs(out.merged, params, bind);
  out.attention = attention;
  out.provenance = MergeRule::Ssm;
  return out;
}

NeckOutput baseline_neck(const FeaturePyramid& c, const NeckParams& params, ParamBinding& bind) {
  NeckOutput out;
  out.merged = fpn_merge_baseline(c);
  out.outputs = apply_outputs(out.merged, params, bind);
  out.provenance = MergeRule::Baseline;
  return out;
}

NeckOutput sspnet_forward(const Var& image, const SspnetParams& params, ParamBinding& bind) {
  FeaturePyramid c = extract_features(image, params.backbone, bind);
  AttentionPyramid a = context_attention(c, params.cam, bind);
  return sspnet_neck(c, a, params.neck, bind);
}

}  // namespace sspnet
