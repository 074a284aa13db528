#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string_view>

#include "dpgs/core/error.hpp"
#include "dpgs/diff/param_vector.hpp"

namespace dpgs {

struct AdamState {
  ParamVector m, v;
  std::int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const ParamVector& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

using SlotLr = std::function<double(std::string_view slot)>;

/// One bias-corrected Adam update with a per-slot learning rate.
inline void adam_step(ParamVector& params, const ParamVector& grads, AdamState& st, const SlotLr& lr) {
  if (!params.same_layout(grads)) throw InvalidArgument("adam_step: gradient layout differs from params");
  if (!st.m.same_layout(params)) {
    if (st.t != 0) throw InvalidArgument("adam_step: optimizer state layout differs from params");
    st.m = params.zeros_like();
    st.v = params.zeros_like();
  }
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads.data()[i]))
      throw DivergedError("non-finite gradient in slot '" + grads.slot_of(i).name + "'", "adam_step");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (const auto& slot : params.layout()) {
    const double rate = lr(slot.name);
    for (std::size_t k = 0; k < slot.length; ++k) {
      const std::size_t i = slot.offset + k;
      const double g = grads.data()[i];
      double& m = st.m.data()[i];
      double& v = st.v.data()[i];
      m = st.beta1 * m + (1 - st.beta1) * g;
      v = st.beta2 * v + (1 - st.beta2) * g * g;
      params.data()[i] -= rate * (m / c1) / (std::sqrt(v / c2) + st.eps);
    }
  }
}

inline void adam_step(ParamVector& params, const ParamVector& grads, AdamState& st, double lr) {
  adam_step(params, grads, st, [lr](std::string_view) { return lr; });
}

}  // namespace dpgs
