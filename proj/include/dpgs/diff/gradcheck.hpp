#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dpgs/core/error.hpp"
#include "dpgs/diff/param_vector.hpp"

namespace dpgs {

/// A scalar objective with an analytic gradient.
///
/// `anchor` is the point at which gradient-stopped quantities are evaluated.
/// Normal use passes anchor == params; finite differences perturb params while
/// keeping the anchor fixed, which is what a stop-gradient means. When `grad`
/// is non-null it receives dL/dparams (same layout, overwritten).
using LossFn = std::function<double(const ParamVector& params, const ParamVector& anchor,
                                    ParamVector* grad)>;

/// Evaluates the analytic gradient; throws DivergedError on a non-finite loss
/// or gradient.
inline ParamVector backward(const LossFn& loss_fn, const ParamVector& params,
                            const std::string& context = {}) {
  ParamVector grad = params.zeros_like();
  const double loss = loss_fn(params, params, &grad);
  if (!std::isfinite(loss)) throw DivergedError("non-finite loss", context);
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad.data()[i]))
      throw DivergedError("non-finite gradient in slot '" + grad.slot_of(i).name + "'", context);
  return grad;
}

struct SlotError {
  std::string slot;
  double max_rel_error = 0.0;
};

struct GradReport {
  std::string op;
  double max_rel_error = 0.0;
  std::string argmax_slot;
  std::size_t argmax_index = 0;
  double fd_step = 0.0;
  std::vector<SlotError> per_slot;
  double argmax_analytic = 0.0, argmax_fd = 0.0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

inline double relative_error(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8});
}

/// Smallest gradient magnitude a central difference at `fd_step` resolves to
/// about 1e-4 relative, given the loss value.
inline double fd_resolution(double loss, double fd_step) {
  return 1e5 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / fd_step;
}

/// True when every analytic component is either exactly zero or above the
/// finite-difference resolution, i.e. the fixture is usable as an oracle.
inline bool well_conditioned(const LossFn& loss_fn, const ParamVector& params, double fd_step) {
  ParamVector g = params.zeros_like();
  const double loss = loss_fn(params, params, &g);
  const double floor = fd_resolution(loss, fd_step);
  for (double v : g.data())
    if (v != 0.0 && std::abs(v) < floor) return false;
  return true;
}

/// Central-difference check of every scalar in `params`.
inline GradReport grad_check(const std::string& op, const LossFn& loss_fn,
                             const ParamVector& params, double fd_step) {
  if (!(fd_step > 0)) throw InvalidArgument("fd_step must be positive");
  const ParamVector analytic = backward(loss_fn, params, op);
  GradReport report{op, 0.0, {}, 0, fd_step, {}};
  ParamVector probe = params;
  for (const auto& slot : params.layout()) {
    SlotError se{slot.name, 0.0};
    for (std::size_t k = 0; k < slot.length; ++k) {
      const std::size_t i = slot.offset + k;
      const double x0 = params.data()[i];
      probe.data()[i] = x0 + fd_step;
      const double fp = loss_fn(probe, params, nullptr);
      probe.data()[i] = x0 - fd_step;
      const double fm = loss_fn(probe, params, nullptr);
      probe.data()[i] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw DivergedError("non-finite value while probing slot '" + slot.name + "'", op);
      const double fd = (fp - fm) / (2 * fd_step);
      const double err = relative_error(analytic.data()[i], fd);
      se.max_rel_error = std::max(se.max_rel_error, err);
      if (report.argmax_slot.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.argmax_slot = slot.name;
        report.argmax_index = k;
        report.argmax_analytic = analytic.data()[i];
        report.argmax_fd = fd;
      }
    }
    report.per_slot.push_back(se);
  }
  return report;
}

/// Appends rows `op,slot,err,step` (header written by the caller once).
inline void write_gradcheck_rows(std::ostream& os, const GradReport& r) {
  for (const auto& s : r.per_slot)
    os << r.op << ',' << s.slot << ',' << s.max_rel_error << ',' << r.fd_step << '\n';
}

}  // namespace dpgs
