#pragma once

#include <string>

namespace anml {

/// Outer penalty applied to a per-query argument x (positive means violated).
///   hinge:    max(0, x + margin)
///   logistic: log(1 + exp(x))
///   identity: x
enum class LossKind { hinge, logistic, identity };

struct LossFunction {
  LossKind kind = LossKind::hinge;
  double margin = 1.0;  // hinge only, in squared-distance units

  double value(double x) const;
  /// Right-continuous derivative; the hinge kink takes slope 0.
  double derivative(double x) const;
};

LossKind parse_loss_kind(const std::string& text);
std::string to_string(LossKind kind);

}  // namespace anml
