#include "anml/loss_function.hpp"

#include <cmath>

#include "anml/errors.hpp"

namespace anml {

double LossFunction::value(double x) const {
  switch (kind) {
    case LossKind::hinge: return std::max(0.0, x + margin);
    case LossKind::logistic: return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    case LossKind::identity: return x;
  }
  return x;
}

double LossFunction::derivative(double x) const {
  switch (kind) {
    case LossKind::hinge: return x + margin > 0.0 ? 1.0 : 0.0;
    case LossKind::logistic:
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case LossKind::identity: return 1.0;
  }
  return 1.0;
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "hinge") return LossKind::hinge;
  if (text == "logistic") return LossKind::logistic;
  if (text == "identity") return LossKind::identity;
  throw InvalidInput("unknown loss kind '" + text + "' (expected hinge, logistic or identity)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::hinge: return "hinge";
    case LossKind::logistic: return "logistic";
    case LossKind::identity: return "identity";
  }
  return "unknown";
}

}  // namespace anml
