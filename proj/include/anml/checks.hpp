#pragma once

// Self-checks behind `anml losscheck`: central finite differences for every
// analytic gradient and the limit/reduction identities between the losses.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace anml {

struct CheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  /// Run only these checks; empty runs all.
  std::vector<std::string> only;
  /// Name of a check whose analytic gradient is deliberately perturbed, to
  /// confirm the harness catches it. Empty for normal runs.
  std::string corrupt;
};

struct CheckOutcome {
  std::string name;
  bool passed = false;
  double worst = 0.0;      // largest error seen across instances
  double tolerance = 0.0;
  std::size_t instances = 0;
  std::string detail;
};

/// Names accepted by CheckOptions::only, in execution order.
const std::vector<std::string>& check_names();

/// Throws InvalidInput on an unknown name in `only` or `corrupt`.
std::vector<CheckOutcome> run_loss_checks(const CheckOptions& options);

void to_json(nlohmann::json& j, const CheckOutcome& c);

}  // namespace anml
