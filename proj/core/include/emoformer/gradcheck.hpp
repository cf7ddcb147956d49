#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace emoformer {

struct GradCheckCase {
  std::string op;
  std::string detail;  // input shapes and variant under test
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  double step = 0.0;
  double tolerance = 0.0;
  std::vector<GradCheckCase> cases;

  bool all_passed() const;
  nlohmann::json to_json() const;
};

// Compares every differentiable op's reverse-mode gradients against central
// finite differences on the 64-bit tensor type, across several randomized
// shapes per op. Inputs near kinks (relu zero crossings, pooling ties) are
// nudged away before probing so the comparison stays well posed.
GradCheckReport run_gradcheck(uint64_t seed);

}  // namespace emoformer
