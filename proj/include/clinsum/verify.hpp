#pragma once

#include <string>
#include <vector>

#include "clinsum/common.hpp"

namespace clinsum {

struct VerifyCheck {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Micro-scale invariant suite behind the `verify` subcommand: gradient
// checks (including the corrupted-adjoint negative control), fusion
// identities, metric oracles, DKD bounds, split partitioning, training
// determinism.
std::vector<VerifyCheck> run_verification(uint64_t seed);

bool all_passed(const std::vector<VerifyCheck>& checks);

}  // namespace clinsum
