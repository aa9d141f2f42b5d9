#pragma once

#include "nekfac/fisher.hpp"

#include <string>
#include <vector>

namespace nekfac {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // worst error vs bound, counts, etc.
};

enum class VerifyLevel { kFast, kFull };

/// Runs the property/oracle suite: Kronecker identities, eigenvalue
/// multiset, Frobenius optimality of the re-scaling diagonal, update
/// derivations against dense inverses, the EK-FAC -> K-FAC reduction,
/// sampling covariances, log-density and KL oracles, finite-difference
/// gradient checks, and state-sanity checks on a short training run.
/// kFull raises trial and Monte-Carlo sample counts for tighter bounds.
std::vector<CheckResult> run_verification(VerifyLevel level, uint64_t seed);

/// One "PASS name  detail" / "FAIL name  detail" line per check.
std::string format_check_results(const std::vector<CheckResult>& results);

bool all_passed(const std::vector<CheckResult>& results);

/// Non-negativity of the re-scaling grid and positivity of its damped
/// variants. Exposed separately so corrupted state can be checked directly.
CheckResult check_rescaling_psd(const std::string& name,
                                const RescalingDiag& resc);

}  // namespace nekfac
