#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dcoral {

// A component passes when |analytic - numeric| <= max(abs_tol, rel_tol * max(|analytic|, |numeric|)).
// The reported error is |analytic - numeric| / max(|analytic|, |numeric|, abs_tol / rel_tol),
// so a check passes exactly when max_rel_error <= rel_tol.
struct GradCheckResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t components = 0;
    double max_rel_error = 0.0;
    double rel_tol = 0.0;
    double abs_tol = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckResult> checks;
    bool passed() const noexcept;
};

struct GradCheckOptions {
    std::uint64_t seed = 0;
    std::size_t max_rows = 16;      // n <= 16
    std::size_t max_features = 8;   // d <= 8
    std::size_t coral_instances = 50;
    std::size_t network_instances = 4;
    // Test hook: scales every analytic gradient by (1 + 1e-3) before comparing.
    bool corrupt_gradient = false;
};

// Central finite differences against:
//   coral:        analytic CORAL gradients, step 1e-5, tol max(1e-7 abs, 1e-5 rel)
//   joint/lambda: full parameter gradient of class loss + lambda * CORAL loss on a
//                 2-layer network, lambda in {0, 0.5, 10}, step 1e-6, tol 1e-4 rel
GradCheckReport run_gradcheck(const GradCheckOptions& options);

void print_report(std::ostream& os, const GradCheckReport& report);

}  // namespace dcoral
