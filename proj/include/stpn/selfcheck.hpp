#pragma once

#include <string>
#include <vector>

namespace stpn {

/// Result of one oracle suite: checks run, checks failed, and the first
/// failure's description when any check failed.
struct SuiteResult {
    std::string name;
    int total = 0;
    int failed = 0;
    std::string first_failure;

    [[nodiscard]] bool passed() const { return failed == 0; }
};

/// Run the full oracle battery: the blockwise semi product against the
/// explicit Kronecker route, ratio-1 collapse of every factorized layer to
/// its classical twin, every layer family against regression on its
/// reconstruction, and sequential against hierarchical chain merging.
/// Exceptions thrown inside a check count as failures of that check.
[[nodiscard]] std::vector<SuiteResult> run_selfcheck();

/// Render one line per suite plus a verdict line.
[[nodiscard]] std::string selfcheck_table(const std::vector<SuiteResult>& suites);

}  // namespace stpn
