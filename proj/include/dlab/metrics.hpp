#pragma once

#include <string>
#include <vector>

namespace dlab {

// Row 0 is the baseline; row k the state after stage k. Columns follow the
// curriculum order, with the held-out aggregate last.
struct AccuracyMatrix {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int stages() const { return static_cast<int>(rows.size()) - 1; }
    int targets() const { return static_cast<int>(columns.size()) - 1; }
};

struct SequenceMetrics {
    double target_learning = 0.0;
    double target_forgetting = 0.0;
    double target_overall = 0.0;
    double held_out_forgetting = 0.0;
};

// Learning: mean over stages of (accuracy right after training - baseline).
// Forgetting: mean over all but the last task of (final - own-stage accuracy).
// Overall: mean over targets of (final - baseline).
// Held-out: final held-out aggregate minus its baseline.
SequenceMetrics compute_metrics(const AccuracyMatrix& matrix);

struct TTestResult {
    double t = 0.0;
    int df = 0;
    double p = 1.0;
};

// Two-sided paired t-test on equal-length samples. Zero-variance differences
// degenerate to p = 1 when every difference is zero, else p = 0.
TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b);

}  // namespace dlab
