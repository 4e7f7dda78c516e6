#include "dlab/metrics.hpp"

#include <cmath>
#include <limits>

#include "dlab/errors.hpp"

namespace dlab {

namespace {

// Continued-fraction evaluation of the regularized incomplete beta function,
// after Lentz. Good to ~1e-12 for the arguments a t-distribution produces.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 400;
    constexpr double kEps = 3e-14;
    constexpr double kTiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double t_two_sided_p(double t, int df) {
    double x = df / (df + t * t);
    return betai(0.5 * df, 0.5, x);
}

}  // namespace

SequenceMetrics compute_metrics(const AccuracyMatrix& matrix) {
    int targets = matrix.targets();
    int stages = matrix.stages();
    if (targets < 1 || stages < 1)
        throw DataError("compute_metrics: need at least one stage and target");
    if (stages != targets)
        throw DataError("compute_metrics: stage count must match target count");
    if (matrix.columns.back() != "held_out")
        throw DataError("compute_metrics: last column must be held_out");
    for (const auto& row : matrix.rows)
        if (static_cast<int>(row.size()) != targets + 1)
            throw DataError("compute_metrics: ragged matrix");

    const auto& base = matrix.rows.front();
    const auto& final_row = matrix.rows.back();

    SequenceMetrics m;
    double learn = 0.0;
    for (int j = 0; j < targets; ++j)
        learn += matrix.rows[static_cast<std::size_t>(j + 1)]
                            [static_cast<std::size_t>(j)] -
                 base[static_cast<std::size_t>(j)];
    m.target_learning = learn / targets;

    if (targets > 1) {
        double forget = 0.0;
        for (int j = 0; j + 1 < targets; ++j)
            forget += final_row[static_cast<std::size_t>(j)] -
                      matrix.rows[static_cast<std::size_t>(j + 1)]
                                 [static_cast<std::size_t>(j)];
        m.target_forgetting = forget / (targets - 1);
    }

    double overall = 0.0;
    for (int j = 0; j < targets; ++j)
        overall += final_row[static_cast<std::size_t>(j)] -
                   base[static_cast<std::size_t>(j)];
    m.target_overall = overall / targets;

    m.held_out_forgetting = final_row.back() - base.back();
    return m;
}

TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DataError("paired_t_test: length mismatch");
    if (a.size() < 2) throw DataError("paired_t_test: need at least two pairs");
    int n = static_cast<int>(a.size());

    double mean = 0.0;
    for (int i = 0; i < n; ++i)
        mean += a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = a[static_cast<std::size_t>(i)] -
                   b[static_cast<std::size_t>(i)] - mean;
        var += d * d;
    }
    var /= (n - 1);

    TTestResult res;
    res.df = n - 1;
    if (var == 0.0) {
        res.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() *
                                        (mean > 0 ? 1.0 : -1.0);
        res.p = mean == 0.0 ? 1.0 : 0.0;
        return res;
    }
    res.t = mean / std::sqrt(var / n);
    res.p = t_two_sided_p(res.t, res.df);
    return res;
}

}  // namespace dlab
