#include "dlab/finite_diff.hpp"

#include <cmath>

#include "dlab/errors.hpp"

namespace dlab {

namespace {

struct SweepStats {
    double worst_rel = 0.0;  // max_i |a_i - c_i| / (|c_i| + 1e-8)
    double max_dev = 0.0;    // max_i |a_i - c_i|
    double max_central = 0.0;
    bool saw_nan = false;
};

SweepStats central_sweep(const std::function<double(const ParamMap&)>& f,
                         const ParamMap& params, const ParamMap& analytic,
                         double epsilon) {
    if (epsilon <= 0.0) throw DataError("finite_diff: epsilon must be > 0");
    ParamMap work = params;
    SweepStats s;
    for (const auto& [name, grad] : analytic) {
        auto it = work.find(name);
        if (it == work.end())
            throw DataError("finite_diff: unknown parameter " + name);
        DenseTensor& p = it->second;
        if (!p.same_shape(grad))
            throw DataError("finite_diff: gradient shape mismatch for " + name);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            float saved = p[i];
            p[i] = saved + static_cast<float>(epsilon);
            const double hi = p[i];
            double up = f(work);
            p[i] = saved - static_cast<float>(epsilon);
            const double lo = p[i];
            double down = f(work);
            p[i] = saved;
            double central = (up - down) / (hi - lo);
            double dev = std::abs(grad[i] - central);
            double rel = dev / (std::abs(central) + 1e-8);
            if (std::isnan(rel)) {
                s.saw_nan = true;
                return s;
            }
            if (rel > s.worst_rel) s.worst_rel = rel;
            if (dev > s.max_dev) s.max_dev = dev;
            if (std::abs(central) > s.max_central)
                s.max_central = std::abs(central);
        }
    }
    return s;
}

}  // namespace

double finite_diff_check(const std::function<double(const ParamMap&)>& f,
                         const ParamMap& params, const ParamMap& analytic,
                         double epsilon) {
    SweepStats s = central_sweep(f, params, analytic, epsilon);
    if (s.saw_nan) return std::nan("");
    return s.worst_rel;
}

double finite_diff_scale_error(const std::function<double(const ParamMap&)>& f,
                               const ParamMap& params, const ParamMap& analytic,
                               double epsilon) {
    SweepStats s = central_sweep(f, params, analytic, epsilon);
    if (s.saw_nan) return std::nan("");
    return s.max_dev / (s.max_central + 1e-8);
}

}  // namespace dlab
