#include "dlab/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace dlab {

AdamOptimizer::AdamOptimizer(TinyLmm& model, FreezeMask mask, TrainHyper hyper)
    : model_(&model), mask_(std::move(mask)), hyper_(hyper) {
    if (hyper_.total_steps < 1)
        throw ConfigError("AdamOptimizer: total_steps must be >= 1");
    for (const std::string& name : mask_.trainable) {
        const DenseTensor& p = model_->param(name);
        m_.emplace(name, DenseTensor(p.shape()));
        v_.emplace(name, DenseTensor(p.shape()));
    }
}

double AdamOptimizer::lr_at(int step) const {
    int warmup = static_cast<int>(
        std::ceil(hyper_.warmup_frac * hyper_.total_steps));
    if (warmup > 0 && step <= warmup)
        return hyper_.lr * step / warmup;
    int decay_span = std::max(1, hyper_.total_steps - warmup);
    double progress =
        std::min(1.0, static_cast<double>(step - warmup) / decay_span);
    return hyper_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamOptimizer::step(const GradMap& grads) {
    ++step_;
    double lr = lr_at(step_);
    double bc1 = 1.0 - std::pow(hyper_.beta1, step_);
    double bc2 = 1.0 - std::pow(hyper_.beta2, step_);
    for (const std::string& name : mask_.trainable) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // not on this batch's tape
        const DenseTensor& g = git->second;
        DenseTensor& p = model_->param(name);
        if (!g.same_shape(p))
            throw DataError("AdamOptimizer: gradient shape mismatch for " + name);
        DenseTensor& m = m_.at(name);
        DenseTensor& v = v_.at(name);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            double gi = g[i];
            double mi = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * gi;
            double vi = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            double update =
                lr * (mi / bc1) / (std::sqrt(vi / bc2) + hyper_.eps);
            p[i] = static_cast<float>(p[i] - update);
        }
        check_finite(p, "AdamOptimizer::step");
    }
    assert_frozen_intact(*model_, mask_);
}

}  // namespace dlab
