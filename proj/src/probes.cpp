#include "dlab/probes.hpp"

#include <cmath>

namespace dlab {

NtbResult ntb(const TinyLmm& model, const ProbeBatch& batch,
              const std::vector<int>& numeric_tokens) {
    if (batch.items.empty()) throw DataError("ntb: empty probe batch");
    if (numeric_tokens.empty()) throw DataError("ntb: empty numeric token set");
    for (int t : numeric_tokens)
        if (t < 0 || t >= model.cfg.vocab)
            throw DataError("ntb: numeric token id out of range");

    NtbResult res;
    double batch_sum = 0.0;
    for (const ProbeBatch::Item& item : batch.items) {
        std::vector<double> step_mass;
        std::vector<int> generated = greedy_decode(
            model, item.prompt, item.visual, batch.max_len, batch.eoa_id,
            [&](const DenseTensor& probs) {
                double best = 0.0;
                for (int t : numeric_tokens)
                    best = std::max(best, static_cast<double>(probs.at(0, t)));
                step_mass.push_back(best);
            });
        std::size_t steps = generated.size();
        if (steps == 0) {
            ++res.skipped;
            continue;
        }
        double step_sum = 0.0;
        for (std::size_t i = 0; i < steps; ++i) step_sum += step_mass[i];
        batch_sum += step_sum / static_cast<double>(steps);
        ++res.contributing;
    }
    if (res.contributing == 0)
        throw DataError("ntb: no generation produced any steps");
    res.value = batch_sum / res.contributing;
    return res;
}

AttributionReport layer_attribution(const TinyLmm& base, const TinyLmm& tuned,
                                    const TaskBatch& batch) {
    if (batch.items.empty()) throw DataError("layer_attribution: empty batch");
    if (base.cfg != tuned.cfg)
        throw NumericError("layer_attribution: config mismatch");
    if (!bitwise_equal(base.param("embed.w"), tuned.param("embed.w")) ||
        !bitwise_equal(base.param("head.w"), tuned.param("head.w")))
        throw NumericError(
            "layer_attribution: embeddings/head differ between models");

    int layers = base.cfg.layers;
    const DenseTensor& head = base.param("head.w");
    AttributionReport rep;
    std::vector<double> sa_sq(static_cast<std::size_t>(layers), 0.0);
    std::vector<double> mlp_sq(static_cast<std::size_t>(layers), 0.0);
    int positions = 0;

    for (const TrainExample& ex : batch.items) {
        if (ex.target.empty()) continue;
        SequenceInput seq{ex.prompt, ex.visual, ex.target};
        ForwardTrace tb = forward_trace(base, seq);
        ForwardTrace tt = forward_trace(tuned, seq);
        int first_row = static_cast<int>(ex.prompt.size()) +
                        base.cfg.visual_tokens - 1;
        for (std::size_t i = 0; i < ex.target.size(); ++i) {
            int row = first_row + static_cast<int>(i);
            DenseTensor residual_sum({1, base.cfg.d});
            for (int l = 0; l < layers; ++l) {
                DenseTensor da({1, base.cfg.d});
                DenseTensor df({1, base.cfg.d});
                for (int c = 0; c < base.cfg.d; ++c) {
                    da.at(0, c) = tt.a[l].at(row, c) - tb.a[l].at(row, c);
                    df.at(0, c) = tt.f[l].at(row, c) - tb.f[l].at(row, c);
                    residual_sum.at(0, c) += da.at(0, c) + df.at(0, c);
                }
                DenseTensor dza = matmul(da, head);
                DenseTensor dzf = matmul(df, head);
                double na = 0.0, nf = 0.0;
                for (int c = 0; c < dza.cols(); ++c) {
                    na += static_cast<double>(dza.at(0, c)) * dza.at(0, c);
                    nf += static_cast<double>(dzf.at(0, c)) * dzf.at(0, c);
                }
                sa_sq[static_cast<std::size_t>(l)] += na;
                mlp_sq[static_cast<std::size_t>(l)] += nf;
            }
            DenseTensor via_layers = matmul(residual_sum, head);
            double gap = 0.0;
            for (int c = 0; c < via_layers.cols(); ++c) {
                double direct = static_cast<double>(tt.z.at(row, c)) -
                                tb.z.at(row, c);
                gap = std::max(gap,
                               std::abs(via_layers.at(0, c) - direct));
            }
            rep.completeness_gap = std::max(rep.completeness_gap, gap);
            ++positions;
        }
    }
    if (positions == 0)
        throw DataError("layer_attribution: no target positions to score");

    rep.positions = positions;
    rep.sa.resize(static_cast<std::size_t>(layers));
    rep.mlp.resize(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        rep.sa[static_cast<std::size_t>(l)] =
            std::sqrt(sa_sq[static_cast<std::size_t>(l)] / positions);
        rep.mlp[static_cast<std::size_t>(l)] =
            std::sqrt(mlp_sq[static_cast<std::size_t>(l)] / positions);
    }
    return rep;
}

}  // namespace dlab
