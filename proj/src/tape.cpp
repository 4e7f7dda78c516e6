#include "dlab/tape.hpp"

#include <cmath>
#include <cstring>
#include <utility>

namespace dlab {

namespace {

void accumulate(DenseTensor* g, const DenseTensor& delta) {
    if (g == nullptr) return;
    if (!g->same_shape(delta))
        throw InternalError("tape: gradient shape mismatch");
    float* gd = g->data();
    const float* dd = delta.data();
    for (std::int64_t i = 0; i < delta.size(); ++i) gd[i] += dd[i];
}

Tape* common_tape(Value a, Value b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw InternalError("tape: operands from different tapes");
    return a.tape;
}

}  // namespace

Value Tape::leaf(DenseTensor v, std::string name) {
    if (name.empty()) throw DataError("Tape::leaf: name required");
    nodes_.push_back(Node{std::move(v), std::move(name), {}, nullptr, nullptr});
    return Value{this, size() - 1};
}

Value Tape::constant(DenseTensor v) {
    nodes_.push_back(Node{std::move(v), std::string(), {}, nullptr, nullptr});
    return Value{this, size() - 1};
}

Value Tape::record(
    DenseTensor value, std::vector<int> in,
    std::function<void(const Node&, const Inputs&, const DenseTensor&,
                       const InputGrads&)>
        backward,
    std::function<DenseTensor(const Inputs&)> forward) {
    int id = size();
    for (int i : in)
        if (i < 0 || i >= id)
            throw InternalError("tape: input id out of order (cycle?)");
    nodes_.push_back(Node{std::move(value), std::string(), std::move(in),
                          std::move(backward), std::move(forward)});
    return Value{this, id};
}

const DenseTensor& Tape::value(Value v) const { return value(v.id); }

const DenseTensor& Tape::value(int id) const {
    if (id < 0 || id >= size()) throw DataError("Tape: node id out of range");
    return nodes_[static_cast<std::size_t>(id)].value;
}

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || id >= size()) throw DataError("Tape: node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

Tape::Inputs Tape::gather(const std::vector<int>& ids) const {
    Inputs out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(&nodes_[static_cast<std::size_t>(i)].value);
    return out;
}

int Tape::replay_mismatches() const {
    int bad = 0;
    for (const Node& n : nodes_) {
        if (!n.forward) continue;
        DenseTensor redo = n.forward(gather(n.in));
        if (!bitwise_equal(redo, n.value)) ++bad;
    }
    return bad;
}

GradMap reverse_grad(const Tape& tape, Value loss) {
    if (loss.tape != &tape) throw InternalError("reverse_grad: foreign value");
    const DenseTensor& lv = tape.value(loss);
    if (lv.size() != 1)
        throw NumericError("reverse_grad: loss must be a scalar");

    std::vector<DenseTensor> grads(static_cast<std::size_t>(tape.size()));
    auto slot = [&](int id) -> DenseTensor* {
        DenseTensor& g = grads[static_cast<std::size_t>(id)];
        if (g.empty() && tape.value(id).size() > 0)
            g = DenseTensor(tape.value(id).shape());
        return &g;
    };

    (*slot(loss.id))[0] = 1.0f;

    // One pass, newest to oldest: every node is visited exactly once and all
    // of a node's consumers precede it in the sweep.
    for (int id = tape.size() - 1; id >= 0; --id) {
        const Tape::Node& n = tape.node(id);
        if (!n.backward) continue;
        const DenseTensor& gout = grads[static_cast<std::size_t>(id)];
        if (gout.empty()) continue;  // not on any path from the loss
        Tape::Inputs inputs;
        Tape::InputGrads in_grads;
        inputs.reserve(n.in.size());
        in_grads.reserve(n.in.size());
        for (int i : n.in) {
            inputs.push_back(&tape.value(i));
            in_grads.push_back(slot(i));
        }
        n.backward(n, inputs, gout, in_grads);
    }

    // Leaves registered under the same name are tied: their gradients sum.
    GradMap out;
    for (int id = 0; id < tape.size(); ++id) {
        const Tape::Node& n = tape.node(id);
        if (n.name.empty()) continue;
        DenseTensor& g = grads[static_cast<std::size_t>(id)];
        auto it = out.find(n.name);
        if (it == out.end()) {
            out[n.name] = g.empty() ? DenseTensor(n.value.shape()) : std::move(g);
            continue;
        }
        DenseTensor& acc = it->second;
        if (!acc.same_shape(n.value))
            throw InternalError("reverse_grad: leaves named " + n.name +
                                " disagree on shape");
        if (g.empty()) continue;
        for (std::int64_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    return out;
}

// ---- primitive ops -------------------------------------------------------

Value matmul(Value a, Value b) {
    Tape* t = common_tape(a, b);
    DenseTensor out = matmul(t->value(a), t->value(b));
    return t->record(
        std::move(out), {a.id, b.id},
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            accumulate(gin[0], matmul_nt(gout, *in[1]));
            accumulate(gin[1], matmul_tn(*in[0], gout));
        },
        [](const Tape::Inputs& in) { return matmul(*in[0], *in[1]); });
}

Value matmul_nt(Value a, Value b) {
    Tape* t = common_tape(a, b);
    DenseTensor out = matmul_nt(t->value(a), t->value(b));
    return t->record(
        std::move(out), {a.id, b.id},
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            accumulate(gin[0], matmul(gout, *in[1]));
            accumulate(gin[1], matmul_tn(gout, *in[0]));
        },
        [](const Tape::Inputs& in) { return matmul_nt(*in[0], *in[1]); });
}

Value add(Value a, Value b) {
    Tape* t = common_tape(a, b);
    DenseTensor out = add(t->value(a), t->value(b));
    return t->record(
        std::move(out), {a.id, b.id},
        [](const Tape::Node&, const Tape::Inputs&, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            accumulate(gin[0], gout);
            accumulate(gin[1], gout);
        },
        [](const Tape::Inputs& in) { return add(*in[0], *in[1]); });
}

Value add_const(Value a, DenseTensor c) {
    Tape* t = a.tape;
    DenseTensor out = add(t->value(a), c);
    return t->record(
        std::move(out), {a.id},
        [](const Tape::Node&, const Tape::Inputs&, const DenseTensor& gout,
           const Tape::InputGrads& gin) { accumulate(gin[0], gout); },
        [c = std::move(c)](const Tape::Inputs& in) { return add(*in[0], c); });
}

Value mul(Value a, Value b) {
    Tape* t = common_tape(a, b);
    DenseTensor out = mul(t->value(a), t->value(b));
    return t->record(
        std::move(out), {a.id, b.id},
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            accumulate(gin[0], mul(gout, *in[1]));
            accumulate(gin[1], mul(gout, *in[0]));
        },
        [](const Tape::Inputs& in) { return mul(*in[0], *in[1]); });
}

Value mul_cols(Value a, Value col) {
    Tape* t = common_tape(a, col);
    const DenseTensor& av = t->value(a);
    const DenseTensor& cv = t->value(col);
    if (cv.rank() != 2 || cv.cols() != 1 || cv.rows() != av.rows())
        throw DataError("mul_cols: column shape mismatch");
    DenseTensor out(av.shape());
    for (int r = 0; r < av.rows(); ++r)
        for (int c = 0; c < av.cols(); ++c)
            out.at(r, c) = av.at(r, c) * cv.at(r, 0);
    return t->record(
        std::move(out), {a.id, col.id},
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            const DenseTensor& av = *in[0];
            const DenseTensor& cv = *in[1];
            DenseTensor ga(av.shape());
            DenseTensor gc(cv.shape());
            for (int r = 0; r < av.rows(); ++r) {
                double dot = 0.0;
                for (int c = 0; c < av.cols(); ++c) {
                    ga.at(r, c) = gout.at(r, c) * cv.at(r, 0);
                    dot += static_cast<double>(gout.at(r, c)) * av.at(r, c);
                }
                gc.at(r, 0) = static_cast<float>(dot);
            }
            accumulate(gin[0], ga);
            accumulate(gin[1], gc);
        },
        [](const Tape::Inputs& in) {
            const DenseTensor& av = *in[0];
            const DenseTensor& cv = *in[1];
            DenseTensor out(av.shape());
            for (int r = 0; r < av.rows(); ++r)
                for (int c = 0; c < av.cols(); ++c)
                    out.at(r, c) = av.at(r, c) * cv.at(r, 0);
            return out;
        });
}

Value scale(Value a, float c) {
    Tape* t = a.tape;
    DenseTensor out = scale(t->value(a), c);
    return t->record(
        std::move(out), {a.id},
        [c](const Tape::Node&, const Tape::Inputs&, const DenseTensor& gout,
            const Tape::InputGrads& gin) { accumulate(gin[0], scale(gout, c)); },
        [c](const Tape::Inputs& in) { return scale(*in[0], c); });
}

Value silu(Value a) {
    Tape* t = a.tape;
    DenseTensor out = silu(t->value(a));
    return t->record(
        std::move(out), {a.id},
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            const DenseTensor& x = *in[0];
            DenseTensor gx(x.shape());
            for (std::int64_t i = 0; i < x.size(); ++i) {
                float s = 1.0f / (1.0f + std::exp(-x[i]));
                gx[i] = gout[i] * s * (1.0f + x[i] * (1.0f - s));
            }
            accumulate(gin[0], gx);
        },
        [](const Tape::Inputs& in) { return silu(*in[0]); });
}

namespace {

DenseTensor rms_norm_eval(const DenseTensor& x, const DenseTensor& gain,
                          float eps) {
    if (x.rank() != 2 || gain.rank() != 1 || gain.dim(0) != x.cols())
        throw DataError("rms_norm: shape mismatch");
    DenseTensor out(x.shape());
    int d = x.cols();
    for (int r = 0; r < x.rows(); ++r) {
        double ms = 0.0;
        for (int c = 0; c < d; ++c)
            ms += static_cast<double>(x.at(r, c)) * x.at(r, c);
        float inv = static_cast<float>(1.0 / std::sqrt(ms / d + eps));
        for (int c = 0; c < d; ++c)
            out.at(r, c) = x.at(r, c) * inv * gain[c];
    }
    return out;
}

}  // namespace

Value rms_norm(Value x, Value gain, float eps) {
    Tape* t = common_tape(x, gain);
    DenseTensor out = rms_norm_eval(t->value(x), t->value(gain), eps);
    return t->record(
        std::move(out), {x.id, gain.id},
        [eps](const Tape::Node&, const Tape::Inputs& in,
              const DenseTensor& gout, const Tape::InputGrads& gin) {
            const DenseTensor& x = *in[0];
            const DenseTensor& g = *in[1];
            int d = x.cols();
            DenseTensor gx(x.shape());
            DenseTensor gg(g.shape());
            for (int r = 0; r < x.rows(); ++r) {
                double ms = 0.0;
                for (int c = 0; c < d; ++c)
                    ms += static_cast<double>(x.at(r, c)) * x.at(r, c);
                double inv = 1.0 / std::sqrt(ms / d + eps);
                double inv3 = inv * inv * inv;
                double dot = 0.0;  // sum_j gout_j * gain_j * x_j
                for (int c = 0; c < d; ++c)
                    dot += static_cast<double>(gout.at(r, c)) * g[c] * x.at(r, c);
                for (int c = 0; c < d; ++c) {
                    double v = inv * g[c] * gout.at(r, c) -
                               inv3 * x.at(r, c) * dot / d;
                    gx.at(r, c) = static_cast<float>(v);
                    gg[c] += static_cast<float>(gout.at(r, c) * x.at(r, c) * inv);
                }
            }
            accumulate(gin[0], gx);
            accumulate(gin[1], gg);
        },
        [eps](const Tape::Inputs& in) {
            return rms_norm_eval(*in[0], *in[1], eps);
        });
}

namespace {

DenseTensor softmax_masked_eval(const DenseTensor& s, float scale,
                                bool causal) {
    if (s.rank() != 2) throw DataError("softmax_masked: expected rank 2");
    if (causal && s.rows() != s.cols())
        throw DataError("softmax_masked: causal mask needs a square matrix");
    DenseTensor out(s.shape());
    int cols = s.cols();
    for (int r = 0; r < s.rows(); ++r) {
        int limit = causal ? r + 1 : cols;
        float hi = scale * s.at(r, 0);
        for (int c = 1; c < limit; ++c) hi = std::max(hi, scale * s.at(r, c));
        double denom = 0.0;
        for (int c = 0; c < limit; ++c) {
            float e = std::exp(scale * s.at(r, c) - hi);
            out.at(r, c) = e;
            denom += e;
        }
        float inv = static_cast<float>(1.0 / denom);
        for (int c = 0; c < limit; ++c) out.at(r, c) *= inv;
        for (int c = limit; c < cols; ++c) out.at(r, c) = 0.0f;
    }
    check_finite(out, "softmax_masked");
    return out;
}

}  // namespace

Value softmax_masked(Value scores, float scale, bool causal) {
    Tape* t = scores.tape;
    DenseTensor out = softmax_masked_eval(t->value(scores), scale, causal);
    return t->record(
        std::move(out), {scores.id},
        [scale, causal](const Tape::Node& self, const Tape::Inputs&,
                        const DenseTensor& gout, const Tape::InputGrads& gin) {
            const DenseTensor& p = self.value;
            DenseTensor gs(p.shape());
            int cols = p.cols();
            for (int r = 0; r < p.rows(); ++r) {
                int limit = causal ? r + 1 : cols;
                double dot = 0.0;
                for (int c = 0; c < limit; ++c)
                    dot += static_cast<double>(gout.at(r, c)) * p.at(r, c);
                for (int c = 0; c < limit; ++c)
                    gs.at(r, c) = scale * p.at(r, c) *
                                  static_cast<float>(gout.at(r, c) - dot);
            }
            accumulate(gin[0], gs);
        },
        [scale, causal](const Tape::Inputs& in) {
            return softmax_masked_eval(*in[0], scale, causal);
        });
}

Value slice_cols(Value a, int start, int count) {
    Tape* t = a.tape;
    const DenseTensor& av = t->value(a);
    if (av.rank() != 2 || start < 0 || count <= 0 || start + count > av.cols())
        throw DataError("slice_cols: range out of bounds");
    auto eval = [start, count](const DenseTensor& src) {
        DenseTensor out({src.rows(), count});
        for (int r = 0; r < src.rows(); ++r)
            for (int c = 0; c < count; ++c)
                out.at(r, c) = src.at(r, start + c);
        return out;
    };
    return t->record(
        eval(av), {a.id},
        [start, count](const Tape::Node&, const Tape::Inputs& in,
                       const DenseTensor& gout, const Tape::InputGrads& gin) {
            DenseTensor ga(in[0]->shape());
            for (int r = 0; r < gout.rows(); ++r)
                for (int c = 0; c < count; ++c)
                    ga.at(r, start + c) = gout.at(r, c);
            accumulate(gin[0], ga);
        },
        [eval](const Tape::Inputs& in) { return eval(*in[0]); });
}

Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw DataError("concat_cols: no parts");
    Tape* t = parts[0].tape;
    std::vector<int> ids;
    int rows = t->value(parts[0]).rows();
    int cols = 0;
    for (Value p : parts) {
        common_tape(parts[0], p);
        if (t->value(p).rows() != rows)
            throw DataError("concat_cols: row count mismatch");
        cols += t->value(p).cols();
        ids.push_back(p.id);
    }
    auto eval = [](const Tape::Inputs& in) {
        int rows = in[0]->rows();
        int cols = 0;
        for (const DenseTensor* p : in) cols += p->cols();
        DenseTensor out({rows, cols});
        int off = 0;
        for (const DenseTensor* p : in) {
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < p->cols(); ++c)
                    out.at(r, off + c) = p->at(r, c);
            off += p->cols();
        }
        return out;
    };
    Tape::Inputs ins;
    for (int id : ids) ins.push_back(&t->value(id));
    DenseTensor out = eval(ins);
    return t->record(
        std::move(out), ids,
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            int off = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
                DenseTensor g(in[k]->shape());
                for (int r = 0; r < g.rows(); ++r)
                    for (int c = 0; c < g.cols(); ++c)
                        g.at(r, c) = gout.at(r, off + c);
                off += g.cols();
                accumulate(gin[k], g);
            }
        },
        eval);
}

Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw DataError("concat_rows: no parts");
    Tape* t = parts[0].tape;
    std::vector<int> ids;
    int cols = t->value(parts[0]).cols();
    for (Value p : parts) {
        common_tape(parts[0], p);
        if (t->value(p).cols() != cols)
            throw DataError("concat_rows: column count mismatch");
        ids.push_back(p.id);
    }
    auto eval = [](const Tape::Inputs& in) {
        int cols = in[0]->cols();
        int rows = 0;
        for (const DenseTensor* p : in) rows += p->rows();
        DenseTensor out({rows, cols});
        int off = 0;
        for (const DenseTensor* p : in) {
            for (int r = 0; r < p->rows(); ++r)
                for (int c = 0; c < cols; ++c)
                    out.at(off + r, c) = p->at(r, c);
            off += p->rows();
        }
        return out;
    };
    Tape::Inputs ins;
    for (int id : ids) ins.push_back(&t->value(id));
    DenseTensor out = eval(ins);
    return t->record(
        std::move(out), ids,
        [](const Tape::Node&, const Tape::Inputs& in, const DenseTensor& gout,
           const Tape::InputGrads& gin) {
            int off = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
                DenseTensor g(in[k]->shape());
                for (int r = 0; r < g.rows(); ++r)
                    for (int c = 0; c < g.cols(); ++c)
                        g.at(r, c) = gout.at(off + r, c);
                off += g.rows();
                accumulate(gin[k], g);
            }
        },
        eval);
}

Value embed_rows(Value table, std::vector<int> ids) {
    Tape* t = table.tape;
    const DenseTensor& tab = t->value(table);
    if (tab.rank() != 2) throw DataError("embed_rows: table must be rank 2");
    for (int id : ids)
        if (id < 0 || id >= tab.rows())
            throw DataError("embed_rows: token id out of range");
    auto eval = [ids](const DenseTensor& tab) {
        DenseTensor out({static_cast<int>(ids.size()), tab.cols()});
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (int c = 0; c < tab.cols(); ++c)
                out.at(static_cast<int>(r), c) =
                    tab.at(ids[r], c);
        return out;
    };
    return t->record(
        eval(tab), {table.id},
        [ids](const Tape::Node&, const Tape::Inputs& in,
              const DenseTensor& gout, const Tape::InputGrads& gin) {
            DenseTensor g(in[0]->shape());
            for (std::size_t r = 0; r < ids.size(); ++r)
                for (int c = 0; c < g.cols(); ++c)
                    g.at(ids[r], c) += gout.at(static_cast<int>(r), c);
            accumulate(gin[0], g);
        },
        [eval](const Tape::Inputs& in) { return eval(*in[0]); });
}

namespace {

// Row log-softmax in f64; returns log p[target].
double row_log_prob(const DenseTensor& logits, int row, int target) {
    int v = logits.cols();
    double hi = logits.at(row, 0);
    for (int c = 1; c < v; ++c) hi = std::max(hi, double(logits.at(row, c)));
    double denom = 0.0;
    for (int c = 0; c < v; ++c) denom += std::exp(logits.at(row, c) - hi);
    return logits.at(row, target) - hi - std::log(denom);
}

}  // namespace

Value nll_rows(Value logits, std::vector<int> rows, std::vector<int> targets) {
    Tape* t = logits.tape;
    const DenseTensor& z = t->value(logits);
    if (z.rank() != 2) throw DataError("nll_rows: logits must be rank 2");
    if (rows.size() != targets.size() || rows.empty())
        throw DataError("nll_rows: rows/targets mismatch or empty");
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i] < 0 || rows[i] >= z.rows() || targets[i] < 0 ||
            targets[i] >= z.cols())
            throw DataError("nll_rows: index out of range");
    auto eval = [rows, targets](const DenseTensor& z) {
        double total = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i)
            total -= row_log_prob(z, rows[i], targets[i]);
        return DenseTensor::scalar(static_cast<float>(total));
    };
    return t->record(
        eval(z), {logits.id},
        [rows, targets](const Tape::Node&, const Tape::Inputs& in,
                        const DenseTensor& gout, const Tape::InputGrads& gin) {
            const DenseTensor& z = *in[0];
            DenseTensor g(z.shape());
            float go = gout[0];
            for (std::size_t i = 0; i < rows.size(); ++i) {
                DenseTensor zr({1, z.cols()});
                for (int c = 0; c < z.cols(); ++c) zr.at(0, c) = z.at(rows[i], c);
                DenseTensor p = softmax_rows(zr, 1.0f);
                for (int c = 0; c < z.cols(); ++c)
                    g.at(rows[i], c) += go * p.at(0, c);
                g.at(rows[i], targets[i]) -= go;
            }
            accumulate(gin[0], g);
        },
        [eval](const Tape::Inputs& in) { return eval(*in[0]); });
}

Value kl_rows(Value logits, DenseTensor teacher_probs, std::vector<int> rows,
              float tau) {
    Tape* t = logits.tape;
    const DenseTensor& z = t->value(logits);
    if (z.rank() != 2 || teacher_probs.rank() != 2)
        throw DataError("kl_rows: rank-2 tensors required");
    if (static_cast<int>(rows.size()) != teacher_probs.rows() ||
        teacher_probs.cols() != z.cols())
        throw DataError("kl_rows: teacher rows must match selected positions");
    if (tau <= 0.0f) throw DataError("kl_rows: tau must be positive");
    for (int r : rows)
        if (r < 0 || r >= z.rows()) throw DataError("kl_rows: row out of range");
    float inv_tau = 1.0f / tau;
    auto eval = [rows, teacher_probs, inv_tau](const DenseTensor& z) {
        double total = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            DenseTensor zr({1, z.cols()});
            for (int c = 0; c < z.cols(); ++c) zr.at(0, c) = z.at(rows[i], c);
            DenseTensor q = softmax_rows(zr, inv_tau);
            for (int c = 0; c < z.cols(); ++c) {
                double p = teacher_probs.at(static_cast<int>(i), c);
                if (p > 0.0)
                    total += p * (std::log(p) - std::log(double(q.at(0, c))));
            }
        }
        return DenseTensor::scalar(static_cast<float>(total));
    };
    return t->record(
        eval(z), {logits.id},
        [rows, teacher_probs, inv_tau](const Tape::Node&,
                                       const Tape::Inputs& in,
                                       const DenseTensor& gout,
                                       const Tape::InputGrads& gin) {
            const DenseTensor& z = *in[0];
            DenseTensor g(z.shape());
            float go = gout[0];
            for (std::size_t i = 0; i < rows.size(); ++i) {
                DenseTensor zr({1, z.cols()});
                for (int c = 0; c < z.cols(); ++c) zr.at(0, c) = z.at(rows[i], c);
                DenseTensor q = softmax_rows(zr, inv_tau);
                for (int c = 0; c < z.cols(); ++c)
                    g.at(rows[i], c) +=
                        go * inv_tau *
                        (q.at(0, c) - teacher_probs.at(static_cast<int>(i), c));
            }
            accumulate(gin[0], g);
        },
        [eval](const Tape::Inputs& in) { return eval(*in[0]); });
}

}  // namespace dlab
