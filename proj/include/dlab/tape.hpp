#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dlab/tensor.hpp"

namespace dlab {

class Tape;

// Handle into a tape; cheap to copy.
struct Value {
    Tape* tape = nullptr;
    int id = -1;
};

using GradMap = std::map<std::string, DenseTensor>;

// Define-by-run recorder. Each recorded node keeps its forward closure (for
// replay) and a backward closure that accumulates into input gradients.
// Insertion order is a topological order by construction.
class Tape {
  public:
    using Inputs = std::vector<const DenseTensor*>;
    using InputGrads = std::vector<DenseTensor*>;

    struct Node {
        DenseTensor value;
        std::string name;  // nonempty marks a named leaf
        std::vector<int> in;
        std::function<void(const Node&, const Inputs&, const DenseTensor&,
                           const InputGrads&)>
            backward;
        std::function<DenseTensor(const Inputs&)> forward;
    };

    Value leaf(DenseTensor v, std::string name);
    Value constant(DenseTensor v);
    Value record(DenseTensor value, std::vector<int> in,
                 std::function<void(const Node&, const Inputs&,
                                    const DenseTensor&, const InputGrads&)>
                     backward,
                 std::function<DenseTensor(const Inputs&)> forward);

    const DenseTensor& value(Value v) const;
    const DenseTensor& value(int id) const;
    const Node& node(int id) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    // Recomputes every non-leaf node from its inputs and counts nodes whose
    // bytes changed. A healthy tape reports zero.
    int replay_mismatches() const;

  private:
    std::vector<Node> nodes_;
    Inputs gather(const std::vector<int>& ids) const;
};

// Reverse sweep from a scalar loss. Returns a gradient for every named leaf
// on the tape; leaves unreachable from the loss get zeros.
GradMap reverse_grad(const Tape& tape, Value loss);

// ---- primitive ops -------------------------------------------------------

Value matmul(Value a, Value b);
Value matmul_nt(Value a, Value b);  // a * b^T
Value add(Value a, Value b);
Value add_const(Value a, DenseTensor c);
Value mul(Value a, Value b);
Value mul_cols(Value a, Value col);  // scales row r of a by col[r, 0]
Value scale(Value a, float c);
Value silu(Value a);
Value rms_norm(Value x, Value gain, float eps = 1e-6f);
Value softmax_masked(Value scores, float scale, bool causal);
Value slice_cols(Value a, int start, int count);
Value concat_cols(const std::vector<Value>& parts);
Value concat_rows(const std::vector<Value>& parts);
Value embed_rows(Value table, std::vector<int> ids);

// Sum over selected rows of -log softmax(logits[row])[target].
Value nll_rows(Value logits, std::vector<int> rows, std::vector<int> targets);

// Sum over selected rows of KL(teacher_probs[i] || softmax(logits[rows[i]] / tau)).
// Teacher probabilities are captured as constants; no gradient flows to them.
Value kl_rows(Value logits, DenseTensor teacher_probs, std::vector<int> rows,
              float tau);

}  // namespace dlab
