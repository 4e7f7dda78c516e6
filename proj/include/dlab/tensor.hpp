#pragma once

#include <cstdint>
#include <vector>

#include "dlab/errors.hpp"

namespace dlab {

// Row-major f32 tensor. Storage is always f32; reductions that span many
// terms accumulate in f64 inside the kernels that need it.
class DenseTensor {
  public:
    DenseTensor() = default;
    explicit DenseTensor(std::vector<int> shape);
    DenseTensor(std::vector<int> shape, std::vector<float> data);

    static DenseTensor scalar(float v);
    static DenseTensor vec(std::vector<float> v);
    static DenseTensor mat(int rows, int cols, std::vector<float> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const;
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& buffer() { return data_; }
    const std::vector<float>& buffer() const { return data_; }

    // Rank-2 accessors.
    int rows() const;
    int cols() const;
    float& at(int r, int c);
    float at(int r, int c) const;

    float& operator[](std::int64_t i);
    float operator[](std::int64_t i) const;

    float item() const;  // requires size() == 1

    bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

  private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

bool bitwise_equal(const DenseTensor& a, const DenseTensor& b);

// softmax(scale * x) applied per row; per-row max subtraction keeps exp in
// range. Rank-1 input is treated as a single row.
DenseTensor softmax_rows(const DenseTensor& x, float scale = 1.0f);

// x * sigmoid(x), elementwise.
DenseTensor silu(const DenseTensor& x);

// a (m x k) times b (k x n). Inner sums longer than 1000 terms run in f64.
DenseTensor matmul(const DenseTensor& a, const DenseTensor& b);
// a (m x k) times b^T where b is (n x k).
DenseTensor matmul_nt(const DenseTensor& a, const DenseTensor& b);
// a^T (k x m) times b (k x n).
DenseTensor matmul_tn(const DenseTensor& a, const DenseTensor& b);

DenseTensor transpose(const DenseTensor& a);
DenseTensor add(const DenseTensor& a, const DenseTensor& b);
DenseTensor sub(const DenseTensor& a, const DenseTensor& b);
DenseTensor mul(const DenseTensor& a, const DenseTensor& b);
DenseTensor scale(const DenseTensor& a, float c);

void check_finite(const DenseTensor& t, const char* where);

}  // namespace dlab
