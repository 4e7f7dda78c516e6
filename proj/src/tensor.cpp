#include "dlab/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>

namespace dlab {

namespace {

using MatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DataError("DenseTensor: negative dimension");
        n *= d;
    }
    return n;
}

Eigen::Map<const MatrixF> view2d(const DenseTensor& t, const char* where) {
    if (t.rank() != 2)
        throw DataError(std::string(where) + ": expected rank-2 tensor");
    return {t.data(), t.dim(0), t.dim(1)};
}

// Inner products beyond this length accumulate in f64.
constexpr int kLongSum = 1000;

}  // namespace

DenseTensor::DenseTensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(shape_product(shape_)), 0.0f) {}

DenseTensor::DenseTensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<std::int64_t>(data_.size()))
        throw DataError("DenseTensor: buffer size does not match shape");
}

DenseTensor DenseTensor::scalar(float v) {
    return DenseTensor({1}, {v});
}

DenseTensor DenseTensor::vec(std::vector<float> v) {
    int n = static_cast<int>(v.size());
    return DenseTensor({n}, std::move(v));
}

DenseTensor DenseTensor::mat(int rows, int cols, std::vector<float> data) {
    return DenseTensor({rows, cols}, std::move(data));
}

int DenseTensor::dim(int i) const {
    if (i < 0 || i >= rank()) throw DataError("DenseTensor: dim out of range");
    return shape_[static_cast<std::size_t>(i)];
}

int DenseTensor::rows() const {
    if (rank() != 2) throw DataError("DenseTensor: rows() requires rank 2");
    return shape_[0];
}

int DenseTensor::cols() const {
    if (rank() != 2) throw DataError("DenseTensor: cols() requires rank 2");
    return shape_[1];
}

float& DenseTensor::at(int r, int c) {
    if (rank() != 2 || r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1])
        throw DataError("DenseTensor: index out of range");
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
}

float DenseTensor::at(int r, int c) const {
    return const_cast<DenseTensor*>(this)->at(r, c);
}

float& DenseTensor::operator[](std::int64_t i) {
    if (i < 0 || i >= size()) throw DataError("DenseTensor: index out of range");
    return data_[static_cast<std::size_t>(i)];
}

float DenseTensor::operator[](std::int64_t i) const {
    return const_cast<DenseTensor&>(*this)[i];
}

float DenseTensor::item() const {
    if (size() != 1) throw DataError("DenseTensor: item() requires one element");
    return data_[0];
}

bool DenseTensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

bool bitwise_equal(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data(), b.data(),
                       static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

void check_finite(const DenseTensor& t, const char* where) {
    if (!t.all_finite())
        throw NumericError(std::string(where) + ": non-finite values produced");
}

DenseTensor softmax_rows(const DenseTensor& x, float scale) {
    int rows = 1;
    int cols = 0;
    if (x.rank() == 1) {
        cols = x.dim(0);
    } else if (x.rank() == 2) {
        rows = x.dim(0);
        cols = x.dim(1);
    } else {
        throw DataError("softmax_rows: expected rank 1 or 2");
    }
    if (cols == 0) throw DataError("softmax_rows: empty rows");

    DenseTensor out(x.shape());
    for (int r = 0; r < rows; ++r) {
        const float* in = x.data() + static_cast<std::size_t>(r) * cols;
        float* o = out.data() + static_cast<std::size_t>(r) * cols;
        float hi = scale * in[0];
        for (int c = 1; c < cols; ++c) hi = std::max(hi, scale * in[c]);
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) {
            float e = std::exp(scale * in[c] - hi);
            o[c] = e;
            denom += e;
        }
        float inv = static_cast<float>(1.0 / denom);
        for (int c = 0; c < cols; ++c) o[c] *= inv;
    }
    check_finite(out, "softmax_rows");
    return out;
}

DenseTensor silu(const DenseTensor& x) {
    DenseTensor out(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) {
        float v = x[i];
        out[i] = v / (1.0f + std::exp(-v));
    }
    check_finite(out, "silu");
    return out;
}

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b) {
    auto av = view2d(a, "matmul");
    auto bv = view2d(b, "matmul");
    if (av.cols() != bv.rows())
        throw DataError("matmul: inner dimensions disagree");
    DenseTensor out({a.dim(0), b.dim(1)});
    Eigen::Map<MatrixF> ov(out.data(), out.dim(0), out.dim(1));
    if (av.cols() > kLongSum) {
        MatrixD prod = av.cast<double>() * bv.cast<double>();
        ov = prod.cast<float>();
    } else {
        ov = av * bv;
    }
    check_finite(out, "matmul");
    return out;
}

DenseTensor matmul_nt(const DenseTensor& a, const DenseTensor& b) {
    auto av = view2d(a, "matmul_nt");
    auto bv = view2d(b, "matmul_nt");
    if (av.cols() != bv.cols())
        throw DataError("matmul_nt: inner dimensions disagree");
    DenseTensor out({a.dim(0), b.dim(0)});
    Eigen::Map<MatrixF> ov(out.data(), out.dim(0), out.dim(1));
    if (av.cols() > kLongSum) {
        MatrixD prod = av.cast<double>() * bv.cast<double>().transpose();
        ov = prod.cast<float>();
    } else {
        ov = av * bv.transpose();
    }
    check_finite(out, "matmul_nt");
    return out;
}

DenseTensor matmul_tn(const DenseTensor& a, const DenseTensor& b) {
    auto av = view2d(a, "matmul_tn");
    auto bv = view2d(b, "matmul_tn");
    if (av.rows() != bv.rows())
        throw DataError("matmul_tn: inner dimensions disagree");
    DenseTensor out({a.dim(1), b.dim(1)});
    Eigen::Map<MatrixF> ov(out.data(), out.dim(0), out.dim(1));
    if (av.rows() > kLongSum) {
        MatrixD prod = av.cast<double>().transpose() * bv.cast<double>();
        ov = prod.cast<float>();
    } else {
        ov = av.transpose() * bv;
    }
    check_finite(out, "matmul_tn");
    return out;
}

DenseTensor transpose(const DenseTensor& a) {
    auto av = view2d(a, "transpose");
    DenseTensor out({a.dim(1), a.dim(0)});
    Eigen::Map<MatrixF> ov(out.data(), out.dim(0), out.dim(1));
    ov = av.transpose();
    return out;
}

DenseTensor add(const DenseTensor& a, const DenseTensor& b) {
    if (!a.same_shape(b)) throw DataError("add: shape mismatch");
    DenseTensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

DenseTensor sub(const DenseTensor& a, const DenseTensor& b) {
    if (!a.same_shape(b)) throw DataError("sub: shape mismatch");
    DenseTensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

DenseTensor mul(const DenseTensor& a, const DenseTensor& b) {
    if (!a.same_shape(b)) throw DataError("mul: shape mismatch");
    DenseTensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

DenseTensor scale(const DenseTensor& a, float c) {
    DenseTensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

}  // namespace dlab
