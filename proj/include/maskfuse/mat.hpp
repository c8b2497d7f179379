#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "maskfuse/errors.hpp"

namespace maskfuse {

// Dense row-major double matrix. All numerics in this project run in double;
// float32 appears only at the archive boundary.
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}
    static Mat from_rows(int rows, int cols, std::vector<double> data) {
        if (static_cast<size_t>(rows) * cols != data.size())
            throw ContractViolation("Mat::from_rows: data size does not match shape");
        Mat m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat sub(const Mat& a, const Mat& b);
Mat scale(const Mat& a, double c);
Mat hadamard(const Mat& a, const Mat& b);
Mat tanh_elem(const Mat& a);

// Row-wise softmax of unscaled logits; every output row sums to 1.
Mat softmax_rows(const Mat& logits);

double frobenius_norm(const Mat& a);
double frobenius_dist(const Mat& a, const Mat& b);
double max_abs(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);
double dot_all(const Mat& a, const Mat& b);
bool bit_equal(const Mat& a, const Mat& b);
bool all_finite(const Mat& a);

}  // namespace maskfuse
