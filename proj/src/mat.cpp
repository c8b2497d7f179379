#include "maskfuse/mat.hpp"

#include <algorithm>
#include <cstring>

namespace maskfuse {

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows())
        throw ContractViolation("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
    Mat out(a.rows(), b.cols());
    const int n = a.rows(), k = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        double* out_row = out.row(i);
        const double* a_row = a.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = a_row[p];
            if (av == 0.0) continue;
            const double* b_row = b.row(p);
            for (int j = 0; j < m; ++j) out_row[j] += av * b_row[j];
        }
    }
    return out;
}

Mat transpose(const Mat& a) {
    Mat out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

static void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (!a.same_shape(b))
        throw ContractViolation(std::string(op) + ": shape mismatch");
}

Mat add(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "add");
    Mat out = a;
    for (size_t i = 0; i < out.size(); ++i) out.raw()[i] += b.raw()[i];
    return out;
}

Mat sub(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "sub");
    Mat out = a;
    for (size_t i = 0; i < out.size(); ++i) out.raw()[i] -= b.raw()[i];
    return out;
}

Mat scale(const Mat& a, double c) {
    Mat out = a;
    for (double& v : out.raw()) v *= c;
    return out;
}

Mat hadamard(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "hadamard");
    Mat out = a;
    for (size_t i = 0; i < out.size(); ++i) out.raw()[i] *= b.raw()[i];
    return out;
}

Mat tanh_elem(const Mat& a) {
    Mat out = a;
    for (double& v : out.raw()) v = std::tanh(v);
    return out;
}

Mat softmax_rows(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (int i = 0; i < logits.rows(); ++i) {
        const double* in = logits.row(i);
        double* o = out.row(i);
        double mx = in[0];
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int j = 0; j < logits.cols(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j < logits.cols(); ++j) o[j] /= sum;
    }
    return out;
}

double frobenius_norm(const Mat& a) {
    double s = 0.0;
    for (double v : a.raw()) s += v * v;
    return std::sqrt(s);
}

double frobenius_dist(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "frobenius_dist");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double max_abs(const Mat& a) {
    double m = 0.0;
    for (double v : a.raw()) m = std::max(m, std::fabs(v));
    return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.raw()[i] - b.raw()[i]));
    return m;
}

double dot_all(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "dot_all");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.raw()[i] * b.raw()[i];
    return s;
}

bool bit_equal(const Mat& a, const Mat& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool all_finite(const Mat& a) {
    for (double v : a.raw())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace maskfuse
