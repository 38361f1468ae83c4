#pragma once

#include <cassert>
#include <cstdint>
#include <random>
#include <vector>

namespace dqa::nn {

// Dense row-major matrix of doubles. Everything the model touches is 2-D;
// vectors are 1xN or Nx1.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
    double* row_ptr(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return d.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return d.size(); }
    bool empty() const { return d.empty(); }

    static Mat zeros(int r, int c) { return Mat(r, c); }
    static Mat full(int r, int c, double v) {
        Mat m(r, c);
        std::fill(m.d.begin(), m.d.end(), v);
        return m;
    }
    static Mat row_vec(std::vector<double> v) {
        Mat m;
        m.rows = 1;
        m.cols = static_cast<int>(v.size());
        m.d = std::move(v);
        return m;
    }
};

// C += A * B
void gemm_acc(const Mat& a, const Mat& b, Mat& c);
// C += A * B^T
void gemm_nt_acc(const Mat& a, const Mat& b, Mat& c);
// C += A^T * B
void gemm_tn_acc(const Mat& a, const Mat& b, Mat& c);

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    gemm_acc(a, b, c);
    return c;
}

double l2_norm(const Mat& m);

}  // namespace dqa::nn
