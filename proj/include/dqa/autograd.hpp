#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dqa/mat.hpp"

namespace dqa::nn {

// A named trainable tensor. Gradients accumulate into `grad` across examples
// until the optimizer consumes and clears them.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
};

// Ordered, name-addressed parameter container. Iteration order is the sorted
// name order, which keeps checkpoints and optimizer state deterministic.
class ParamStore {
public:
    Param& define(const std::string& name, int rows, int cols);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    std::map<std::string, Param>& all() { return params_; }
    const std::map<std::string, Param>& all() const { return params_; }

    size_t total_params() const;
    void zero_grad();

private:
    std::map<std::string, Param> params_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    int rows() const;
    int cols() const;
};

// Reverse-mode tape over Mat values. One tape per forward pass; backward()
// walks the nodes in reverse and accumulates parameter gradients into the
// originating ParamStore entries.
class Tape {
public:
    Var input(Mat v);           // constant leaf, no gradient
    Var param(Param& p);        // trainable leaf
    Var zeros(int r, int c) { return input(Mat::zeros(r, c)); }

    const Mat& val(Var v) const;

    // ops
    Var matmul(Var a, Var b);      // (m,k)x(k,n)
    Var matmul_nt(Var a, Var b);   // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);         // elementwise
    Var add_rowvec(Var a, Var b);  // (m,n) + (1,n) broadcast over rows
    Var scale(Var a, double s);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var softmax_rows(Var a);
    Var log_softmax_rows(Var a);
    Var layer_norm_rows(Var a, Var gain, Var bias);  // gain/bias are (1,n)
    Var concat_rows(Var a, Var b);
    Var concat_cols(Var a, Var b);
    Var slice_rows(Var a, int r0, int r1);  // half-open
    Var slice_cols(Var a, int c0, int c1);
    Var gather_rows(Var a, std::vector<int> idx);
    Var mean_rows(Var a);  // (m,n) -> (1,n)
    Var sum(Var a);        // -> (1,1)
    Var pick(Var a, int r, int c);  // -> (1,1)
    Var neg(Var a);

    // Seeds d(loss)/d(loss)=1 and propagates. `loss` must be 1x1.
    void backward(Var loss);

    size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        kInput,
        kParam,
        kMatMul,
        kMatMulNT,
        kAdd,
        kSub,
        kMul,
        kAddRowVec,
        kScale,
        kGelu,
        kSigmoid,
        kTanh,
        kSoftmaxRows,
        kLogSoftmaxRows,
        kLayerNormRows,
        kConcatRows,
        kConcatCols,
        kSliceRows,
        kSliceCols,
        kGatherRows,
        kMeanRows,
        kSum,
        kPick,
        kNeg,
    };

    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;  // operand node ids
        Mat value;
        const Mat* ext = nullptr;  // parameter leaves alias their tensor
        Mat grad;       // allocated lazily during backward
        bool needs_grad = false;
        // op-specific extras
        int i0 = 0, i1 = 0;
        double s = 0.0;
        std::vector<int> idx;
        Param* p = nullptr;
        // cached forward intermediates for backward (layernorm)
        std::vector<double> aux;

        const Mat& val() const { return ext ? *ext : value; }
    };

    int push(Node n);
    Mat& grad_of(int id);
    void ensure_grad(int id);

    // deque keeps val() references stable while new nodes are appended
    std::deque<Node> nodes_;
};

// Adam with global-norm gradient clipping. State keyed by parameter name.
class AdamOptimizer {
public:
    AdamOptimizer(double lr, double clip_norm = 1.0, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), clip_(clip_norm), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(ParamStore& store);
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, clip_, b1_, b2_, eps_;
    int t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> state_;  // m, v
};

}  // namespace dqa::nn
