#include "dqa/autograd.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dqa::nn {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}
}  // namespace

void gemm_acc(const Mat& a, const Mat& b, Mat& c) {
    assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        double* ci = c.row_ptr(i);
        const double* ai = a.row_ptr(i);
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            if (av == 0.0) continue;
            const double* bl = b.row_ptr(l);
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

void gemm_nt_acc(const Mat& a, const Mat& b, Mat& c) {
    assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
    const int m = a.rows, k = a.cols, n = b.rows;
    for (int i = 0; i < m; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (int j = 0; j < n; ++j) {
            const double* bj = b.row_ptr(j);
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] += acc;
        }
    }
}

void gemm_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    const int m = a.cols, k = a.rows, n = b.cols;
    for (int l = 0; l < k; ++l) {
        const double* al = a.row_ptr(l);
        const double* bl = b.row_ptr(l);
        for (int i = 0; i < m; ++i) {
            const double av = al[i];
            if (av == 0.0) continue;
            double* ci = c.row_ptr(i);
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

double l2_norm(const Mat& m) {
    double s = 0.0;
    for (double v : m.d) s += v * v;
    return std::sqrt(s);
}

Param& ParamStore::define(const std::string& name, int rows, int cols) {
    if (params_.count(name)) throw std::logic_error("parameter redefined: " + name);
    Param p;
    p.name = name;
    p.value = Mat(rows, cols);
    p.grad = Mat(rows, cols);
    auto [it, ok] = params_.emplace(name, std::move(p));
    (void)ok;
    return it->second;
}

Param& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::logic_error("unknown parameter: " + name);
    return it->second;
}

const Param& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::logic_error("unknown parameter: " + name);
    return it->second;
}

size_t ParamStore::total_params() const {
    size_t n = 0;
    for (const auto& [k, p] : params_) n += p.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [k, p] : params_) std::fill(p.grad.d.begin(), p.grad.d.end(), 0.0);
}

int Var::rows() const { return tape->val(*this).rows; }
int Var::cols() const { return tape->val(*this).cols; }

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Mat& Tape::val(Var v) const { return nodes_[v.id].val(); }

Mat& Tape::grad_of(int id) { return nodes_[id].grad; }

void Tape::ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Mat(n.val().rows, n.val().cols);
}

Var Tape::input(Mat v) {
    Node n;
    n.op = Op::kInput;
    n.value = std::move(v);
    n.needs_grad = false;
    return Var{this, push(std::move(n))};
}

Var Tape::param(Param& p) {
    Node n;
    n.op = Op::kParam;
    n.ext = &p.value;
    n.p = &p;
    n.needs_grad = true;
    return Var{this, push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.cols == bv.rows);
    Node n;
    n.op = Op::kMatMul;
    n.a = a.id;
    n.b = b.id;
    n.value = Mat(av.rows, bv.cols);
    gemm_acc(av, bv, n.value);
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::matmul_nt(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.cols == bv.cols);
    Node n;
    n.op = Op::kMatMulNT;
    n.a = a.id;
    n.b = b.id;
    n.value = Mat(av.rows, bv.rows);
    gemm_nt_acc(av, bv, n.value);
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.rows == bv.rows && av.cols == bv.cols);
    Node n;
    n.op = Op::kAdd;
    n.a = a.id;
    n.b = b.id;
    n.value = av;
    for (size_t i = 0; i < n.value.size(); ++i) n.value.d[i] += bv.d[i];
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.rows == bv.rows && av.cols == bv.cols);
    Node n;
    n.op = Op::kSub;
    n.a = a.id;
    n.b = b.id;
    n.value = av;
    for (size_t i = 0; i < n.value.size(); ++i) n.value.d[i] -= bv.d[i];
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.rows == bv.rows && av.cols == bv.cols);
    Node n;
    n.op = Op::kMul;
    n.a = a.id;
    n.b = b.id;
    n.value = av;
    for (size_t i = 0; i < n.value.size(); ++i) n.value.d[i] *= bv.d[i];
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::add_rowvec(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(bv.rows == 1 && bv.cols == av.cols);
    Node n;
    n.op = Op::kAddRowVec;
    n.a = a.id;
    n.b = b.id;
    n.value = av;
    for (int r = 0; r < av.rows; ++r) {
        double* out = n.value.row_ptr(r);
        for (int c = 0; c < av.cols; ++c) out[c] += bv.d[c];
    }
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::kScale;
    n.a = a.id;
    n.s = s;
    n.value = val(a);
    for (double& v : n.value.d) v *= s;
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::gelu(Var a) {
    Node n;
    n.op = Op::kGelu;
    n.a = a.id;
    n.value = val(a);
    for (double& v : n.value.d) v = gelu_fwd(v);
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::kSigmoid;
    n.a = a.id;
    n.value = val(a);
    for (double& v : n.value.d) v = 1.0 / (1.0 + std::exp(-v));
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::kTanh;
    n.a = a.id;
    n.value = val(a);
    for (double& v : n.value.d) v = std::tanh(v);
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::softmax_rows(Var a) {
    Node n;
    n.op = Op::kSoftmaxRows;
    n.a = a.id;
    n.value = val(a);
    for (int r = 0; r < n.value.rows; ++r) {
        double* row = n.value.row_ptr(r);
        double mx = row[0];
        for (int c = 1; c < n.value.cols; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < n.value.cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            z += row[c];
        }
        for (int c = 0; c < n.value.cols; ++c) row[c] /= z;
    }
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::log_softmax_rows(Var a) {
    Node n;
    n.op = Op::kLogSoftmaxRows;
    n.a = a.id;
    n.value = val(a);
    for (int r = 0; r < n.value.rows; ++r) {
        double* row = n.value.row_ptr(r);
        double mx = row[0];
        for (int c = 1; c < n.value.cols; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < n.value.cols; ++c) z += std::exp(row[c] - mx);
        const double lz = mx + std::log(z);
        for (int c = 0; c < n.value.cols; ++c) row[c] -= lz;
    }
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::layer_norm_rows(Var a, Var gain, Var bias) {
    const Mat& av = val(a);
    const Mat& gv = val(gain);
    const Mat& bv = val(bias);
    assert(gv.rows == 1 && gv.cols == av.cols && bv.rows == 1 && bv.cols == av.cols);
    Node n;
    n.op = Op::kLayerNormRows;
    n.a = a.id;
    n.b = gain.id;
    n.c = bias.id;
    n.value = Mat(av.rows, av.cols);
    n.aux.resize(static_cast<size_t>(av.rows) * 2);  // per row: mean, inv_std
    for (int r = 0; r < av.rows; ++r) {
        const double* x = av.row_ptr(r);
        double mean = 0.0;
        for (int c = 0; c < av.cols; ++c) mean += x[c];
        mean /= av.cols;
        double var = 0.0;
        for (int c = 0; c < av.cols; ++c) {
            double dxc = x[c] - mean;
            var += dxc * dxc;
        }
        var /= av.cols;
        double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        n.aux[2 * r] = mean;
        n.aux[2 * r + 1] = inv_std;
        double* out = n.value.row_ptr(r);
        for (int c = 0; c < av.cols; ++c)
            out[c] = gv.d[c] * (x[c] - mean) * inv_std + bv.d[c];
    }
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[gain.id].needs_grad ||
                   nodes_[bias.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::concat_rows(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.cols == bv.cols);
    Node n;
    n.op = Op::kConcatRows;
    n.a = a.id;
    n.b = b.id;
    n.i0 = av.rows;
    n.value = Mat(av.rows + bv.rows, av.cols);
    std::memcpy(n.value.d.data(), av.d.data(), av.size() * sizeof(double));
    std::memcpy(n.value.d.data() + av.size(), bv.d.data(), bv.size() * sizeof(double));
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::concat_cols(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    assert(av.rows == bv.rows);
    Node n;
    n.op = Op::kConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.i0 = av.cols;
    n.value = Mat(av.rows, av.cols + bv.cols);
    for (int r = 0; r < av.rows; ++r) {
        std::memcpy(n.value.row_ptr(r), av.row_ptr(r), av.cols * sizeof(double));
        std::memcpy(n.value.row_ptr(r) + av.cols, bv.row_ptr(r), bv.cols * sizeof(double));
    }
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::slice_rows(Var a, int r0, int r1) {
    const Mat& av = val(a);
    assert(0 <= r0 && r0 <= r1 && r1 <= av.rows);
    Node n;
    n.op = Op::kSliceRows;
    n.a = a.id;
    n.i0 = r0;
    n.i1 = r1;
    n.value = Mat(r1 - r0, av.cols);
    std::memcpy(n.value.d.data(), av.row_ptr(r0),
                n.value.size() * sizeof(double));
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Mat& av = val(a);
    assert(0 <= c0 && c0 <= c1 && c1 <= av.cols);
    Node n;
    n.op = Op::kSliceCols;
    n.a = a.id;
    n.i0 = c0;
    n.i1 = c1;
    n.value = Mat(av.rows, c1 - c0);
    for (int r = 0; r < av.rows; ++r)
        std::memcpy(n.value.row_ptr(r), av.row_ptr(r) + c0,
                    (c1 - c0) * sizeof(double));
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
    const Mat& av = val(a);
    Node n;
    n.op = Op::kGatherRows;
    n.a = a.id;
    n.idx = std::move(idx);
    n.value = Mat(static_cast<int>(n.idx.size()), av.cols);
    for (size_t i = 0; i < n.idx.size(); ++i) {
        assert(n.idx[i] >= 0 && n.idx[i] < av.rows);
        std::memcpy(n.value.row_ptr(static_cast<int>(i)), av.row_ptr(n.idx[i]),
                    av.cols * sizeof(double));
    }
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::mean_rows(Var a) {
    const Mat& av = val(a);
    assert(av.rows > 0);
    Node n;
    n.op = Op::kMeanRows;
    n.a = a.id;
    n.value = Mat(1, av.cols);
    for (int r = 0; r < av.rows; ++r) {
        const double* row = av.row_ptr(r);
        for (int c = 0; c < av.cols; ++c) n.value.d[c] += row[c];
    }
    for (int c = 0; c < av.cols; ++c) n.value.d[c] /= av.rows;
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::sum(Var a) {
    const Mat& av = val(a);
    Node n;
    n.op = Op::kSum;
    n.a = a.id;
    n.value = Mat(1, 1);
    for (double v : av.d) n.value.d[0] += v;
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::pick(Var a, int r, int c) {
    const Mat& av = val(a);
    assert(r >= 0 && r < av.rows && c >= 0 && c < av.cols);
    Node n;
    n.op = Op::kPick;
    n.a = a.id;
    n.i0 = r;
    n.i1 = c;
    n.value = Mat(1, 1);
    n.value.d[0] = av.at(r, c);
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::neg(Var a) {
    Node n;
    n.op = Op::kNeg;
    n.a = a.id;
    n.value = val(a);
    for (double& v : n.value.d) v = -v;
    n.needs_grad = nodes_[a.id].needs_grad;
    return Var{this, push(std::move(n))};
}

void Tape::backward(Var loss) {
    assert(val(loss).rows == 1 && val(loss).cols == 1);
    ensure_grad(loss.id);
    nodes_[loss.id].grad.d[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty()) continue;
        const Mat& g = n.grad;
        switch (n.op) {
            case Op::kInput:
                break;
            case Op::kParam:
                for (size_t i = 0; i < g.size(); ++i) n.p->grad.d[i] += g.d[i];
                break;
            case Op::kMatMul: {
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    gemm_nt_acc(g, nodes_[n.b].val(), nodes_[n.a].grad);
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    gemm_tn_acc(nodes_[n.a].val(), g, nodes_[n.b].grad);
                }
                break;
            }
            case Op::kMatMulNT: {
                // y = a b^T : da = g b ; db = g^T a
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    gemm_acc(g, nodes_[n.b].val(), nodes_[n.a].grad);
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    gemm_tn_acc(g, nodes_[n.a].val(), nodes_[n.b].grad);
                }
                break;
            }
            case Op::kAdd: {
                for (int side : {n.a, n.b}) {
                    if (!nodes_[side].needs_grad) continue;
                    ensure_grad(side);
                    Mat& dst = nodes_[side].grad;
                    for (size_t i = 0; i < g.size(); ++i) dst.d[i] += g.d[i];
                }
                break;
            }
            case Op::kSub: {
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    Mat& dst = nodes_[n.a].grad;
                    for (size_t i = 0; i < g.size(); ++i) dst.d[i] += g.d[i];
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    Mat& dst = nodes_[n.b].grad;
                    for (size_t i = 0; i < g.size(); ++i) dst.d[i] -= g.d[i];
                }
                break;
            }
            case Op::kMul: {
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    Mat& dst = nodes_[n.a].grad;
                    const Mat& bv = nodes_[n.b].val();
                    for (size_t i = 0; i < g.size(); ++i) dst.d[i] += g.d[i] * bv.d[i];
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    Mat& dst = nodes_[n.b].grad;
                    const Mat& av = nodes_[n.a].val();
                    for (size_t i = 0; i < g.size(); ++i) dst.d[i] += g.d[i] * av.d[i];
                }
                break;
            }
            case Op::kAddRowVec: {
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    Mat& dst = nodes_[n.a].grad;
                    for (size_t i = 0; i < g.size(); ++i) dst.d[i] += g.d[i];
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    Mat& dst = nodes_[n.b].grad;
                    for (int r = 0; r < g.rows; ++r) {
                        const double* row = g.row_ptr(r);
                        for (int c = 0; c < g.cols; ++c) dst.d[c] += row[c];
                    }
                }
                break;
            }
            case Op::kScale: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (size_t i = 0; i < g.size(); ++i) dst.d[i] += g.d[i] * n.s;
                break;
            }
            case Op::kGelu: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                const Mat& x = nodes_[n.a].val();
                for (size_t i = 0; i < g.size(); ++i)
                    dst.d[i] += g.d[i] * gelu_grad(x.d[i]);
                break;
            }
            case Op::kSigmoid: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    double y = n.value.d[i];
                    dst.d[i] += g.d[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::kTanh: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    double y = n.value.d[i];
                    dst.d[i] += g.d[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::kSoftmaxRows: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (int r = 0; r < g.rows; ++r) {
                    const double* p = n.value.row_ptr(r);
                    const double* gr = g.row_ptr(r);
                    double dot = 0.0;
                    for (int c = 0; c < g.cols; ++c) dot += gr[c] * p[c];
                    double* dr = dst.row_ptr(r);
                    for (int c = 0; c < g.cols; ++c) dr[c] += p[c] * (gr[c] - dot);
                }
                break;
            }
            case Op::kLogSoftmaxRows: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (int r = 0; r < g.rows; ++r) {
                    const double* ls = n.value.row_ptr(r);
                    const double* gr = g.row_ptr(r);
                    double gsum = 0.0;
                    for (int c = 0; c < g.cols; ++c) gsum += gr[c];
                    double* dr = dst.row_ptr(r);
                    for (int c = 0; c < g.cols; ++c)
                        dr[c] += gr[c] - std::exp(ls[c]) * gsum;
                }
                break;
            }
            case Op::kLayerNormRows: {
                const Mat& x = nodes_[n.a].val();
                const Mat& gain = nodes_[n.b].val();
                const int cols = x.cols;
                if (nodes_[n.a].needs_grad) ensure_grad(n.a);
                if (nodes_[n.b].needs_grad) ensure_grad(n.b);
                if (nodes_[n.c].needs_grad) ensure_grad(n.c);
                for (int r = 0; r < x.rows; ++r) {
                    const double mean = n.aux[2 * r];
                    const double inv_std = n.aux[2 * r + 1];
                    const double* xr = x.row_ptr(r);
                    const double* gr = g.row_ptr(r);
                    // xhat and reductions
                    double sum_gy = 0.0, sum_gy_xhat = 0.0;
                    for (int c = 0; c < cols; ++c) {
                        double xhat = (xr[c] - mean) * inv_std;
                        double gy = gr[c] * gain.d[c];
                        sum_gy += gy;
                        sum_gy_xhat += gy * xhat;
                    }
                    if (nodes_[n.a].needs_grad) {
                        double* dx = nodes_[n.a].grad.row_ptr(r);
                        for (int c = 0; c < cols; ++c) {
                            double xhat = (xr[c] - mean) * inv_std;
                            double gy = gr[c] * gain.d[c];
                            dx[c] += inv_std *
                                     (gy - sum_gy / cols - xhat * sum_gy_xhat / cols);
                        }
                    }
                    if (nodes_[n.b].needs_grad) {
                        double* dg = nodes_[n.b].grad.d.data();
                        for (int c = 0; c < cols; ++c) {
                            double xhat = (xr[c] - mean) * inv_std;
                            dg[c] += gr[c] * xhat;
                        }
                    }
                    if (nodes_[n.c].needs_grad) {
                        double* db = nodes_[n.c].grad.d.data();
                        for (int c = 0; c < cols; ++c) db[c] += gr[c];
                    }
                }
                break;
            }
            case Op::kConcatRows: {
                const int ra = n.i0;
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    Mat& dst = nodes_[n.a].grad;
                    for (size_t i = 0; i < dst.size(); ++i) dst.d[i] += g.d[i];
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    Mat& dst = nodes_[n.b].grad;
                    const size_t off = static_cast<size_t>(ra) * g.cols;
                    for (size_t i = 0; i < dst.size(); ++i) dst.d[i] += g.d[off + i];
                }
                break;
            }
            case Op::kConcatCols: {
                const int ca = n.i0;
                if (nodes_[n.a].needs_grad) {
                    ensure_grad(n.a);
                    Mat& dst = nodes_[n.a].grad;
                    for (int r = 0; r < g.rows; ++r) {
                        const double* gr = g.row_ptr(r);
                        double* dr = dst.row_ptr(r);
                        for (int c = 0; c < ca; ++c) dr[c] += gr[c];
                    }
                }
                if (nodes_[n.b].needs_grad) {
                    ensure_grad(n.b);
                    Mat& dst = nodes_[n.b].grad;
                    for (int r = 0; r < g.rows; ++r) {
                        const double* gr = g.row_ptr(r);
                        double* dr = dst.row_ptr(r);
                        for (int c = 0; c < dst.cols; ++c) dr[c] += gr[ca + c];
                    }
                }
                break;
            }
            case Op::kSliceRows: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (int r = 0; r < g.rows; ++r) {
                    const double* gr = g.row_ptr(r);
                    double* dr = dst.row_ptr(n.i0 + r);
                    for (int c = 0; c < g.cols; ++c) dr[c] += gr[c];
                }
                break;
            }
            case Op::kSliceCols: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (int r = 0; r < g.rows; ++r) {
                    const double* gr = g.row_ptr(r);
                    double* dr = dst.row_ptr(r);
                    for (int c = 0; c < g.cols; ++c) dr[n.i0 + c] += gr[c];
                }
                break;
            }
            case Op::kGatherRows: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (size_t i = 0; i < n.idx.size(); ++i) {
                    const double* gr = g.row_ptr(static_cast<int>(i));
                    double* dr = dst.row_ptr(n.idx[i]);
                    for (int c = 0; c < g.cols; ++c) dr[c] += gr[c];
                }
                break;
            }
            case Op::kMeanRows: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                const double inv = 1.0 / dst.rows;
                for (int r = 0; r < dst.rows; ++r) {
                    double* dr = dst.row_ptr(r);
                    for (int c = 0; c < dst.cols; ++c) dr[c] += g.d[c] * inv;
                }
                break;
            }
            case Op::kSum: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (size_t i = 0; i < dst.size(); ++i) dst.d[i] += g.d[0];
                break;
            }
            case Op::kPick: {
                ensure_grad(n.a);
                nodes_[n.a].grad.at(n.i0, n.i1) += g.d[0];
                break;
            }
            case Op::kNeg: {
                ensure_grad(n.a);
                Mat& dst = nodes_[n.a].grad;
                for (size_t i = 0; i < g.size(); ++i) dst.d[i] -= g.d[i];
                break;
            }
        }
    }
}

void AdamOptimizer::step(ParamStore& store) {
    ++t_;
    // global norm clip
    double norm_sq = 0.0;
    for (const auto& [name, p] : store.all())
        for (double v : p.grad.d) norm_sq += v * v;
    const double norm = std::sqrt(norm_sq);
    const double scale = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;

    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto& [name, p] : store.all()) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_.emplace(name, std::make_pair(Mat(p.value.rows, p.value.cols),
                                                     Mat(p.value.rows, p.value.cols)))
                     .first;
        Mat& m = it->second.first;
        Mat& v = it->second.second;
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double gi = p.grad.d[i] * scale;
            m.d[i] = b1_ * m.d[i] + (1.0 - b1_) * gi;
            v.d[i] = b2_ * v.d[i] + (1.0 - b2_) * gi * gi;
            const double mhat = m.d[i] / bc1;
            const double vhat = v.d[i] / bc2;
            p.value.d[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
    store.zero_grad();
}

}  // namespace dqa::nn
