#include <doctest.h>

#include <cmath>

#include "dqa/autograd.hpp"
#include "gradcheck.hpp"

using namespace dqa;
using dqa::testing::check_gradients;
using dqa::testing::random_mat;

TEST_CASE("matmul and matmul_nt forward values") {
    nn::Tape t;
    nn::Mat a(2, 3), b(3, 2);
    for (int i = 0; i < 6; ++i) {
        a.d[static_cast<size_t>(i)] = i + 1;
        b.d[static_cast<size_t>(i)] = 2 * i;
    }
    nn::Var va = t.input(a);
    nn::Var vb = t.input(b);
    const nn::Mat& c = t.val(t.matmul(va, vb));
    CHECK(c.at(0, 0) == doctest::Approx(0 * 1 + 4 * 2 + 8 * 3));
    CHECK(c.at(1, 1) == doctest::Approx(2 * 4 + 6 * 5 + 10 * 6));

    nn::Mat bt(2, 3);
    for (int r = 0; r < 2; ++r)
        for (int ccol = 0; ccol < 3; ++ccol) bt.at(r, ccol) = b.at(ccol, r);
    const nn::Mat& c2 = t.val(t.matmul_nt(va, t.input(bt)));
    for (int r = 0; r < 2; ++r)
        for (int ccol = 0; ccol < 2; ++ccol)
            CHECK(c2.at(r, ccol) == doctest::Approx(c.at(r, ccol)));
}

TEST_CASE("softmax rows sum to one") {
    nn::Tape t;
    nn::Var x = t.input(random_mat(7, 11, 99, 3.0));
    const nn::Mat& p = t.val(t.softmax_rows(x));
    for (int r = 0; r < p.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < p.cols; ++c) {
            CHECK(p.at(r, c) >= 0.0);
            s += p.at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("gradients of every op match finite differences") {
    nn::ParamStore store;
    store.define("A", 3, 4).value = random_mat(3, 4, 1);
    store.define("B", 4, 5).value = random_mat(4, 5, 2);
    store.define("C", 3, 5).value = random_mat(3, 5, 3);
    store.define("gain", 1, 5).value = random_mat(1, 5, 4, 0.3);
    store.define("bias", 1, 5).value = random_mat(1, 5, 5, 0.3);
    store.define("D", 2, 5).value = random_mat(2, 5, 6);
    store.define("E", 3, 3).value = random_mat(3, 3, 7);

    auto build = [&](nn::Tape& t) {
        nn::Var a = t.param(store.get("A"));
        nn::Var b = t.param(store.get("B"));
        nn::Var c = t.param(store.get("C"));
        nn::Var gain = t.param(store.get("gain"));
        nn::Var bias = t.param(store.get("bias"));
        nn::Var d = t.param(store.get("D"));
        nn::Var e = t.param(store.get("E"));

        nn::Var m = t.matmul(a, b);                       // 3x5
        nn::Var ln = t.layer_norm_rows(m, gain, bias);    // 3x5
        nn::Var s = t.add(ln, c);
        nn::Var g = t.gelu(s);
        nn::Var sm = t.softmax_rows(t.mul(g, c));
        nn::Var lsm = t.log_softmax_rows(t.sub(g, c));
        nn::Var mixed = t.add(sm, t.scale(lsm, 0.25));
        nn::Var nt = t.matmul_nt(mixed, d);               // 3x2
        nn::Var act = t.add(t.sigmoid(nt), t.tanh(nt));
        nn::Var cat = t.concat_cols(act, t.slice_cols(mixed, 1, 4));  // 3x5
        nn::Var cat2 = t.concat_rows(cat, t.gather_rows(cat, {1, 0}));  // 5x5
        nn::Var sl = t.slice_rows(cat2, 1, 4);            // 3x5
        nn::Var rv = t.add_rowvec(sl, bias);
        nn::Var mr = t.mean_rows(rv);                     // 1x5
        nn::Var ee = t.matmul(e, t.matmul_nt(rv, rv));    // 3x3 path through E
        nn::Var total = t.add(t.sum(mr), t.add(t.pick(ee, 1, 2), t.sum(t.neg(ee))));
        return total;
    };

    auto res = check_gradients(store, build, 6);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-6);
    CHECK(res.checked > 0);
}

TEST_CASE("adam step is deterministic and descends") {
    auto run = [&](std::vector<double>* curve) {
        nn::ParamStore store;
        store.define("w", 2, 2).value = random_mat(2, 2, 42);
        nn::Mat target = random_mat(2, 2, 43);
        nn::AdamOptimizer opt(0.05, 1.0);
        double last = 0.0;
        for (int step = 0; step < 50; ++step) {
            nn::Tape t;
            nn::Var diff = t.sub(t.param(store.get("w")), t.input(target));
            nn::Var loss = t.sum(t.mul(diff, diff));
            last = t.val(loss).d[0];
            if (curve) curve->push_back(last);
            t.backward(loss);
            opt.step(store);
        }
        return last;
    };
    std::vector<double> c1, c2;
    double l1 = run(&c1);
    double l2 = run(&c2);
    CHECK(l1 == l2);
    CHECK(c1 == c2);
    CHECK(l1 < 0.05 * c1.front());
}
