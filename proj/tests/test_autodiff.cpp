#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"

#include "attrseg/autodiff.hpp"
#include "attrseg/rng.hpp"
#include "helpers.hpp"

using namespace attrseg;
using namespace attrseg::testutil;

namespace {

// Checks d(mean of graph output)/d(param entries) against central differences
// for every entry of every listed parameter.
void check_grads(std::vector<ad::Param*> params,
                 const std::function<ad::Node*(ad::Ctx&)>& build, double tol = 1e-6) {
    auto scalar = [&]() {
        ad::Tape tape(false);
        ad::Ctx ctx(tape);
        return ad::mean_all(tape, build(ctx))->val(0, 0);
    };
    ad::Tape tape;
    ad::Ctx ctx(tape);
    for (ad::Param* p : params) p->zero_grad();
    tape.backward(ad::mean_all(tape, build(ctx)));
    for (ad::Param* p : params)
        for (long i = 0; i < p->value.rows(); ++i)
            for (long j = 0; j < p->value.cols(); ++j) {
                const double fd = central_diff(*p, i, j, scalar);
                INFO(p->name, "(", i, ",", j, ") analytic=", p->grad(i, j), " numeric=", fd);
                CHECK(rel_err(p->grad(i, j), fd) < tol);
            }
}

}  // namespace

TEST_CASE("elementwise ops differentiate correctly") {
    Rng rng(11);
    ad::Param a("a", random_mat(rng, 3, 4));
    ad::Param b("b", random_mat(rng, 3, 4));
    check_grads({&a, &b}, [&](ad::Ctx& c) {
        ad::Tape& t = c.tape;
        ad::Node* x = ad::add(t, c.use(a), c.use(b));
        x = ad::sub(t, x, ad::scale(t, c.use(b), 0.3));
        x = ad::cmul(t, x, c.use(a));
        return ad::add_scalar(t, x, 0.25);
    });
}

TEST_CASE("scale_bynode differentiates through both inputs") {
    Rng rng(12);
    ad::Param a("a", random_mat(rng, 3, 3));
    ad::Param s("s", random_mat(rng, 1, 1));
    check_grads({&a, &s}, [&](ad::Ctx& c) { return ad::scale_bynode(c.tape, c.use(a), c.use(s)); });
}

TEST_CASE("matmul / transpose / add_rowvec / linear differentiate correctly") {
    Rng rng(13);
    ad::Param x("x", random_mat(rng, 4, 3));
    ad::Param w("w", random_mat(rng, 3, 5));
    ad::Param v("v", random_mat(rng, 1, 5));
    check_grads({&x, &w, &v}, [&](ad::Ctx& c) {
        ad::Tape& t = c.tape;
        ad::Node* y = ad::matmul(t, c.use(x), c.use(w));
        y = ad::add_rowvec(t, y, c.use(v));
        return ad::matmul(t, ad::transpose(t, y), y);
    });
    check_grads({&x, &w, &v},
                [&](ad::Ctx& c) { return ad::linear(c.tape, c.use(x), c.use(w), c.use(v)); });
}

TEST_CASE("linear_rowsafe matches linear and is row-permutation bit-exact") {
    Rng rng(14);
    ad::Param x("x", random_mat(rng, 6, 4));
    ad::Param w("w", random_mat(rng, 4, 3));
    ad::Param b("b", random_mat(rng, 1, 3));
    check_grads({&x, &w, &b},
                [&](ad::Ctx& c) { return ad::linear_rowsafe(c.tape, c.use(x), c.use(w), c.use(b)); });

    ad::Tape t(false);
    ad::Ctx c(t);
    ad::Node* dense = ad::linear(t, c.use(x), c.use(w), c.use(b));
    ad::Node* rowsafe = ad::linear_rowsafe(t, c.use(x), c.use(w), c.use(b));
    CHECK(max_abs_diff(dense->val, rowsafe->val) < 1e-12);

    // Permute input rows; rowsafe outputs must be the same bits, row-permuted.
    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    ad::Mat xp(6, 4);
    for (int i = 0; i < 6; ++i) xp.row(i) = x.value.row(perm[i]);
    ad::Param x2("x2", xp);
    ad::Node* permuted = ad::linear_rowsafe(t, c.use(x2), c.use(w), c.use(b));
    for (int i = 0; i < 6; ++i)
        CHECK(bitwise_equal(permuted->val.row(i), rowsafe->val.row(perm[i])));
}

TEST_CASE("concat/slice/gather ops differentiate correctly") {
    Rng rng(15);
    ad::Param a("a", random_mat(rng, 4, 3));
    ad::Param b("b", random_mat(rng, 4, 2));
    check_grads({&a, &b}, [&](ad::Ctx& c) {
        ad::Tape& t = c.tape;
        ad::Node* cat = ad::concat_cols(t, c.use(a), c.use(b));
        ad::Node* sl = ad::slice_cols(t, cat, 1, 3);
        // duplicated + reordered rows exercise gradient scatter-add
        ad::Node* g = ad::gather_rows(t, sl, {2, 2, 0, 3, 1, 0});
        return ad::cmul(t, g, g);
    });
    ad::Param c1("c1", random_mat(rng, 2, 3));
    ad::Param c2("c2", random_mat(rng, 3, 3));
    check_grads({&c1, &c2}, [&](ad::Ctx& c) {
        return ad::concat_rows(c.tape, {c.use(c1), c.use(c2), c.use(c1)});
    });
}

TEST_CASE("nonlinearities differentiate correctly") {
    Rng rng(16);
    ad::Param a("a", random_mat(rng, 3, 5));
    check_grads({&a}, [&](ad::Ctx& c) { return ad::gelu(c.tape, c.use(a)); });
    check_grads({&a}, [&](ad::Ctx& c) { return ad::sigmoid(c.tape, c.use(a)); });
    check_grads({&a}, [&](ad::Ctx& c) {
        // weight after softmax so per-row gradients are non-trivial
        return ad::cmul(c.tape, ad::softmax_rows(c.tape, c.use(a)), c.use(a));
    });
}

TEST_CASE("softmax rows sum to one and are shift-invariant") {
    Rng rng(17);
    ad::Tape t(false);
    ad::Ctx c(t);
    ad::Param a("a", random_mat(rng, 5, 7, 3.0));
    ad::Node* s = ad::softmax_rows(t, c.use(a));
    for (long i = 0; i < 5; ++i) CHECK(std::abs(s->val.row(i).sum() - 1.0) < 1e-12);
    ad::Param shifted("a2", a.value + ad::Mat::Constant(5, 7, 123.0));
    ad::Node* s2 = ad::softmax_rows(t, c.use(shifted));
    CHECK(max_abs_diff(s->val, s2->val) < 1e-12);
}

TEST_CASE("layernorm differentiates correctly and normalizes rows") {
    Rng rng(18);
    ad::Param x("x", random_mat(rng, 4, 6, 2.0));
    ad::Param g("g", random_mat(rng, 1, 6));
    ad::Param b("b", random_mat(rng, 1, 6));
    check_grads({&x, &g, &b}, [&](ad::Ctx& c) {
        ad::Node* y = ad::layernorm(c.tape, c.use(x), c.use(g), c.use(b));
        return ad::cmul(c.tape, y, y);
    }, 5e-6);

    ad::Tape t(false);
    ad::Ctx c(t);
    ad::Param ones("ones", ad::Mat::Ones(1, 6));
    ad::Param zeros("zeros", ad::Mat::Zero(1, 6));
    ad::Node* y = ad::layernorm(t, c.use(x), c.use(ones), c.use(zeros));
    for (long i = 0; i < 4; ++i) {
        CHECK(std::abs(y->val.row(i).mean()) < 1e-12);
        const double var = y->val.row(i).array().square().mean();
        CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts variance slightly below 1
    }
}

TEST_CASE("multi-head attention differentiates correctly") {
    Rng rng(19);
    ad::Param q("q", random_mat(rng, 6, 4));
    ad::Param k("k", random_mat(rng, 6, 4));
    ad::Param v("v", random_mat(rng, 6, 4));
    const std::vector<std::vector<int>> groups{{0, 1, 4}, {2, 5}};
    check_grads({&q, &k, &v}, [&](ad::Ctx& c) {
        ad::Node* o = ad::mha(c.tape, c.use(q), c.use(k), c.use(v), groups, 2, 1.0 / 2.0);
        return ad::cmul(c.tape, o, o);
    }, 1e-5);
}

TEST_CASE("mha rows outside every group are zero") {
    Rng rng(20);
    ad::Tape t(false);
    ad::Ctx c(t);
    ad::Param q("q", random_mat(rng, 5, 4));
    ad::Node* o = ad::mha(t, c.use(q), c.use(q), c.use(q), {{0, 2}}, 2, 0.5);
    CHECK(o->val.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(o->val.row(3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(o->val.row(4).cwiseAbs().maxCoeff() == 0.0);
    CHECK(o->val.row(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("single-member mha group returns its value row") {
    Rng rng(21);
    ad::Tape t(false);
    ad::Ctx c(t);
    ad::Param q("q", random_mat(rng, 3, 4));
    ad::Param v("v", random_mat(rng, 3, 4));
    ad::Node* o = ad::mha(t, c.use(q), c.use(q), c.use(v), {{1}}, 2, 0.5);
    CHECK(max_abs_diff(o->val.row(1), v.value.row(1)) < 1e-15);
}

TEST_CASE("linear attention differentiates correctly") {
    Rng rng(22);
    ad::Param q("q", random_mat(rng, 6, 4));
    ad::Param k("k", random_mat(rng, 6, 4));
    ad::Param v("v", random_mat(rng, 6, 4));
    check_grads({&q, &k, &v}, [&](ad::Ctx& c) {
        ad::Node* o = ad::linear_attention(c.tape, c.use(q), c.use(k), c.use(v), 3);
        return ad::cmul(c.tape, o, o);
    }, 1e-5);
}

TEST_CASE("linear attention is bit-exact under within-group permutation") {
    Rng rng(23);
    const int g = 4;
    ad::Mat q = random_mat(rng, g, 5), k = random_mat(rng, g, 5), v = random_mat(rng, g, 5);
    std::vector<int> perm{2, 0, 3, 1};
    ad::Mat qp(g, 5), kp(g, 5), vp(g, 5);
    for (int i = 0; i < g; ++i) {
        qp.row(i) = q.row(perm[i]);
        kp.row(i) = k.row(perm[i]);
        vp.row(i) = v.row(perm[i]);
    }
    ad::Tape t(false);
    ad::Node* base = ad::linear_attention(t, ad::constant(t, q), ad::constant(t, k),
                                          ad::constant(t, v), g);
    ad::Node* shuf = ad::linear_attention(t, ad::constant(t, qp), ad::constant(t, kp),
                                          ad::constant(t, vp), g);
    for (int i = 0; i < g; ++i)
        CHECK(bitwise_equal(shuf->val.row(i), base->val.row(perm[i])));
}

TEST_CASE("bilinear resize differentiates and preserves constants") {
    Rng rng(24);
    ad::Param x("x", random_mat(rng, 4 * 4, 3));
    check_grads({&x}, [&](ad::Ctx& c) {
        ad::Node* up = ad::bilinear_resize(c.tape, c.use(x), 4, 4, 7, 5);
        return ad::cmul(c.tape, up, up);
    });

    ad::Tape t(false);
    ad::Node* same = ad::bilinear_resize(t, ad::constant(t, x.value), 4, 4, 4, 4);
    CHECK(max_abs_diff(same->val, x.value) < 1e-15);

    ad::Mat flat = ad::Mat::Constant(6 * 6, 2, 3.25);
    ad::Node* up = ad::bilinear_resize(t, ad::constant(t, flat), 6, 6, 13, 9);
    CHECK(max_abs_diff(up->val, ad::Mat::Constant(13 * 9, 2, 3.25)) < 1e-12);
}

TEST_CASE("bilinear resize matches an independent scalar implementation") {
    Rng rng(25);
    const int hi = 5, wi = 7, ho = 9, wo = 4, C = 2;
    ad::Mat x = random_mat(rng, hi * wi, C);
    ad::Tape t(false);
    ad::Node* out = ad::bilinear_resize(t, ad::constant(t, x), hi, wi, ho, wo);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int ch = 0; ch < C; ++ch) {
                auto tap = [](int o, int in, int outn, int& i0, int& i1, double& w1) {
                    double s = (o + 0.5) * static_cast<double>(in) / outn - 0.5;
                    s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
                    i0 = static_cast<int>(std::floor(s));
                    i1 = std::min(i0 + 1, in - 1);
                    w1 = s - i0;
                };
                int y0, y1, x0, x1;
                double wy, wx;
                tap(oy, hi, ho, y0, y1, wy);
                tap(ox, wi, wo, x0, x1, wx);
                const double want = (1 - wy) * ((1 - wx) * x(y0 * wi + x0, ch) + wx * x(y0 * wi + x1, ch)) +
                                    wy * ((1 - wx) * x(y1 * wi + x0, ch) + wx * x(y1 * wi + x1, ch));
                CHECK(std::abs(out->val(oy * wo + ox, ch) - want) < 1e-12);
            }
}

TEST_CASE("im2col3x3 differentiates and lays out neighborhoods correctly") {
    Rng rng(26);
    ad::Param x("x", random_mat(rng, 3 * 4, 2));
    check_grads({&x}, [&](ad::Ctx& c) {
        ad::Node* cols = ad::im2col3x3(c.tape, c.use(x), 3, 4);
        return ad::cmul(c.tape, cols, cols);
    });

    ad::Tape t(false);
    ad::Node* cols = ad::im2col3x3(t, ad::constant(t, x.value), 3, 4);
    REQUIRE(cols->val.cols() == 9 * 2);
    // center pixel (1,1): neighbor (dy,dx) block k = (dy+1)*3 + (dx+1)
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
            for (int ch = 0; ch < 2; ++ch) {
                const int kblk = (dy + 1) * 3 + (dx + 1);
                CHECK(cols->val(1 * 4 + 1, kblk * 2 + ch) == x.value((1 + dy) * 4 + (1 + dx), ch));
            }
    // corner (0,0): out-of-range neighbors are zero-padded
    CHECK(cols->val(0, 0 * 2 + 0) == 0.0);  // (-1,-1)
    CHECK(cols->val(0, 1 * 2 + 0) == 0.0);  // (-1, 0)
    CHECK(cols->val(0, 3 * 2 + 1) == 0.0);  // ( 0,-1)
}

TEST_CASE("reductions differentiate correctly") {
    Rng rng(27);
    ad::Param a("a", random_mat(rng, 3, 4));
    check_grads({&a}, [&](ad::Ctx& c) { return ad::sum_all(c.tape, ad::cmul(c.tape, c.use(a), c.use(a))); });
    ad::Tape t;
    ad::Ctx c(t);
    a.zero_grad();
    t.backward(ad::mean_all(t, c.use(a)));
    CHECK(max_abs_diff(a.grad, ad::Mat::Constant(3, 4, 1.0 / 12.0)) < 1e-15);
}

TEST_CASE("cosine_rows differentiates correctly and stays bounded") {
    Rng rng(28);
    ad::Param f("f", random_mat(rng, 5, 4));
    ad::Param tt("t", random_mat(rng, 3, 4));
    check_grads({&f, &tt}, [&](ad::Ctx& c) {
        ad::Node* cosmap = ad::cosine_rows(c.tape, c.use(f), c.use(tt));
        return ad::cmul(c.tape, cosmap, cosmap);
    }, 1e-5);

    ad::Tape t(false);
    ad::Node* m = ad::cosine_rows(t, ad::constant(t, f.value), ad::constant(t, tt.value));
    CHECK(m->val.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
}

TEST_CASE("cosine_rows hand case") {
    ad::Mat f(1, 2);
    f << 1.0, 0.0;
    ad::Mat tt(2, 2);
    tt << 1.0, 0.0, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    ad::Tape t(false);
    ad::Node* m = ad::cosine_rows(t, ad::constant(t, f), ad::constant(t, tt));
    CHECK(std::abs(m->val(0, 0) - 1.0) < 1e-6);
    CHECK(std::abs(m->val(0, 1) - 1.0 / std::sqrt(2.0)) < 1e-6);
}

TEST_CASE("cosine_rows gives zero for exact-zero vectors") {
    ad::Mat f = ad::Mat::Zero(2, 3);
    f(1, 0) = 2.0;
    ad::Mat tt = ad::Mat::Ones(1, 3);
    ad::Tape t(false);
    ad::Node* m = ad::cosine_rows(t, ad::constant(t, f), ad::constant(t, tt));
    CHECK(m->val(0, 0) == 0.0);
    CHECK(m->val(1, 0) > 0.0);
}

TEST_CASE("shared parameters accumulate gradients through one leaf") {
    Rng rng(29);
    ad::Param w("w", random_mat(rng, 2, 2));
    ad::Tape t;
    ad::Ctx c(t);
    ad::Node* n1 = c.use(w);
    ad::Node* n2 = c.use(w);
    CHECK(n1 == n2);  // leaf caching
    w.zero_grad();
    t.backward(ad::sum_all(t, ad::add(t, n1, n2)));
    CHECK(max_abs_diff(w.grad, ad::Mat::Constant(2, 2, 2.0)) < 1e-15);
}

TEST_CASE("backward requires a scalar root") {
    Rng rng(30);
    ad::Tape t;
    ad::Node* n = ad::constant(t, random_mat(rng, 2, 2));
    CHECK_THROWS(t.backward(n));
}

TEST_CASE("grad-disabled tape produces no parameter gradients") {
    Rng rng(31);
    ad::Param w("w", random_mat(rng, 2, 2));
    ad::Tape t(false);
    ad::Ctx c(t);
    ad::Node* loss = ad::mean_all(t, ad::cmul(t, c.use(w), c.use(w)));
    CHECK_FALSE(loss->requires_grad);
}
