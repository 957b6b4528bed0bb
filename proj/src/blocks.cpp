#include "attrseg/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace attrseg {

using namespace ad;

Mat init_linear(Rng& rng, int in_dim, int out_dim) {
    Mat w(in_dim, out_dim);
    const double std = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (long i = 0; i < w.rows(); ++i)
        for (long j = 0; j < w.cols(); ++j) w(i, j) = rng.normal(0.0, std);
    return w;
}

void AttnParams::init(Rng& rng, int dim, const std::string& prefix) {
    q_w = Param(prefix + ".q.w", init_linear(rng, dim, dim));
    q_b = Param(prefix + ".q.b", Mat::Zero(1, dim));
    k_w = Param(prefix + ".k.w", init_linear(rng, dim, dim));
    k_b = Param(prefix + ".k.b", Mat::Zero(1, dim));
    v_w = Param(prefix + ".v.w", init_linear(rng, dim, dim));
    v_b = Param(prefix + ".v.b", Mat::Zero(1, dim));
    o_w = Param(prefix + ".o.w", init_linear(rng, dim, dim));
    o_b = Param(prefix + ".o.b", Mat::Zero(1, dim));
}

void AttnParams::collect(std::vector<Param*>& out) {
    for (Param* p : {&q_w, &q_b, &k_w, &k_b, &v_w, &v_b, &o_w, &o_b}) out.push_back(p);
}

void BlockParams::init(Rng& rng, int dim, int mlp_hidden, const std::string& prefix) {
    ln1_g = Param(prefix + ".ln1.g", Mat::Ones(1, dim));
    ln1_b = Param(prefix + ".ln1.b", Mat::Zero(1, dim));
    attn.init(rng, dim, prefix + ".attn");
    ln2_g = Param(prefix + ".ln2.g", Mat::Ones(1, dim));
    ln2_b = Param(prefix + ".ln2.b", Mat::Zero(1, dim));
    mlp_w1 = Param(prefix + ".mlp.w1", init_linear(rng, dim, mlp_hidden));
    mlp_b1 = Param(prefix + ".mlp.b1", Mat::Zero(1, mlp_hidden));
    mlp_w2 = Param(prefix + ".mlp.w2", init_linear(rng, mlp_hidden, dim));
    mlp_b2 = Param(prefix + ".mlp.b2", Mat::Zero(1, dim));
}

void BlockParams::collect(std::vector<Param*>& out) {
    out.push_back(&ln1_g);
    out.push_back(&ln1_b);
    attn.collect(out);
    out.push_back(&ln2_g);
    out.push_back(&ln2_b);
    for (Param* p : {&mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2}) out.push_back(p);
}

Node* block_forward_mha(Ctx& ctx, Node* x, BlockParams& p, const std::vector<std::vector<int>>& groups,
                        int heads) {
    Tape& t = ctx.tape;
    const int dim = static_cast<int>(x->val.cols());
    if (dim % heads != 0) throw std::invalid_argument("attention width not divisible by head count");
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dim / heads));

    Node* h = layernorm(t, x, ctx.use(p.ln1_g), ctx.use(p.ln1_b));
    Node* q = linear(t, h, ctx.use(p.attn.q_w), ctx.use(p.attn.q_b));
    Node* k = linear(t, h, ctx.use(p.attn.k_w), ctx.use(p.attn.k_b));
    Node* v = linear(t, h, ctx.use(p.attn.v_w), ctx.use(p.attn.v_b));
    Node* att = mha(t, q, k, v, groups, heads, att_scale);
    Node* out = linear(t, att, ctx.use(p.attn.o_w), ctx.use(p.attn.o_b));
    x = add(t, x, out);

    Node* h2 = layernorm(t, x, ctx.use(p.ln2_g), ctx.use(p.ln2_b));
    Node* m = linear(t, gelu(t, linear(t, h2, ctx.use(p.mlp_w1), ctx.use(p.mlp_b1))), ctx.use(p.mlp_w2),
                     ctx.use(p.mlp_b2));
    return add(t, x, m);
}

Node* block_forward_linatt(Ctx& ctx, Node* x, BlockParams& p, int group_size) {
    Tape& t = ctx.tape;
    Node* h = layernorm(t, x, ctx.use(p.ln1_g), ctx.use(p.ln1_b));
    Node* q = linear_rowsafe(t, h, ctx.use(p.attn.q_w), ctx.use(p.attn.q_b));
    Node* k = linear_rowsafe(t, h, ctx.use(p.attn.k_w), ctx.use(p.attn.k_b));
    Node* v = linear_rowsafe(t, h, ctx.use(p.attn.v_w), ctx.use(p.attn.v_b));
    Node* att = linear_attention(t, q, k, v, group_size);
    Node* out = linear_rowsafe(t, att, ctx.use(p.attn.o_w), ctx.use(p.attn.o_b));
    x = add(t, x, out);

    Node* h2 = layernorm(t, x, ctx.use(p.ln2_g), ctx.use(p.ln2_b));
    Node* m = linear_rowsafe(
        t, gelu(t, linear_rowsafe(t, h2, ctx.use(p.mlp_w1), ctx.use(p.mlp_b1))), ctx.use(p.mlp_w2),
        ctx.use(p.mlp_b2));
    return add(t, x, m);
}

std::vector<std::vector<int>> window_groups(int h, int w, int window) {
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    std::vector<std::vector<int>> groups;
    for (int wy = 0; wy < h; wy += window) {
        for (int wx = 0; wx < w; wx += window) {
            std::vector<int> g;
            for (int y = wy; y < std::min(wy + window, h); ++y)
                for (int x = wx; x < std::min(wx + window, w); ++x) g.push_back(y * w + x);
            groups.push_back(std::move(g));
        }
    }
    return groups;
}

std::vector<std::vector<int>> full_group(int n) {
    std::vector<int> g(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<size_t>(i)] = i;
    return {g};
}

}  // namespace attrseg
