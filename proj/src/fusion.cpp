#include "attrseg/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "attrseg/blocks.hpp"

namespace attrseg {

using namespace ad;

std::string fusion_token(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::Weighted: return "weighted";
        case FusionStrategy::Concat: return "concat";
        case FusionStrategy::Attention: return "attention";
    }
    throw std::logic_error("unreachable fusion strategy");
}

FusionStrategy parse_fusion(const std::string& token) {
    if (token == "weighted") return FusionStrategy::Weighted;
    if (token == "concat") return FusionStrategy::Concat;
    if (token == "attention") return FusionStrategy::Attention;
    throw std::invalid_argument("unknown fusion strategy: " + token);
}

Fusion::Fusion(FusionStrategy strategy, int primary_dim, int secondary_dim, int heads, Rng& rng)
    : strategy_(strategy), heads_(heads) {
    w_ = Param("fusion.w", Mat::Constant(1, 1, 0.5));
    for (int l = 0; l < 3; ++l) {
        align_w_[static_cast<size_t>(l)] = Param("fusion.align" + std::to_string(l) + ".w",
                                                 init_linear(rng, secondary_dim, primary_dim));
        align_b_[static_cast<size_t>(l)] =
            Param("fusion.align" + std::to_string(l) + ".b", Mat::Zero(1, primary_dim));
    }
    if (strategy == FusionStrategy::Concat) {
        concat_w_ = Param("fusion.concat.w", init_linear(rng, 2 * primary_dim, primary_dim));
        concat_b_ = Param("fusion.concat.b", Mat::Zero(1, primary_dim));
    } else if (strategy == FusionStrategy::Attention) {
        aq_w_ = Param("fusion.attn.q.w", init_linear(rng, primary_dim, primary_dim));
        aq_b_ = Param("fusion.attn.q.b", Mat::Zero(1, primary_dim));
        ak_w_ = Param("fusion.attn.k.w", init_linear(rng, primary_dim, primary_dim));
        ak_b_ = Param("fusion.attn.k.b", Mat::Zero(1, primary_dim));
        av_w_ = Param("fusion.attn.v.w", init_linear(rng, primary_dim, primary_dim));
        av_b_ = Param("fusion.attn.v.b", Mat::Zero(1, primary_dim));
        ao_w_ = Param("fusion.attn.o.w", init_linear(rng, primary_dim, primary_dim));
        ao_b_ = Param("fusion.attn.o.b", Mat::Zero(1, primary_dim));
    }
}

Node* Fusion::align(Ctx& ctx, Node* f_s, int level, int sh, int sw, int ph, int pw) {
    if (level < 0 || level > 2) throw std::invalid_argument("fusion level must be 0..2");
    Param& w = align_w_[static_cast<size_t>(level)];
    if (f_s->val.cols() != w.value.rows())
        throw std::invalid_argument("secondary-branch channel count does not match alignment map");
    Node* out = linear(ctx.tape, f_s, ctx.use(w), ctx.use(align_b_[static_cast<size_t>(level)]));
    if (sh != ph || sw != pw) out = bilinear_resize(ctx.tape, out, sh, sw, ph, pw);
    return out;
}

Node* Fusion::fuse(Ctx& ctx, Node* f_p, Node* f_s_aligned) {
    Tape& t = ctx.tape;
    if (f_p->val.rows() != f_s_aligned->val.rows() || f_p->val.cols() != f_s_aligned->val.cols())
        throw std::invalid_argument("fusion inputs must share shape");
    switch (strategy_) {
        case FusionStrategy::Weighted: {
            Node* w = ctx.use(w_);
            Node* one_minus = add_scalar(t, scale(t, w, -1.0), 1.0);
            return add(t, scale_bynode(t, f_p, w), scale_bynode(t, f_s_aligned, one_minus));
        }
        case FusionStrategy::Concat: {
            Node* joint = concat_cols(t, f_p, f_s_aligned);
            return linear(t, joint, ctx.use(concat_w_), ctx.use(concat_b_));
        }
        case FusionStrategy::Attention: {
            // Single-head cross attention: primary tokens query the aligned
            // secondary tokens; residual add keeps the primary stream.
            const double att_scale = 1.0 / std::sqrt(static_cast<double>(f_p->val.cols()));
            Node* q = linear(t, f_p, ctx.use(aq_w_), ctx.use(aq_b_));
            Node* k = linear(t, f_s_aligned, ctx.use(ak_w_), ctx.use(ak_b_));
            Node* v = linear(t, f_s_aligned, ctx.use(av_w_), ctx.use(av_b_));
            Node* scores = scale(t, matmul(t, q, transpose(t, k)), att_scale);
            Node* attn = softmax_rows(t, scores);
            Node* mixed = matmul(t, attn, v);
            Node* out = linear(t, mixed, ctx.use(ao_w_), ctx.use(ao_b_));
            return add(t, f_p, out);
        }
    }
    throw std::logic_error("unreachable fusion strategy");
}

void Fusion::collect(std::vector<Param*>& out) {
    out.push_back(&w_);
    for (int l = 0; l < 3; ++l) {
        out.push_back(&align_w_[static_cast<size_t>(l)]);
        out.push_back(&align_b_[static_cast<size_t>(l)]);
    }
    if (strategy_ == FusionStrategy::Concat) {
        out.push_back(&concat_w_);
        out.push_back(&concat_b_);
    } else if (strategy_ == FusionStrategy::Attention) {
        for (Param* p : {&aq_w_, &aq_b_, &ak_w_, &ak_b_, &av_w_, &av_b_, &ao_w_, &ao_b_}) out.push_back(p);
    }
}

Node* cost_map(Tape& t, Node* fused, Node* text) {
    if (fused->val.cols() != text->val.cols())
        throw std::invalid_argument("fused feature dim does not match text embedding dim");
    return cosine_rows(t, fused, text, 1e-8);
}

}  // namespace attrseg
