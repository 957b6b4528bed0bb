#include "attrseg/enhancement.hpp"

#include <stdexcept>

namespace attrseg {

using namespace ad;

SpatialEnhancer::SpatialEnhancer(const EnhanceConfig& cfg, int guidance_dim, Rng& rng) : cfg_(cfg) {
    if (cfg.embed_dim % cfg.heads != 0)
        throw std::invalid_argument("enhancement width must be divisible by head count");
    lift_w_ = Param("enhance.spatial.lift.w", init_linear(rng, 1, cfg.embed_dim));
    lift_b_ = Param("enhance.spatial.lift.b", Mat::Zero(1, cfg.embed_dim));
    guid_w_ = Param("enhance.spatial.guid.w", init_linear(rng, guidance_dim, cfg.embed_dim));
    guid_b_ = Param("enhance.spatial.guid.b", Mat::Zero(1, cfg.embed_dim));
    blocks_.resize(static_cast<size_t>(cfg.spatial_blocks));
    for (int b = 0; b < cfg.spatial_blocks; ++b)
        blocks_[static_cast<size_t>(b)].init(rng, cfg.embed_dim, 4 * cfg.embed_dim,
                                             "enhance.spatial.block" + std::to_string(b));
}

std::vector<Node*> SpatialEnhancer::forward(Ctx& ctx, Node* cost, Node* guidance, int h, int w) {
    Tape& t = ctx.tape;
    if (cost->val.rows() != static_cast<long>(h) * w)
        throw std::invalid_argument("cost volume rows do not match the spatial grid");
    if (guidance->val.rows() != cost->val.rows())
        throw std::invalid_argument("guidance feature and cost volume must share spatial dims");
    const int k = static_cast<int>(cost->val.cols());
    Node* guid = linear(t, guidance, ctx.use(guid_w_), ctx.use(guid_b_));
    const auto groups = window_groups(h, w, cfg_.window);
    std::vector<Node*> slices;
    slices.reserve(static_cast<size_t>(k));
    for (int n = 0; n < k; ++n) {
        Node* x = add(t, linear(t, slice_cols(t, cost, n, 1), ctx.use(lift_w_), ctx.use(lift_b_)), guid);
        if (cfg_.spatial)
            for (BlockParams& b : blocks_) x = block_forward_mha(ctx, x, b, groups, cfg_.heads);
        slices.push_back(x);
    }
    return slices;
}

void SpatialEnhancer::collect(std::vector<Param*>& out) {
    for (Param* p : {&lift_w_, &lift_b_, &guid_w_, &guid_b_}) out.push_back(p);
    for (BlockParams& b : blocks_) b.collect(out);
}

ClassEnhancer::ClassEnhancer(const EnhanceConfig& cfg, int text_dim, Rng& rng) : cfg_(cfg) {
    tproj_w_ = Param("enhance.cls.tproj.w", init_linear(rng, text_dim, cfg.embed_dim));
    tproj_b_ = Param("enhance.cls.tproj.b", Mat::Zero(1, cfg.embed_dim));
    in_w_ = Param("enhance.cls.in.w", init_linear(rng, 2 * cfg.embed_dim, cfg.embed_dim));
    in_b_ = Param("enhance.cls.in.b", Mat::Zero(1, cfg.embed_dim));
    blocks_.resize(static_cast<size_t>(cfg.class_blocks));
    for (int b = 0; b < cfg.class_blocks; ++b)
        blocks_[static_cast<size_t>(b)].init(rng, cfg.embed_dim, 4 * cfg.embed_dim,
                                             "enhance.cls.block" + std::to_string(b));
}

std::vector<Node*> ClassEnhancer::forward(Ctx& ctx, const std::vector<Node*>& slices, Node* text, int hw) {
    Tape& t = ctx.tape;
    const int k = static_cast<int>(slices.size());
    if (k == 0) throw std::invalid_argument("class enhancement needs at least one class slice");
    if (text->val.rows() != k)
        throw std::invalid_argument("text embedding count does not match the class axis");

    Node* tproj = linear_rowsafe(t, text, ctx.use(tproj_w_), ctx.use(tproj_b_));
    std::vector<Node*> conditioned;
    conditioned.reserve(static_cast<size_t>(k));
    for (int n = 0; n < k; ++n) {
        Node* trow = gather_rows(t, tproj, std::vector<int>(static_cast<size_t>(hw), n));
        Node* joint = concat_cols(t, slices[static_cast<size_t>(n)], trow);
        conditioned.push_back(linear_rowsafe(t, joint, ctx.use(in_w_), ctx.use(in_b_)));
    }

    if (!cfg_.cls) return conditioned;

    // Reorder class-major (k*hw) to pixel-major (hw*k) so each pixel's k class
    // tokens form one consecutive attention group.
    Node* class_major = concat_rows(t, conditioned);
    std::vector<int> to_pixel_major(static_cast<size_t>(hw) * k);
    for (int p = 0; p < hw; ++p)
        for (int n = 0; n < k; ++n) to_pixel_major[static_cast<size_t>(p) * k + n] = n * hw + p;
    Node* x = gather_rows(t, class_major, to_pixel_major);

    for (BlockParams& b : blocks_) x = block_forward_linatt(ctx, x, b, k);

    std::vector<Node*> out;
    out.reserve(static_cast<size_t>(k));
    for (int n = 0; n < k; ++n) {
        std::vector<int> idx(static_cast<size_t>(hw));
        for (int p = 0; p < hw; ++p) idx[static_cast<size_t>(p)] = p * k + n;
        out.push_back(gather_rows(t, x, idx));
    }
    return out;
}

void ClassEnhancer::collect(std::vector<Param*>& out) {
    for (Param* p : {&tproj_w_, &tproj_b_, &in_w_, &in_b_}) out.push_back(p);
    for (BlockParams& b : blocks_) b.collect(out);
}

}  // namespace attrseg
