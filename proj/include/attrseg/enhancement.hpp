#pragma once

#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/blocks.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

struct EnhanceConfig {
    int embed_dim = 48;     // per-(pixel, class) token width
    int window = 4;         // spatial attention window side
    int heads = 4;
    int spatial_blocks = 1;
    int class_blocks = 1;
    bool spatial = true;    // run the spatial attention blocks
    bool cls = true;        // run the class attention blocks
};

// Lifts each scalar cost entry into an embed_dim token, adds a projection of
// the fused guidance feature at the same pixel, then runs windowed
// self-attention over pixel positions within each class slice. Slices go
// through identical weights as separate graph nodes, so a class permutation
// permutes outputs exactly. When `spatial` is off only the lift/guidance
// embedding runs (the decoder needs tokens either way).
class SpatialEnhancer {
public:
    SpatialEnhancer(const EnhanceConfig& cfg, int guidance_dim, Rng& rng);

    // cost: (h*w x k), guidance: (h*w x guidance_dim). Returns k slice nodes,
    // each (h*w x embed_dim).
    std::vector<ad::Node*> forward(ad::Ctx& ctx, ad::Node* cost, ad::Node* guidance, int h, int w);

    void collect(std::vector<ad::Param*>& out);

private:
    EnhanceConfig cfg_;
    ad::Param lift_w_, lift_b_;
    ad::Param guid_w_, guid_b_;
    std::vector<BlockParams> blocks_;
};

// Concatenates a projected text embedding onto each class token and runs
// linear-attention blocks over the class axis per pixel (no positional
// encoding over classes). All row-level ops are order-safe, so jointly
// permuting (slices, text rows) permutes the output exactly.
class ClassEnhancer {
public:
    ClassEnhancer(const EnhanceConfig& cfg, int text_dim, Rng& rng);

    // slices: k nodes of (h*w x embed_dim); text: (k x text_dim).
    // Returns k enhanced slices of the same shape.
    std::vector<ad::Node*> forward(ad::Ctx& ctx, const std::vector<ad::Node*>& slices, ad::Node* text,
                                   int hw);

    void collect(std::vector<ad::Param*>& out);

private:
    EnhanceConfig cfg_;
    ad::Param tproj_w_, tproj_b_;  // text_dim -> embed_dim
    ad::Param in_w_, in_b_;        // 2*embed_dim -> embed_dim
    std::vector<BlockParams> blocks_;
};

}  // namespace attrseg
