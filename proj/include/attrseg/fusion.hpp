#pragma once

#include <array>
#include <string>
#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

enum class FusionStrategy { Weighted, Concat, Attention };

std::string fusion_token(FusionStrategy s);
FusionStrategy parse_fusion(const std::string& token);

enum class CostStage { Raw, SpatialEnhanced, ClassEnhanced };

// A concrete (h*w x k) similarity volume, used at export boundaries; the
// training path keeps the tape node instead.
struct CostVolume {
    ad::Mat values;  // h*w rows, k columns
    int h = 0, w = 0;
    std::vector<std::string> class_order;
    CostStage stage = CostStage::Raw;
};

// Combines the two encoder branches per tap level. The secondary branch is
// first passed through a per-level channel-alignment linear map and, when the
// grids differ, bilinearly resampled onto the primary grid. The weighted
// strategy is out = w * f_primary + (1 - w) * f_secondary with a single
// learnable scalar w shared across levels, initialized to 0.5 and free to
// leave [0, 1] during optimization.
class Fusion {
public:
    Fusion(FusionStrategy strategy, int primary_dim, int secondary_dim, int heads, Rng& rng);

    // Channel-align (and if needed resample) one secondary-branch tap.
    ad::Node* align(ad::Ctx& ctx, ad::Node* f_s, int level, int sh, int sw, int ph, int pw);

    // Fuse one level. Shapes must already agree.
    ad::Node* fuse(ad::Ctx& ctx, ad::Node* f_p, ad::Node* f_s_aligned);

    double weight_value() const { return w_.value(0, 0); }
    ad::Param& weight() { return w_; }
    FusionStrategy strategy() const { return strategy_; }

    void collect(std::vector<ad::Param*>& out);

private:
    FusionStrategy strategy_;
    int heads_;
    ad::Param w_;  // 1x1, "fusion.w"
    std::array<ad::Param, 3> align_w_, align_b_;
    ad::Param concat_w_, concat_b_;                       // Concat strategy: 2D -> D
    ad::Param aq_w_, aq_b_, ak_w_, ak_b_, av_w_, av_b_, ao_w_, ao_b_;  // Attention strategy
};

// cosine(f_row, t_row) for all pairs: (P x D) x (k x D) -> (P x k), with
// eps = 1e-8 added to each norm so exact-zero vectors score 0.
ad::Node* cost_map(ad::Tape& t, ad::Node* fused, ad::Node* text);

}  // namespace attrseg
