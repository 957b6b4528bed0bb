#pragma once

#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

struct DecoderConfig {
    int upsample_stages = 2;
    std::vector<int> stage_channels{32, 24};  // refine width per stage; size >= upsample_stages
    int guid_channels = 16;                   // width of the projected guidance injected per stage
};

// Per class slice (shared weights): repeat `upsample_stages` times
//   2x bilinear upsample -> concat guidance (channel-projected, resampled to
//   the current grid) -> 3x3 conv + GELU
// then a linear head to one logit per class and a bilinear resize to the full
// image resolution. With zero stages the head applies directly.
class Decoder {
public:
    Decoder(const DecoderConfig& cfg, int in_dim, int guidance_dim, Rng& rng);

    // slices: k nodes (h*w x in_dim); guidance: earlier-tap fused maps at
    // (gh*gw x guidance_dim), one per stage, ordered coarse-to-fine.
    // Returns logits (H*W x k).
    ad::Node* forward(ad::Ctx& ctx, const std::vector<ad::Node*>& slices,
                      const std::vector<ad::Node*>& guidance, int h, int w, int gh, int gw, int out_h,
                      int out_w);

    // Learned scale on the residual similarity skip the model adds to the
    // decoder's refinement (keeps raw pixel-text alignment in the logits).
    ad::Param& cost_gain() { return gain_; }

    void collect(std::vector<ad::Param*>& out);

private:
    DecoderConfig cfg_;
    struct Stage {
        ad::Param guid_w, guid_b;  // guidance_dim -> guid_channels
        ad::Param conv_w, conv_b;  // (9 * in) -> out
        int in_ch = 0, out_ch = 0;
    };
    std::vector<Stage> stages_;
    ad::Param head_w_, head_b_;  // last width -> 1
    ad::Param gain_;             // 1x1 scale on the similarity skip
};

}  // namespace attrseg
