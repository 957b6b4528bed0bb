#pragma once

#include <array>
#include <string>
#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/blocks.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

struct VitConfig {
    int image_size = 64;  // square input, pixels
    int patch = 8;
    int dim = 96;
    int depth = 12;
    int heads = 4;
    int mlp_ratio = 2;
    std::array<int, 3> taps{4, 8, 12};  // 1-based block indices; strictly increasing, last == depth

    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
    void validate() const;
};

// Three tap indices for a branch that reads the last three blocks.
std::array<int, 3> last_three_taps(int depth);

// Plain pre-norm ViT over non-overlapping patches (no class token, global
// attention, learnable position embeddings). Exposes the post-block outputs
// at three tap depths as the feature pyramid.
class VitEncoder {
public:
    VitEncoder(const VitConfig& cfg, const std::string& prefix, Rng& rng);

    // image: (H*W x 3) row-major in [0,1]. Returns the patch-token matrix
    // (tokens x 3*patch*patch); rows ordered by patch grid position, entries
    // by (dy, dx, channel).
    static ad::Mat patchify(const ad::Mat& image, int image_size, int patch);

    // Three tap outputs, each (tokens x dim), ordered by tap index.
    std::array<ad::Node*, 3> forward(ad::Ctx& ctx, const ad::Mat& patch_tokens);

    void collect(std::vector<ad::Param*>& out);  // every parameter of the branch
    // Attention sub-projections across all blocks: part is one of "q","k","v","o".
    void collect_attn_part(const std::string& part, std::vector<ad::Param*>& out);

    const VitConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    VitConfig cfg_;
    std::string prefix_;
    ad::Param patch_w_, patch_b_;  // (3*patch*patch) x dim
    ad::Param pos_;                // tokens x dim
    std::vector<BlockParams> blocks_;
};

}  // namespace attrseg
