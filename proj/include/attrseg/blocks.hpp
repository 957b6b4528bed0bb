#pragma once

#include <string>
#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

// Parameter bundles for pre-norm transformer blocks, shared by the text
// encoder, both image encoders, and the two cost-volume enhancement stages.

struct AttnParams {
    ad::Param q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;

    void init(Rng& rng, int dim, const std::string& prefix);
    void collect(std::vector<ad::Param*>& out);
};

struct BlockParams {
    ad::Param ln1_g, ln1_b;
    AttnParams attn;
    ad::Param ln2_g, ln2_b;
    ad::Param mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    void init(Rng& rng, int dim, int mlp_hidden, const std::string& prefix);
    void collect(std::vector<ad::Param*>& out);
};

// x + MHA(LN(x)) followed by x + MLP(LN(x)); attention over the given row
// groups with softmax heads.
ad::Node* block_forward_mha(ad::Ctx& ctx, ad::Node* x, BlockParams& p,
                            const std::vector<std::vector<int>>& groups, int heads);

// Same residual structure with softmax-free linear attention over consecutive
// row groups of group_size. Every linear is computed row-by-row so the block
// is bit-exact under within-group row permutation.
ad::Node* block_forward_linatt(ad::Ctx& ctx, ad::Node* x, BlockParams& p, int group_size);

// Weight init: N(0, 1/sqrt(fan_in)) for linear maps, zero biases, LN at (1, 0).
ad::Mat init_linear(Rng& rng, int in_dim, int out_dim);

// Row groups covering an h x w grid with square windows of side `window`,
// clipped at the edges (equivalent to zero-padding to a window multiple and
// masking the pad tokens out of the softmax).
std::vector<std::vector<int>> window_groups(int h, int w, int window);

// One group holding every row index [0, n).
std::vector<std::vector<int>> full_group(int n);

}  // namespace attrseg
