#pragma once

#include <string>
#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/blocks.hpp"
#include "attrseg/prompts.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

struct TextEncoderConfig {
    int vocab = 1024;    // hashed word vocabulary; ids 0/1 reserved for bos/eos
    int context = 77;    // maximum sequence length including bos/eos
    int dim = 96;        // transformer width
    int depth = 4;
    int heads = 4;
    int mlp_ratio = 2;
    int out_dim = 96;    // joint embedding dimension D
};

// Small bidirectional transformer over hashed word tokens with end-token
// pooling and a linear projection into the joint embedding space. The
// projection is a separate head so fine-tuning policies can keep it trainable
// while freezing or thawing the body independently.
class TextEncoder {
public:
    TextEncoder(const TextEncoderConfig& cfg, Rng& rng);

    // 1 x out_dim embedding of one description.
    ad::Node* encode_one(ad::Ctx& ctx, const std::string& text);

    // k x out_dim matrix, one row per class in class_order, using each class's
    // description of `attribute` from the bank. Rows are computed per class
    // with shared weights, so permuting class_order permutes rows exactly.
    ad::Node* encode_classes(ad::Ctx& ctx, const ClassDescriptionSet& bank,
                             const std::vector<std::string>& class_order, AttributeKind attribute);

    void collect_body(std::vector<ad::Param*>& out);  // embeddings + blocks + final norm
    void collect_proj(std::vector<ad::Param*>& out);  // output projection head

    const TextEncoderConfig& config() const { return cfg_; }

private:
    TextEncoderConfig cfg_;
    ad::Param tok_embed_;  // vocab x dim
    ad::Param pos_;        // context x dim
    std::vector<BlockParams> blocks_;
    ad::Param lnf_g_, lnf_b_;
    ad::Param proj_w_, proj_b_;
};

}  // namespace attrseg
