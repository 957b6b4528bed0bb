#include "attrseg/vit.hpp"

#include <stdexcept>

namespace attrseg {

using namespace ad;

void VitConfig::validate() const {
    if (image_size < 1 || patch < 1 || image_size % patch != 0)
        throw std::invalid_argument("image size must be a positive multiple of patch size");
    if (depth < 1) throw std::invalid_argument("encoder depth must be >= 1");
    if (dim % heads != 0) throw std::invalid_argument("encoder width must be divisible by head count");
    if (!(taps[0] < taps[1] && taps[1] < taps[2]))
        throw std::invalid_argument("tap indices must be strictly increasing");
    if (taps[0] < 1 || taps[2] != depth)
        throw std::invalid_argument("tap indices must lie in [1, depth] with the last tap at the final block");
}

std::array<int, 3> last_three_taps(int depth) {
    if (depth < 3) throw std::invalid_argument("need depth >= 3 for last-three taps");
    return {depth - 2, depth - 1, depth};
}

VitEncoder::VitEncoder(const VitConfig& cfg, const std::string& prefix, Rng& rng)
    : cfg_(cfg), prefix_(prefix) {
    cfg_.validate();
    const int in_dim = 3 * cfg.patch * cfg.patch;
    patch_w_ = Param(prefix + ".patch_embed.w", init_linear(rng, in_dim, cfg.dim));
    patch_b_ = Param(prefix + ".patch_embed.b", Mat::Zero(1, cfg.dim));
    Mat pos(cfg.tokens(), cfg.dim);
    for (long i = 0; i < pos.rows(); ++i)
        for (long j = 0; j < pos.cols(); ++j) pos(i, j) = rng.normal(0.0, 0.02);
    pos_ = Param(prefix + ".pos", std::move(pos));
    blocks_.resize(static_cast<size_t>(cfg.depth));
    for (int b = 0; b < cfg.depth; ++b)
        blocks_[static_cast<size_t>(b)].init(rng, cfg.dim, cfg.dim * cfg.mlp_ratio,
                                             prefix + ".block" + std::to_string(b));
}

Mat VitEncoder::patchify(const Mat& image, int image_size, int patch) {
    if (image.rows() != static_cast<long>(image_size) * image_size || image.cols() != 3)
        throw std::invalid_argument("image must be (size*size x 3) to match the encoder config");
    const int grid = image_size / patch;
    Mat out(static_cast<long>(grid) * grid, 3L * patch * patch);
    for (int py = 0; py < grid; ++py) {
        for (int px = 0; px < grid; ++px) {
            const long row = static_cast<long>(py) * grid + px;
            for (int dy = 0; dy < patch; ++dy) {
                for (int dx = 0; dx < patch; ++dx) {
                    const long src = static_cast<long>(py * patch + dy) * image_size + (px * patch + dx);
                    const long dst = (static_cast<long>(dy) * patch + dx) * 3;
                    out(row, dst + 0) = image(src, 0);
                    out(row, dst + 1) = image(src, 1);
                    out(row, dst + 2) = image(src, 2);
                }
            }
        }
    }
    return out;
}

std::array<Node*, 3> VitEncoder::forward(Ctx& ctx, const Mat& patch_tokens) {
    Tape& t = ctx.tape;
    if (patch_tokens.rows() != cfg_.tokens() || patch_tokens.cols() != 3L * cfg_.patch * cfg_.patch)
        throw std::invalid_argument("patch token shape does not match encoder config");
    Node* x = add(t, linear(t, constant(t, patch_tokens), ctx.use(patch_w_), ctx.use(patch_b_)),
                  ctx.use(pos_));
    const auto groups = full_group(cfg_.tokens());
    std::array<Node*, 3> taps{nullptr, nullptr, nullptr};
    size_t next_tap = 0;
    for (int b = 0; b < cfg_.depth; ++b) {
        x = block_forward_mha(ctx, x, blocks_[static_cast<size_t>(b)], groups, cfg_.heads);
        if (next_tap < 3 && cfg_.taps[next_tap] == b + 1) taps[next_tap++] = x;
    }
    return taps;
}

void VitEncoder::collect(std::vector<Param*>& out) {
    out.push_back(&patch_w_);
    out.push_back(&patch_b_);
    out.push_back(&pos_);
    for (BlockParams& b : blocks_) b.collect(out);
}

void VitEncoder::collect_attn_part(const std::string& part, std::vector<Param*>& out) {
    for (BlockParams& b : blocks_) {
        if (part == "q") {
            out.push_back(&b.attn.q_w);
            out.push_back(&b.attn.q_b);
        } else if (part == "k") {
            out.push_back(&b.attn.k_w);
            out.push_back(&b.attn.k_b);
        } else if (part == "v") {
            out.push_back(&b.attn.v_w);
            out.push_back(&b.attn.v_b);
        } else if (part == "o") {
            out.push_back(&b.attn.o_w);
            out.push_back(&b.attn.o_b);
        } else {
            throw std::invalid_argument("unknown attention part: " + part);
        }
    }
}

}  // namespace attrseg
