#include "attrseg/decoder.hpp"

#include <stdexcept>

#include "attrseg/blocks.hpp"

namespace attrseg {

using namespace ad;

Decoder::Decoder(const DecoderConfig& cfg, int in_dim, int guidance_dim, Rng& rng) : cfg_(cfg) {
    if (cfg.upsample_stages < 0) throw std::invalid_argument("upsample stage count must be >= 0");
    if (static_cast<int>(cfg.stage_channels.size()) < cfg.upsample_stages)
        throw std::invalid_argument("need one channel width per upsample stage");
    int cur = in_dim;
    for (int s = 0; s < cfg.upsample_stages; ++s) {
        Stage st;
        st.in_ch = cur + cfg.guid_channels;
        st.out_ch = cfg.stage_channels[static_cast<size_t>(s)];
        const std::string prefix = "decoder.stage" + std::to_string(s);
        st.guid_w = Param(prefix + ".guid.w", init_linear(rng, guidance_dim, cfg.guid_channels));
        st.guid_b = Param(prefix + ".guid.b", Mat::Zero(1, cfg.guid_channels));
        st.conv_w = Param(prefix + ".conv.w", init_linear(rng, 9 * st.in_ch, st.out_ch));
        st.conv_b = Param(prefix + ".conv.b", Mat::Zero(1, st.out_ch));
        cur = st.out_ch;
        stages_.push_back(std::move(st));
    }
    head_w_ = Param("decoder.head.w", init_linear(rng, cur, 1));
    head_b_ = Param("decoder.head.b", Mat::Zero(1, 1));
    gain_ = Param("decoder.cost_gain", 4.0 * Mat::Ones(1, 1));
}

Node* Decoder::forward(Ctx& ctx, const std::vector<Node*>& slices, const std::vector<Node*>& guidance,
                       int h, int w, int gh, int gw, int out_h, int out_w) {
    Tape& t = ctx.tape;
    if (slices.empty()) throw std::invalid_argument("decoder needs at least one class slice");
    if (cfg_.upsample_stages > 0 && guidance.empty())
        throw std::invalid_argument("decoder guidance list is empty but upsampling stages are configured");
    if (cfg_.upsample_stages > 0 && static_cast<int>(guidance.size()) < cfg_.upsample_stages)
        throw std::invalid_argument("decoder needs one guidance level per upsample stage");

    // Project each guidance level once; slices reuse the projected nodes.
    std::vector<Node*> guid_proj(static_cast<size_t>(cfg_.upsample_stages), nullptr);
    for (int s = 0; s < cfg_.upsample_stages; ++s)
        guid_proj[static_cast<size_t>(s)] =
            linear(t, guidance[static_cast<size_t>(s)], ctx.use(stages_[static_cast<size_t>(s)].guid_w),
                   ctx.use(stages_[static_cast<size_t>(s)].guid_b));

    std::vector<Node*> logits_slices;
    logits_slices.reserve(slices.size());
    for (Node* slice : slices) {
        Node* x = slice;
        int ch = h, cw = w;
        for (int s = 0; s < cfg_.upsample_stages; ++s) {
            Stage& st = stages_[static_cast<size_t>(s)];
            x = bilinear_resize(t, x, ch, cw, 2 * ch, 2 * cw);
            ch *= 2;
            cw *= 2;
            Node* g = bilinear_resize(t, guid_proj[static_cast<size_t>(s)], gh, gw, ch, cw);
            x = concat_cols(t, x, g);
            x = gelu(t, linear(t, im2col3x3(t, x, ch, cw), ctx.use(st.conv_w), ctx.use(st.conv_b)));
        }
        Node* logit = linear(t, x, ctx.use(head_w_), ctx.use(head_b_));  // (ch*cw x 1)
        if (ch != out_h || cw != out_w) logit = bilinear_resize(t, logit, ch, cw, out_h, out_w);
        logits_slices.push_back(logit);
    }

    Node* out = logits_slices[0];
    for (size_t n = 1; n < logits_slices.size(); ++n) out = concat_cols(t, out, logits_slices[n]);
    return out;
}

void Decoder::collect(std::vector<Param*>& out) {
    for (Stage& st : stages_) {
        out.push_back(&st.guid_w);
        out.push_back(&st.guid_b);
        out.push_back(&st.conv_w);
        out.push_back(&st.conv_b);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    out.push_back(&gain_);
}

}  // namespace attrseg
