#include "attrseg/text_encoder.hpp"

#include <stdexcept>

#include "attrseg/tokenizer.hpp"

namespace attrseg {

using namespace ad;

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.vocab < 3) throw std::invalid_argument("text vocab must be >= 3");
    if (cfg.context < 3) throw std::invalid_argument("text context must be >= 3");
    Mat emb(cfg.vocab, cfg.dim);
    for (long i = 0; i < emb.rows(); ++i)
        for (long j = 0; j < emb.cols(); ++j) emb(i, j) = rng.normal(0.0, 0.02);
    tok_embed_ = Param("text.tok_embed", std::move(emb));
    Mat pos(cfg.context, cfg.dim);
    for (long i = 0; i < pos.rows(); ++i)
        for (long j = 0; j < pos.cols(); ++j) pos(i, j) = rng.normal(0.0, 0.02);
    pos_ = Param("text.pos", std::move(pos));
    blocks_.resize(static_cast<size_t>(cfg.depth));
    // The end token is the same token in every description, so everything the
    // pooled embedding knows about a text arrives through attention reads.
    // Starting the query/key maps near zero makes those reads uniform
    // averages, and depth-scaling the residual outputs keeps the stream close
    // to the embedding sum, so an untrained tower already embeds a
    // description as an affine image of its bag of phrases. Descriptions that
    // share attribute phrases then start (and, trained gently, stay) nearby,
    // which is what lets a class never seen in training inherit the pixel
    // alignment its attributes earned through other classes.
    const double read_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.depth));
    for (int b = 0; b < cfg.depth; ++b) {
        BlockParams& blk = blocks_[static_cast<size_t>(b)];
        blk.init(rng, cfg.dim, cfg.dim * cfg.mlp_ratio, "text.block" + std::to_string(b));
        blk.attn.q_w.value *= 0.05;
        blk.attn.k_w.value *= 0.05;
        blk.attn.o_w.value *= read_gain;
        blk.mlp_w2.value *= read_gain;
    }
    lnf_g_ = Param("text.lnf.g", Mat::Ones(1, cfg.dim));
    lnf_b_ = Param("text.lnf.b", Mat::Zero(1, cfg.dim));
    proj_w_ = Param("text_proj.w", init_linear(rng, cfg.dim, cfg.out_dim));
    proj_b_ = Param("text_proj.b", Mat::Zero(1, cfg.out_dim));
}

Node* TextEncoder::encode_one(Ctx& ctx, const std::string& text) {
    Tape& t = ctx.tape;
    const std::vector<int> ids = token_ids(text, cfg_.vocab, cfg_.context);
    const int n = static_cast<int>(ids.size());
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;

    Node* x = add(t, gather_rows(t, ctx.use(tok_embed_), ids), gather_rows(t, ctx.use(pos_), positions));
    const auto groups = full_group(n);
    for (BlockParams& b : blocks_) x = block_forward_mha(ctx, x, b, groups, cfg_.heads);
    x = layernorm(t, x, ctx.use(lnf_g_), ctx.use(lnf_b_));
    Node* pooled = gather_rows(t, x, {n - 1});  // end-token pooling
    return linear(t, pooled, ctx.use(proj_w_), ctx.use(proj_b_));
}

Node* TextEncoder::encode_classes(Ctx& ctx, const ClassDescriptionSet& bank,
                                  const std::vector<std::string>& class_order, AttributeKind attribute) {
    if (class_order.empty()) throw std::invalid_argument("empty class order");
    std::vector<Node*> rows;
    rows.reserve(class_order.size());
    for (const std::string& name : class_order) {
        const ClassDescription& d = bank.get(name, attribute);  // throws naming the class
        rows.push_back(encode_one(ctx, d.text));
    }
    return rows.size() == 1 ? rows[0] : concat_rows(ctx.tape, rows);
}

void TextEncoder::collect_body(std::vector<Param*>& out) {
    out.push_back(&tok_embed_);
    out.push_back(&pos_);
    for (BlockParams& b : blocks_) b.collect(out);
    out.push_back(&lnf_g_);
    out.push_back(&lnf_b_);
}

void TextEncoder::collect_proj(std::vector<Param*>& out) {
    out.push_back(&proj_w_);
    out.push_back(&proj_b_);
}

}  // namespace attrseg
