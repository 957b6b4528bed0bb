#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "attrseg/autodiff.hpp"
#include "attrseg/config.hpp"
#include "attrseg/decoder.hpp"
#include "attrseg/enhancement.hpp"
#include "attrseg/fusion.hpp"
#include "attrseg/text_encoder.hpp"
#include "attrseg/vit.hpp"

namespace attrseg {

// Optional hooks into the intermediate volumes of one forward pass.
struct ForwardTrace {
    ad::Node* raw_cost = nullptr;  // (h*w x k) cosine volume before enhancement
    int grid_h = 0, grid_w = 0;
};

// The full pipeline: dual image encoders -> per-level weighted fusion ->
// cosine cost volume against text embeddings -> spatial/class enhancement ->
// guided upsampling to per-pixel class logits. Class count is not baked into
// any weight, so the same weights evaluate any text vocabulary.
class Model {
public:
    explicit Model(const RunConfig& cfg);

    TextEncoder& text() { return *text_; }
    VitEncoder& clip() { return *clip_; }
    VitEncoder& sam() { return *sam_; }
    Fusion& fusion() { return *fusion_; }
    SpatialEnhancer& spatial() { return *spatial_; }
    ClassEnhancer& cls_enhancer() { return *cls_; }
    Decoder& decoder() { return *decoder_; }
    const RunConfig& config() const { return cfg_; }

    // image: (H*W x 3) in [0,1]; text_emb: (k x D) node from the text encoder.
    // Returns logits (H*W x k).
    ad::Node* forward_image(ad::Ctx& ctx, const ad::Mat& image, ad::Node* text_emb,
                            ForwardTrace* trace = nullptr);

    // Every parameter, in a fixed registration order (checkpoint layout).
    std::vector<ad::Param*> all_params();
    ad::Param* find(const std::string& name);  // nullptr if absent

private:
    RunConfig cfg_;
    std::unique_ptr<TextEncoder> text_;
    std::unique_ptr<VitEncoder> clip_;
    std::unique_ptr<VitEncoder> sam_;
    std::unique_ptr<Fusion> fusion_;
    std::unique_ptr<SpatialEnhancer> spatial_;
    std::unique_ptr<ClassEnhancer> cls_;
    std::unique_ptr<Decoder> decoder_;
};

// Checkpoint container: a magic tag, a JSON header (config echo, prompt-bank
// digest, class order, attribute, iteration count, fusion weight, metrics,
// tensor index), then all parameter values as little-endian doubles.
struct CheckpointMeta {
    RunConfig config;
    std::string bank_hash;
    std::vector<std::string> class_order;  // training (seen) class order
    std::vector<std::string> eval_classes; // full vocabulary at dataset level
    std::string attribute;
    long iteration = 0;
    double fusion_w = 0.5;
    nlohmann::json metrics;
};

void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::string& path);
void load_checkpoint_weights(const std::string& path, Model& model);  // strict names + shapes

}  // namespace attrseg
