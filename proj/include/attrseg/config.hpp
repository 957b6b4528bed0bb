#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "attrseg/fusion.hpp"
#include "attrseg/prompts.hpp"

namespace attrseg {

// One flat run configuration, serialized as a JSON file with fixed sections.
// Unknown keys are rejected so typos fail loudly; the resolved config is
// echoed verbatim into every run's output directory and into checkpoints.
struct RunConfig {
    // data
    std::string data_root;

    // prompts
    std::string bank_path;
    AttributeKind attribute = AttributeKind::Comprehensive;

    // encoders
    int image_size = 64;
    int clip_patch = 8, clip_dim = 96, clip_depth = 12, clip_heads = 4;
    std::vector<int> clip_taps{4, 8, 12};
    int sam_patch = 8, sam_dim = 96, sam_depth = 12, sam_heads = 4;
    int text_vocab = 1024, text_context = 77, text_dim = 96, text_depth = 4, text_heads = 4;
    int mlp_ratio = 2;

    // fusion
    FusionStrategy fusion = FusionStrategy::Weighted;

    // enhancement + decoder
    bool enh_spatial = true, enh_class = true;
    int embed_dim = 48, window = 4, enh_heads = 4, spatial_blocks = 1, class_blocks = 1;
    int upsample_stages = 2;
    std::vector<int> stage_channels{32, 24};
    int guid_channels = 16;

    // training
    double lr = 2e-4;
    double weight_decay = 1e-4;
    int batch_size = 4;
    int iterations = 2000;
    unsigned long long seed = 1;
    std::string policy = "full";
    bool text_trainable = true;  // text tower body; its projection head always trains

    std::string output_dir = "out";

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);  // rejects unknown keys
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;
    void validate() const;
};

// Enhancement ablation modes, mapped onto the two boolean flags.
std::string enhancement_token(bool spatial, bool cls);
void parse_enhancement(const std::string& token, bool& spatial, bool& cls);

}  // namespace attrseg
