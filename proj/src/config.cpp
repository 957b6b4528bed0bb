#include "attrseg/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "attrseg/optim.hpp"

namespace attrseg {

using nlohmann::json;

std::string enhancement_token(bool spatial, bool cls) {
    if (spatial && cls) return "both";
    if (spatial) return "spatial";
    if (cls) return "class";
    return "none";
}

void parse_enhancement(const std::string& token, bool& spatial, bool& cls) {
    if (token == "both") {
        spatial = cls = true;
    } else if (token == "spatial") {
        spatial = true;
        cls = false;
    } else if (token == "class") {
        spatial = false;
        cls = true;
    } else if (token == "none") {
        spatial = cls = false;
    } else {
        throw std::invalid_argument("unknown enhancement mode: " + token);
    }
}

json RunConfig::to_json() const {
    json j;
    j["data"] = {{"root", data_root}};
    j["prompts"] = {{"bank", bank_path}, {"attribute", attribute_token(attribute)}};
    j["encoders"] = {{"image_size", image_size},
                     {"clip_patch", clip_patch},
                     {"clip_dim", clip_dim},
                     {"clip_depth", clip_depth},
                     {"clip_heads", clip_heads},
                     {"clip_taps", clip_taps},
                     {"sam_patch", sam_patch},
                     {"sam_dim", sam_dim},
                     {"sam_depth", sam_depth},
                     {"sam_heads", sam_heads},
                     {"text_vocab", text_vocab},
                     {"text_context", text_context},
                     {"text_dim", text_dim},
                     {"text_depth", text_depth},
                     {"text_heads", text_heads},
                     {"mlp_ratio", mlp_ratio}};
    j["fusion"] = {{"strategy", fusion_token(fusion)}};
    j["enhancement"] = {{"mode", enhancement_token(enh_spatial, enh_class)},
                        {"embed_dim", embed_dim},
                        {"window", window},
                        {"heads", enh_heads},
                        {"spatial_blocks", spatial_blocks},
                        {"class_blocks", class_blocks},
                        {"upsample_stages", upsample_stages},
                        {"stage_channels", stage_channels},
                        {"guid_channels", guid_channels}};
    j["train"] = {{"lr", lr},
                  {"weight_decay", weight_decay},
                  {"batch_size", batch_size},
                  {"iterations", iterations},
                  {"seed", seed},
                  {"policy", policy},
                  {"text_trainable", text_trainable}};
    j["output"] = output_dir;
    return j;
}

namespace {

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& known) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw std::invalid_argument("unknown config key '" + it.key() + "' in section '" + section + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    reject_unknown(j, "(top level)", {"data", "prompts", "encoders", "fusion", "enhancement", "train", "output"});
    if (j.contains("data")) {
        const json& s = j.at("data");
        reject_unknown(s, "data", {"root"});
        read(s, "root", c.data_root);
    }
    if (j.contains("prompts")) {
        const json& s = j.at("prompts");
        reject_unknown(s, "prompts", {"bank", "attribute"});
        read(s, "bank", c.bank_path);
        if (s.contains("attribute")) c.attribute = parse_attribute(s.at("attribute").get<std::string>());
    }
    if (j.contains("encoders")) {
        const json& s = j.at("encoders");
        reject_unknown(s, "encoders",
                       {"image_size", "clip_patch", "clip_dim", "clip_depth", "clip_heads", "clip_taps",
                        "sam_patch", "sam_dim", "sam_depth", "sam_heads", "text_vocab", "text_context",
                        "text_dim", "text_depth", "text_heads", "mlp_ratio"});
        read(s, "image_size", c.image_size);
        read(s, "clip_patch", c.clip_patch);
        read(s, "clip_dim", c.clip_dim);
        read(s, "clip_depth", c.clip_depth);
        read(s, "clip_heads", c.clip_heads);
        read(s, "clip_taps", c.clip_taps);
        read(s, "sam_patch", c.sam_patch);
        read(s, "sam_dim", c.sam_dim);
        read(s, "sam_depth", c.sam_depth);
        read(s, "sam_heads", c.sam_heads);
        read(s, "text_vocab", c.text_vocab);
        read(s, "text_context", c.text_context);
        read(s, "text_dim", c.text_dim);
        read(s, "text_depth", c.text_depth);
        read(s, "text_heads", c.text_heads);
        read(s, "mlp_ratio", c.mlp_ratio);
    }
    if (j.contains("fusion")) {
        const json& s = j.at("fusion");
        reject_unknown(s, "fusion", {"strategy"});
        if (s.contains("strategy")) c.fusion = parse_fusion(s.at("strategy").get<std::string>());
    }
    if (j.contains("enhancement")) {
        const json& s = j.at("enhancement");
        reject_unknown(s, "enhancement",
                       {"mode", "embed_dim", "window", "heads", "spatial_blocks", "class_blocks",
                        "upsample_stages", "stage_channels", "guid_channels"});
        if (s.contains("mode")) parse_enhancement(s.at("mode").get<std::string>(), c.enh_spatial, c.enh_class);
        read(s, "embed_dim", c.embed_dim);
        read(s, "window", c.window);
        read(s, "heads", c.enh_heads);
        read(s, "spatial_blocks", c.spatial_blocks);
        read(s, "class_blocks", c.class_blocks);
        read(s, "upsample_stages", c.upsample_stages);
        read(s, "stage_channels", c.stage_channels);
        read(s, "guid_channels", c.guid_channels);
    }
    if (j.contains("train")) {
        const json& s = j.at("train");
        reject_unknown(s, "train",
                       {"lr", "weight_decay", "batch_size", "iterations", "seed", "policy", "text_trainable"});
        read(s, "lr", c.lr);
        read(s, "weight_decay", c.weight_decay);
        read(s, "batch_size", c.batch_size);
        read(s, "iterations", c.iterations);
        read(s, "seed", c.seed);
        read(s, "policy", c.policy);
        read(s, "text_trainable", c.text_trainable);
    }
    read(j, "output", c.output_dir);
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << to_json().dump(2) << "\n";
}

void RunConfig::validate() const {
    if (lr <= 0) throw std::invalid_argument("lr must be > 0");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (image_size < 1 || clip_patch < 1 || sam_patch < 1)
        throw std::invalid_argument("image and patch sizes must be positive");
    if (image_size % clip_patch != 0 || image_size % sam_patch != 0)
        throw std::invalid_argument("image size must be a multiple of both patch sizes");

    if (clip_dim < 1 || clip_depth < 1 || clip_heads < 1)
        throw std::invalid_argument("clip dim/depth/heads must be positive");
    if (clip_dim % clip_heads != 0)
        throw std::invalid_argument("clip dim must be divisible by its head count");
    if (clip_taps.size() != 3)
        throw std::invalid_argument("exactly three clip tap depths are required");
    for (size_t i = 0; i < clip_taps.size(); ++i) {
        if (clip_taps[i] < 1 || clip_taps[i] > clip_depth)
            throw std::invalid_argument("clip tap depths must lie in [1, depth]");
        if (i > 0 && clip_taps[i] <= clip_taps[i - 1])
            throw std::invalid_argument("clip tap depths must be strictly increasing");
    }
    if (sam_dim < 1 || sam_heads < 1)
        throw std::invalid_argument("sam dim/heads must be positive");
    if (sam_dim % sam_heads != 0)
        throw std::invalid_argument("sam dim must be divisible by its head count");
    if (sam_depth < 3)
        throw std::invalid_argument("sam depth must be >= 3 (its last three layers are tapped)");

    if (text_vocab < 3) throw std::invalid_argument("text vocab must hold bos/eos plus words");
    if (text_context < 3) throw std::invalid_argument("text context must be >= 3");
    if (text_dim < 1 || text_depth < 1 || text_heads < 1)
        throw std::invalid_argument("text dim/depth/heads must be positive");
    if (text_dim % text_heads != 0)
        throw std::invalid_argument("text dim must be divisible by its head count");
    if (mlp_ratio < 1) throw std::invalid_argument("mlp_ratio must be >= 1");

    if (embed_dim < 1 || enh_heads < 1)
        throw std::invalid_argument("embedding dim and enhancement heads must be positive");
    if (embed_dim % enh_heads != 0)
        throw std::invalid_argument("embedding dim must be divisible by the enhancement heads");
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    if (spatial_blocks < 1 || class_blocks < 1)
        throw std::invalid_argument("enhancement block counts must be >= 1");

    if (upsample_stages < 0) throw std::invalid_argument("upsample_stages must be >= 0");
    if (upsample_stages > static_cast<int>(stage_channels.size()))
        throw std::invalid_argument("need one stage channel width per upsample stage");
    for (int ch : stage_channels)
        if (ch < 1) throw std::invalid_argument("stage channel widths must be positive");
    if (guid_channels < 1) throw std::invalid_argument("guid_channels must be >= 1");

    bool policy_known = false;
    for (const std::string& p : known_policies())
        if (p == policy) policy_known = true;
    if (!policy_known) throw std::invalid_argument("unknown finetune policy: " + policy);
}

}  // namespace attrseg
