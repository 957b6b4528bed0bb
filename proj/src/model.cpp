#include "attrseg/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "attrseg/rng.hpp"

namespace attrseg {

using namespace ad;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

VitConfig clip_config(const RunConfig& c) {
    VitConfig v;
    v.image_size = c.image_size;
    v.patch = c.clip_patch;
    v.dim = c.clip_dim;
    v.depth = c.clip_depth;
    v.heads = c.clip_heads;
    v.mlp_ratio = c.mlp_ratio;
    v.taps = {c.clip_taps[0], c.clip_taps[1], c.clip_taps[2]};
    return v;
}

VitConfig sam_config(const RunConfig& c) {
    VitConfig v;
    v.image_size = c.image_size;
    v.patch = c.sam_patch;
    v.dim = c.sam_dim;
    v.depth = c.sam_depth;
    v.heads = c.sam_heads;
    v.mlp_ratio = c.mlp_ratio;
    v.taps = last_three_taps(c.sam_depth);
    return v;
}

TextEncoderConfig text_config(const RunConfig& c) {
    TextEncoderConfig t;
    t.vocab = c.text_vocab;
    t.context = c.text_context;
    t.dim = c.text_dim;
    t.depth = c.text_depth;
    t.heads = c.text_heads;
    t.mlp_ratio = c.mlp_ratio;
    t.out_dim = c.clip_dim;  // joint embedding dimension D
    return t;
}

EnhanceConfig enhance_config(const RunConfig& c) {
    EnhanceConfig e;
    e.embed_dim = c.embed_dim;
    e.window = c.window;
    e.heads = c.enh_heads;
    e.spatial_blocks = c.spatial_blocks;
    e.class_blocks = c.class_blocks;
    e.spatial = c.enh_spatial;
    e.cls = c.enh_class;
    return e;
}

DecoderConfig decoder_config(const RunConfig& c) {
    DecoderConfig d;
    d.upsample_stages = c.upsample_stages;
    d.stage_channels = c.stage_channels;
    d.guid_channels = c.guid_channels;
    return d;
}

}  // namespace

Model::Model(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    // Each component draws from its own child stream so adding parameters to
    // one component never shifts another component's initialization.
    Rng text_rng(seed_child(cfg.seed, 1));
    Rng clip_rng(seed_child(cfg.seed, 2));
    Rng sam_rng(seed_child(cfg.seed, 3));
    Rng fusion_rng(seed_child(cfg.seed, 4));
    Rng enh_rng(seed_child(cfg.seed, 5));
    Rng dec_rng(seed_child(cfg.seed, 6));

    text_ = std::make_unique<TextEncoder>(text_config(cfg), text_rng);
    clip_ = std::make_unique<VitEncoder>(clip_config(cfg), "clip", clip_rng);
    sam_ = std::make_unique<VitEncoder>(sam_config(cfg), "sam", sam_rng);
    fusion_ = std::make_unique<Fusion>(cfg.fusion, cfg.clip_dim, cfg.sam_dim, 1, fusion_rng);
    spatial_ = std::make_unique<SpatialEnhancer>(enhance_config(cfg), cfg.clip_dim, enh_rng);
    cls_ = std::make_unique<ClassEnhancer>(enhance_config(cfg), cfg.clip_dim, enh_rng);
    decoder_ = std::make_unique<Decoder>(decoder_config(cfg), cfg.embed_dim, cfg.clip_dim, dec_rng);
}

Node* Model::forward_image(Ctx& ctx, const Mat& image, Node* text_emb, ForwardTrace* trace) {
    Tape& t = ctx.tape;
    const int S = cfg_.image_size;
    if (image.rows() != static_cast<long>(S) * S || image.cols() != 3)
        throw std::invalid_argument("image shape does not match configured input size");

    const Mat clip_tokens = VitEncoder::patchify(image, S, cfg_.clip_patch);
    const Mat sam_tokens = VitEncoder::patchify(image, S, cfg_.sam_patch);
    const auto clip_taps = clip_->forward(ctx, clip_tokens);
    const auto sam_taps = sam_->forward(ctx, sam_tokens);

    const int ph = clip_->config().grid(), pw = ph;
    const int sh = sam_->config().grid(), sw = sh;
    std::array<Node*, 3> fused;
    for (int l = 0; l < 3; ++l) {
        Node* aligned = fusion_->align(ctx, sam_taps[static_cast<size_t>(l)], l, sh, sw, ph, pw);
        fused[static_cast<size_t>(l)] = fusion_->fuse(ctx, clip_taps[static_cast<size_t>(l)], aligned);
    }

    Node* cost = cost_map(t, fused[2], text_emb);
    if (trace) {
        trace->raw_cost = cost;
        trace->grid_h = ph;
        trace->grid_w = pw;
    }

    std::vector<Node*> slices = spatial_->forward(ctx, cost, fused[2], ph, pw);
    slices = cls_->forward(ctx, slices, text_emb, ph * pw);
    Node* refined = decoder_->forward(ctx, slices, {fused[0], fused[1]}, ph, pw, ph, pw, S, S);

    // Residual similarity skip: the raw pixel-text cosine, upsampled and
    // scaled by a learned gain, is added to the decoder's refinement. The
    // loss therefore shapes the similarity volume itself, which is the only
    // class-evidence channel that generalizes to classes absent from
    // training. Built slice-wise so class columns stay order-equivariant.
    const int k = static_cast<int>(text_emb->val.rows());
    Node* skip = nullptr;
    for (int n = 0; n < k; ++n) {
        Node* s = bilinear_resize(t, slice_cols(t, cost, n, 1), ph, pw, S, S);
        skip = n == 0 ? s : concat_cols(t, skip, s);
    }
    return add(t, refined, scale_bynode(t, skip, ctx.use(decoder_->cost_gain())));
}

std::vector<Param*> Model::all_params() {
    std::vector<Param*> out;
    text_->collect_body(out);
    text_->collect_proj(out);
    clip_->collect(out);
    sam_->collect(out);
    fusion_->collect(out);
    spatial_->collect(out);
    cls_->collect(out);
    decoder_->collect(out);
    return out;
}

Param* Model::find(const std::string& name) {
    for (Param* p : all_params())
        if (p->name == name) return p;
    return nullptr;
}

namespace {

constexpr char kMagic[4] = {'A', 'T', 'S', 'G'};

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta) {
    json header;
    header["format_version"] = 1;
    header["config"] = meta.config.to_json();
    header["bank_hash"] = meta.bank_hash;
    header["class_order"] = meta.class_order;
    header["eval_classes"] = meta.eval_classes;
    header["attribute"] = meta.attribute;
    header["iteration"] = meta.iteration;
    header["fusion_w"] = meta.fusion_w;
    header["metrics"] = meta.metrics;

    json tensors = json::array();
    uint64_t offset = 0;
    std::vector<Param*> params = model.all_params();
    for (Param* p : params) {
        tensors.push_back({{"name", p->name},
                           {"rows", p->value.rows()},
                           {"cols", p->value.cols()},
                           {"offset", offset}});
        offset += static_cast<uint64_t>(p->value.size()) * sizeof(double);
    }
    header["tensors"] = tensors;

    const std::string head = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
        out.write(kMagic, 4);
        const uint32_t len = static_cast<uint32_t>(head.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(head.data(), static_cast<std::streamsize>(head.size()));
        for (Param* p : params) {
            // Eigen matrices are column-major in memory; serialize row-major
            // so the layout in the file is independent of the math library.
            for (long i = 0; i < p->value.rows(); ++i)
                for (long j = 0; j < p->value.cols(); ++j) {
                    const double v = p->value(i, j);
                    out.write(reinterpret_cast<const char*>(&v), sizeof v);
                }
        }
        if (!out) throw std::runtime_error("short write while saving checkpoint: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot move checkpoint into place: " + path);
}

namespace {

json read_header(std::ifstream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string head(len, '\0');
    in.read(head.data(), len);
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
    return json::parse(head);
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    const json header = read_header(in, path);
    CheckpointMeta meta;
    meta.config = RunConfig::from_json(header.at("config"));
    meta.bank_hash = header.at("bank_hash").get<std::string>();
    meta.class_order = header.at("class_order").get<std::vector<std::string>>();
    if (header.contains("eval_classes"))
        meta.eval_classes = header.at("eval_classes").get<std::vector<std::string>>();
    meta.attribute = header.at("attribute").get<std::string>();
    meta.iteration = header.at("iteration").get<long>();
    meta.fusion_w = header.at("fusion_w").get<double>();
    meta.metrics = header.value("metrics", json::object());
    return meta;
}

void load_checkpoint_weights(const std::string& path, Model& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    const json header = read_header(in, path);
    const std::streampos blob_start = in.tellg();

    std::unordered_map<std::string, Param*> by_name;
    for (Param* p : model.all_params()) by_name[p->name] = p;

    size_t loaded = 0;
    for (const json& tj : header.at("tensors")) {
        const std::string name = tj.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint tensor '" + name + "' has no matching model parameter");
        Param* p = it->second;
        const long rows = tj.at("rows").get<long>(), cols = tj.at("cols").get<long>();
        if (rows != p->value.rows() || cols != p->value.cols())
            throw std::runtime_error("checkpoint tensor '" + name + "' shape mismatch");
        in.seekg(blob_start + static_cast<std::streamoff>(tj.at("offset").get<uint64_t>()));
        for (long i = 0; i < rows; ++i)
            for (long j = 0; j < cols; ++j) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof v);
                p->value(i, j) = v;
            }
        if (!in) throw std::runtime_error("truncated checkpoint blob at tensor '" + name + "'");
        ++loaded;
    }
    if (loaded != by_name.size())
        throw std::runtime_error("checkpoint does not cover every model parameter (" +
                                 std::to_string(loaded) + " of " + std::to_string(by_name.size()) + ")");
}

}  // namespace attrseg
