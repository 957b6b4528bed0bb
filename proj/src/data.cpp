#include "attrseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "attrseg/loss.hpp"
#include "attrseg/png_io.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string shape_token(Shape s) {
    switch (s) {
        case Shape::Circle: return "circle";
        case Shape::Square: return "square";
        case Shape::Triangle: return "triangle";
        case Shape::Ring: return "ring";
    }
    throw std::logic_error("unreachable shape");
}

Shape parse_shape(const std::string& token) {
    if (token == "circle") return Shape::Circle;
    if (token == "square") return Shape::Square;
    if (token == "triangle") return Shape::Triangle;
    if (token == "ring") return Shape::Ring;
    throw std::invalid_argument("unknown shape: " + token);
}

std::string texture_token(Texture t) {
    switch (t) {
        case Texture::Solid: return "solid";
        case Texture::Striped: return "striped";
        case Texture::Dotted: return "dotted";
    }
    throw std::logic_error("unreachable texture");
}

Texture parse_texture(const std::string& token) {
    if (token == "solid") return Texture::Solid;
    if (token == "striped") return Texture::Striped;
    if (token == "dotted") return Texture::Dotted;
    throw std::invalid_argument("unknown texture: " + token);
}

void SyntheticSpec::validate() const {
    if (classes.empty()) throw std::invalid_argument("spec has no classes");
    if (image_size < 16) throw std::invalid_argument("image size too small");
    if (min_objects < 1 || max_objects < min_objects)
        throw std::invalid_argument("bad object count range");
    std::set<std::tuple<uint8_t, uint8_t, uint8_t, int, int>> tuples;
    std::set<std::string> names;
    for (const SynthClass& c : classes) {
        if (!names.insert(c.name).second) throw std::invalid_argument("duplicate class name: " + c.name);
        if (!tuples.insert({c.rgb[0], c.rgb[1], c.rgb[2], static_cast<int>(c.shape),
                            static_cast<int>(c.texture)})
                 .second)
            throw std::invalid_argument("duplicate attribute tuple for class: " + c.name);
    }
    for (const std::string& u : unseen)
        if (!names.count(u)) throw std::invalid_argument("unseen class not in class list: " + u);
}

SyntheticSpec default_spec() {
    // Every attribute of the held-out "red ring" is trained through at least
    // two other classes: red appears on two non-ring shapes, the ring shape
    // appears in two non-red colors, and the solid texture appears on two
    // classes. Nothing about red can be explained by ring-ness (or the other
    // way round), so recognizing the held-out class is pure recombination.
    SyntheticSpec spec;
    spec.classes = {
        {"red circle", {200, 44, 44}, Shape::Circle, Texture::Solid},
        {"red triangle", {200, 44, 44}, Shape::Triangle, Texture::Striped},
        {"blue ring", {44, 84, 208}, Shape::Ring, Texture::Dotted},
        {"green ring", {40, 176, 72}, Shape::Ring, Texture::Solid},
        {"red ring", {200, 44, 44}, Shape::Ring, Texture::Solid},
    };
    spec.unseen = {"red ring"};
    return spec;
}

namespace {

struct PlacedBox {
    int x0, y0, x1, y1;
};

bool overlaps(const PlacedBox& a, const PlacedBox& b) {
    return a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1;
}

bool inside_shape(Shape shape, int dx, int dy, int r) {
    switch (shape) {
        case Shape::Circle: return dx * dx + dy * dy <= r * r;
        case Shape::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
        case Shape::Triangle: {
            if (dy < -r || dy > r) return false;
            const double half = static_cast<double>(r) * (dy + r) / (2.0 * r);
            return std::abs(dx) <= half;
        }
        case Shape::Ring: {
            const int d2 = dx * dx + dy * dy;
            const int inner = static_cast<int>(std::lround(0.55 * r));
            return d2 <= r * r && d2 >= inner * inner;
        }
    }
    return false;
}

bool dark_texel(Texture tex, int x, int y) {
    switch (tex) {
        case Texture::Solid: return false;
        case Texture::Striped: return ((x + y) / 3) % 2 == 1;
        case Texture::Dotted: return (x % 5) < 2 && (y % 5) < 2;
    }
    return false;
}

Sample render_image(const SyntheticSpec& spec, uint64_t image_seed, const std::string& id) {
    Rng rng(image_seed);
    const int S = spec.image_size;
    const int k = static_cast<int>(spec.classes.size());

    std::vector<uint8_t> pix(static_cast<size_t>(S) * S * 3);
    for (size_t i = 0; i < pix.size(); ++i) pix[i] = 18;
    std::vector<int> mask(static_cast<size_t>(S) * S, kIgnoreLabel);

    const int n_objects = spec.min_objects + static_cast<int>(rng.below(
                              static_cast<uint32_t>(spec.max_objects - spec.min_objects + 1)));
    std::vector<PlacedBox> boxes;
    int placed = 0;
    for (int obj = 0; obj < n_objects; ++obj) {
        bool ok = false;
        for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
            const int r_max = std::min(12, (S - 4) / 2);
            const int r_min = std::min(7, r_max);
            const int r = r_min + static_cast<int>(rng.below(static_cast<uint32_t>(r_max - r_min + 1)));
            const int cx = r + 1 + static_cast<int>(rng.below(static_cast<uint32_t>(S - 2 * r - 2)));
            const int cy = r + 1 + static_cast<int>(rng.below(static_cast<uint32_t>(S - 2 * r - 2)));
            const int cls = static_cast<int>(rng.below(static_cast<uint32_t>(k)));
            PlacedBox box{cx - r - 1, cy - r - 1, cx + r + 1, cy + r + 1};
            bool clash = false;
            for (const PlacedBox& b : boxes) clash = clash || overlaps(box, b);
            if (clash) continue;

            const SynthClass& c = spec.classes[static_cast<size_t>(cls)];
            int jit[3];
            for (int ch = 0; ch < 3; ++ch)
                jit[ch] = static_cast<int>(rng.below(17)) - 8;  // per-object color jitter +-8
            for (int y = cy - r; y <= cy + r; ++y) {
                for (int x = cx - r; x <= cx + r; ++x) {
                    if (!inside_shape(c.shape, x - cx, y - cy, r)) continue;
                    const bool dark = dark_texel(c.texture, x, y);
                    for (int ch = 0; ch < 3; ++ch) {
                        int v = c.rgb[static_cast<size_t>(ch)] + jit[ch];
                        if (dark) v = static_cast<int>(std::lround(0.35 * v));
                        pix[(static_cast<size_t>(y) * S + x) * 3 + static_cast<size_t>(ch)] =
                            static_cast<uint8_t>(std::clamp(v, 0, 255));
                    }
                    mask[static_cast<size_t>(y) * S + x] = cls;
                }
            }
            boxes.push_back(box);
            ok = true;
            ++placed;
        }
    }
    if (placed < n_objects)
        std::cerr << "warning: image " << id << " placed " << placed << " of " << n_objects
                  << " requested objects\n";

    Sample s;
    s.h = s.w = S;
    s.id = id;
    s.mask = std::move(mask);
    s.image = ad::Mat(static_cast<long>(S) * S, 3);
    for (long i = 0; i < s.image.rows(); ++i)
        for (long ch = 0; ch < 3; ++ch)
            s.image(i, ch) = pix[static_cast<size_t>(i) * 3 + static_cast<size_t>(ch)] / 255.0;
    return s;
}

}  // namespace

Dataset generate_dataset(const SyntheticSpec& spec, int n_train, int n_val) {
    spec.validate();
    if (n_train < 1 || n_val < 1) throw std::invalid_argument("need at least one image per split");

    Dataset ds;
    ds.spec = spec;
    std::vector<std::string> classes;
    for (const SynthClass& c : spec.classes) classes.push_back(c.name);
    std::vector<int> unseen_idx;
    for (const std::string& u : spec.unseen)
        unseen_idx.push_back(static_cast<int>(
            std::find(classes.begin(), classes.end(), u) - classes.begin()));

    ds.train.classes = ds.val.classes = classes;
    ds.train.unseen_indices = ds.val.unseen_indices = unseen_idx;

    char buf[32];
    for (int i = 0; i < n_train; ++i) {
        std::snprintf(buf, sizeof buf, "train_%04d", i);
        Sample s = render_image(spec, seed_child(spec.seed, static_cast<uint64_t>(i)), buf);
        for (int& label : s.mask)
            if (label != kIgnoreLabel &&
                std::find(unseen_idx.begin(), unseen_idx.end(), label) != unseen_idx.end())
                label = kIgnoreLabel;
        ds.train.samples.push_back(std::move(s));
    }
    for (int i = 0; i < n_val; ++i) {
        std::snprintf(buf, sizeof buf, "val_%04d", i);
        ds.val.samples.push_back(
            render_image(spec, seed_child(spec.seed, static_cast<uint64_t>(n_train + i)), buf));
    }
    return ds;
}

namespace {

ImageU8 sample_to_png(const Sample& s) {
    ImageU8 img;
    img.width = s.w;
    img.height = s.h;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(s.h) * s.w * 3);
    for (long i = 0; i < s.image.rows(); ++i)
        for (int ch = 0; ch < 3; ++ch)
            img.pixels[static_cast<size_t>(i) * 3 + static_cast<size_t>(ch)] =
                static_cast<uint8_t>(std::lround(s.image(i, ch) * 255.0));
    return img;
}

ImageU8 mask_to_png(const Sample& s) {
    ImageU8 img;
    img.width = s.w;
    img.height = s.h;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(s.h) * s.w);
    for (size_t i = 0; i < s.mask.size(); ++i) {
        const int v = s.mask[i];
        if (v != kIgnoreLabel && (v < 0 || v > 254))
            throw std::out_of_range("mask label out of 8-bit range: " + std::to_string(v));
        img.pixels[i] = static_cast<uint8_t>(v);
    }
    return img;
}

void write_split_samples(const Split& split, const fs::path& dir) {
    for (const Sample& s : split.samples) {
        write_png((dir / "images" / (s.id + ".png")).string(), sample_to_png(s));
        write_png((dir / "masks" / (s.id + ".png")).string(), mask_to_png(s));
    }
}

json spec_to_json(const SyntheticSpec& spec) {
    json classes = json::array();
    for (const SynthClass& c : spec.classes)
        classes.push_back({{"name", c.name},
                           {"rgb", {c.rgb[0], c.rgb[1], c.rgb[2]}},
                           {"shape", shape_token(c.shape)},
                           {"texture", texture_token(c.texture)}});
    return {{"classes", classes},
            {"image_size", spec.image_size},
            {"min_objects", spec.min_objects},
            {"max_objects", spec.max_objects},
            {"seed", spec.seed},
            {"unseen", spec.unseen}};
}

SyntheticSpec spec_from_json(const json& j) {
    SyntheticSpec spec;
    spec.classes.clear();
    for (const json& cj : j.at("classes")) {
        SynthClass c;
        c.name = cj.at("name").get<std::string>();
        const auto rgb = cj.at("rgb").get<std::vector<int>>();
        c.rgb = {static_cast<uint8_t>(rgb.at(0)), static_cast<uint8_t>(rgb.at(1)),
                 static_cast<uint8_t>(rgb.at(2))};
        c.shape = parse_shape(cj.at("shape").get<std::string>());
        c.texture = parse_texture(cj.at("texture").get<std::string>());
        spec.classes.push_back(std::move(c));
    }
    spec.image_size = j.at("image_size").get<int>();
    spec.min_objects = j.at("min_objects").get<int>();
    spec.max_objects = j.at("max_objects").get<int>();
    spec.seed = j.at("seed").get<uint64_t>();
    spec.unseen = j.at("unseen").get<std::vector<std::string>>();
    return spec;
}

Sample load_sample(const fs::path& dir, const std::string& id, int k, const std::string& context) {
    Sample s;
    s.id = id;
    const std::string img_path = (dir / "images" / (id + ".png")).string();
    const std::string mask_path = (dir / "masks" / (id + ".png")).string();
    ImageU8 img = read_png(img_path);
    if (img.channels != 3) throw std::runtime_error("expected an RGB image: " + img_path);
    ImageU8 m = read_png(mask_path);
    if (m.channels != 1) throw std::runtime_error("expected a single-channel mask: " + mask_path);
    if (m.width != img.width || m.height != img.height)
        throw std::runtime_error("mask dimensions do not match image: " + mask_path);
    s.h = img.height;
    s.w = img.width;
    s.image = ad::Mat(static_cast<long>(s.h) * s.w, 3);
    for (long i = 0; i < s.image.rows(); ++i)
        for (int ch = 0; ch < 3; ++ch)
            s.image(i, ch) = img.pixels[static_cast<size_t>(i) * 3 + static_cast<size_t>(ch)] / 255.0;
    s.mask.resize(static_cast<size_t>(s.h) * s.w);
    bool any_evaluable = false;
    for (size_t i = 0; i < s.mask.size(); ++i) {
        const int v = m.pixels[i];
        if (v != kIgnoreLabel && v >= k)
            throw std::runtime_error(context + ": mask " + mask_path + " holds label " +
                                     std::to_string(v) + " but only " + std::to_string(k) +
                                     " classes are listed");
        s.mask[i] = v;
        any_evaluable = any_evaluable || v != kIgnoreLabel;
    }
    if (!any_evaluable) std::cerr << "note: mask is fully ignored: " << mask_path << "\n";
    return s;
}

}  // namespace

std::vector<std::string> read_class_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read class list: " + path);
    std::vector<std::string> classes;
    std::string line;
    while (std::getline(in, line)) {
        const auto is_space = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\r'; };
        while (!line.empty() && is_space(line.back())) line.pop_back();
        size_t start = 0;
        while (start < line.size() && is_space(line[start])) ++start;
        if (start < line.size()) classes.push_back(line.substr(start));
    }
    if (classes.empty()) throw std::runtime_error("class list is empty: " + path);
    return classes;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");

    write_split_samples(ds.train, root);
    write_split_samples(ds.val, root);

    {
        std::ofstream out(root / "classes.txt", std::ios::trunc);
        for (const std::string& name : ds.train.classes) out << name << "\n";
    }
    json split;
    split["seed"] = ds.spec.seed;
    split["image_size"] = ds.spec.image_size;
    split["classes"] = ds.train.classes;
    split["unseen"] = ds.spec.unseen;
    split["spec"] = spec_to_json(ds.spec);
    json train_ids = json::array(), val_ids = json::array();
    for (const Sample& s : ds.train.samples) train_ids.push_back(s.id);
    for (const Sample& s : ds.val.samples) val_ids.push_back(s.id);
    split["train"] = train_ids;
    split["val"] = val_ids;
    std::ofstream out(root / "split.json", std::ios::trunc);
    out << split.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream in(root / "split.json");
    if (!in) throw std::runtime_error("cannot read split file: " + (root / "split.json").string());
    json split;
    in >> split;

    Dataset ds;
    ds.spec = spec_from_json(split.at("spec"));
    const auto classes = split.at("classes").get<std::vector<std::string>>();
    const auto unseen = split.at("unseen").get<std::vector<std::string>>();
    std::vector<int> unseen_idx;
    for (const std::string& u : unseen)
        unseen_idx.push_back(static_cast<int>(
            std::find(classes.begin(), classes.end(), u) - classes.begin()));
    const int k = static_cast<int>(classes.size());

    ds.train.classes = ds.val.classes = classes;
    ds.train.unseen_indices = ds.val.unseen_indices = unseen_idx;
    for (const std::string& id : split.at("train").get<std::vector<std::string>>())
        ds.train.samples.push_back(load_sample(root, id, k, "train split"));
    for (const std::string& id : split.at("val").get<std::vector<std::string>>())
        ds.val.samples.push_back(load_sample(root, id, k, "val split"));
    return ds;
}

Split load_external(const std::string& images_dir, const std::string& masks_dir,
                    const std::string& classes_file) {
    Split split;
    split.classes = read_class_list(classes_file);
    const int k = static_cast<int>(split.classes.size());

    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(images_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw std::runtime_error("no .png images found in " + images_dir);

    std::string errors;
    for (const std::string& stem : stems) {
        const fs::path mask_path = fs::path(masks_dir) / (stem + ".png");
        if (!fs::exists(mask_path)) {
            errors += "missing mask for image '" + stem + "'\n";
            continue;
        }
        try {
            Sample s;
            s.id = stem;
            ImageU8 img = read_png((fs::path(images_dir) / (stem + ".png")).string());
            ImageU8 m = read_png(mask_path.string());
            if (img.channels != 3) throw std::runtime_error("image is not RGB");
            if (m.channels != 1) throw std::runtime_error("mask is not single-channel");
            if (m.width != img.width || m.height != img.height)
                throw std::runtime_error("mask dimensions do not match image");
            s.h = img.height;
            s.w = img.width;
            s.image = ad::Mat(static_cast<long>(s.h) * s.w, 3);
            for (long i = 0; i < s.image.rows(); ++i)
                for (int ch = 0; ch < 3; ++ch)
                    s.image(i, ch) =
                        img.pixels[static_cast<size_t>(i) * 3 + static_cast<size_t>(ch)] / 255.0;
            s.mask.resize(static_cast<size_t>(s.h) * s.w);
            for (size_t i = 0; i < s.mask.size(); ++i) {
                const int v = m.pixels[i];
                if (v != kIgnoreLabel && v >= k)
                    throw std::runtime_error("mask holds label " + std::to_string(v) + " but only " +
                                             std::to_string(k) + " classes are listed");
                s.mask[i] = v;
            }
            split.samples.push_back(std::move(s));
        } catch (const std::exception& e) {
            errors += "file '" + stem + "': " + e.what() + "\n";
        }
    }
    if (!errors.empty()) throw std::runtime_error("external dataset errors:\n" + errors);
    return split;
}

Sample hflip(const Sample& s) {
    Sample out;
    out.h = s.h;
    out.w = s.w;
    out.id = s.id + "#hflip";
    out.image = ad::Mat(s.image.rows(), 3);
    out.mask.resize(s.mask.size());
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            const long src = static_cast<long>(y) * s.w + (s.w - 1 - x);
            const long dst = static_cast<long>(y) * s.w + x;
            out.image.row(dst) = s.image.row(src);
            out.mask[static_cast<size_t>(dst)] = s.mask[static_cast<size_t>(src)];
        }
    return out;
}

}  // namespace attrseg
