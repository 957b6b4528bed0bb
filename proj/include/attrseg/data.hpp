#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "attrseg/autodiff.hpp"

namespace attrseg {

enum class Shape { Circle, Square, Triangle, Ring };
enum class Texture { Solid, Striped, Dotted };

std::string shape_token(Shape s);
Shape parse_shape(const std::string& token);
std::string texture_token(Texture t);
Texture parse_texture(const std::string& token);

struct SynthClass {
    std::string name;
    std::array<uint8_t, 3> rgb;
    Shape shape;
    Texture texture;
};

struct SyntheticSpec {
    std::vector<SynthClass> classes;   // attribute tuples must be pairwise distinct
    int image_size = 64;
    int min_objects = 2, max_objects = 4;
    uint64_t seed = 7;
    std::vector<std::string> unseen;   // subset of class names, held out of train masks

    void validate() const;
};

// The bundled 5-class benchmark: four seen classes plus one unseen class
// whose (color, shape, texture) tuple recombines attribute values that all
// appear among the seen classes.
SyntheticSpec default_spec();

struct Sample {
    ad::Mat image;            // (h*w x 3) in [0,1]
    std::vector<int> mask;    // h*w labels; 255 = ignore
    int h = 0, w = 0;
    std::string id;
};

struct Split {
    std::vector<Sample> samples;
    std::vector<std::string> classes;   // global class order
    std::vector<int> unseen_indices;    // indices into classes
};

struct Dataset {
    Split train;  // unseen-class pixels relabeled to 255
    Split val;    // full labels
    SyntheticSpec spec;
};

Dataset generate_dataset(const SyntheticSpec& spec, int n_train, int n_val);

// Directory layout: images/<id>.png, masks/<id>.png, classes.txt (one name
// per line), split.json (ids per split, unseen names, spec echo, seed).
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// One class name per line; blank lines skipped, surrounding whitespace trimmed.
std::vector<std::string> read_class_list(const std::string& path);

// Generic ingestion: every image in images_dir must have a mask in masks_dir
// with the same stem; masks are single-channel indices with 255 = ignore.
Split load_external(const std::string& images_dir, const std::string& masks_dir,
                    const std::string& classes_file);

// Mirror a sample horizontally (used for train-time augmentation).
Sample hflip(const Sample& s);

}  // namespace attrseg
