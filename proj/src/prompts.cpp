#include "attrseg/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "attrseg/digest.hpp"
#include "attrseg/tokenizer.hpp"

// httplib pulls in OpenSSL support only when requested; plain HTTP is enough here.
#include "httplib.h"

namespace attrseg {

std::string attribute_token(AttributeKind kind) {
    switch (kind) {
        case AttributeKind::Color: return "color";
        case AttributeKind::ShapeSize: return "shape";
        case AttributeKind::TextureMaterial: return "texture";
        case AttributeKind::Comprehensive: return "comprehensive";
        case AttributeKind::NameOnly: return "name";
    }
    throw std::logic_error("unreachable attribute kind");
}

AttributeKind parse_attribute(const std::string& token) {
    if (token == "color") return AttributeKind::Color;
    if (token == "shape") return AttributeKind::ShapeSize;
    if (token == "texture") return AttributeKind::TextureMaterial;
    if (token == "comprehensive") return AttributeKind::Comprehensive;
    if (token == "name") return AttributeKind::NameOnly;
    throw std::invalid_argument("unknown attribute: " + token);
}

std::string build_attribute_query(const std::string& class_name, AttributeKind attribute) {
    if (class_name.empty()) throw std::invalid_argument("class name is empty");
    switch (attribute) {
        case AttributeKind::Color:
            return "Describe what a " + class_name + " looks like in terms of color?";
        case AttributeKind::ShapeSize:
            return "Describe what a " + class_name + " looks like in terms of shape and size?";
        case AttributeKind::TextureMaterial:
            return "Describe what a " + class_name + " looks like in terms of texture and material?";
        case AttributeKind::Comprehensive:
            return "Describe what a " + class_name +
                   " looks like in one sentence covering color, shape or size, and texture or material.";
        case AttributeKind::NameOnly:
            throw std::invalid_argument("the name-only template needs no language-model query");
    }
    throw std::logic_error("unreachable attribute kind");
}

std::string name_template(const std::string& class_name) {
    if (class_name.empty()) throw std::invalid_argument("class name is empty");
    return "a photo of a " + class_name;
}

std::string source_token(ClassDescription::Source s) {
    switch (s) {
        case ClassDescription::Source::LLM: return "llm";
        case ClassDescription::Source::Fixture: return "fixture";
        case ClassDescription::Source::Template: return "template";
    }
    throw std::logic_error("unreachable source");
}

ClassDescription::Source parse_source(const std::string& token) {
    if (token == "llm") return ClassDescription::Source::LLM;
    if (token == "fixture") return ClassDescription::Source::Fixture;
    if (token == "template") return ClassDescription::Source::Template;
    throw std::invalid_argument("unknown description source: " + token);
}

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool contains_ci(const std::string& haystack, const std::string& needle) {
    return lower(haystack).find(lower(needle)) != std::string::npos;
}

std::string now_iso8601() {
    using namespace std::chrono;
    auto t = system_clock::to_time_t(system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

bool ClassDescriptionSet::has(const std::string& class_name, AttributeKind a) const {
    return entries.count({class_name, attribute_token(a)}) > 0;
}

const ClassDescription& ClassDescriptionSet::get(const std::string& class_name, AttributeKind a) const {
    auto it = entries.find({class_name, attribute_token(a)});
    if (it == entries.end())
        throw std::out_of_range("no description for class '" + class_name + "' with attribute '" +
                                attribute_token(a) + "'");
    return it->second;
}

void ClassDescriptionSet::put(ClassDescription d) {
    if (d.class_name.empty()) throw std::invalid_argument("description has empty class name");
    if (d.text.empty()) throw std::invalid_argument("empty description text for class '" + d.class_name + "'");
    if (d.text.find('\t') != std::string::npos || d.text.find('\n') != std::string::npos)
        throw std::invalid_argument("description text for class '" + d.class_name + "' contains tab/newline");
    if (!contains_ci(d.text, d.class_name))
        throw std::invalid_argument("description for class '" + d.class_name +
                                    "' does not mention the class name: " + d.text);
    entries[{d.class_name, attribute_token(d.attribute)}] = std::move(d);
}

std::string ClassDescriptionSet::serialize() const {
    std::string out;
    for (const auto& [key, d] : entries) {  // std::map iterates in sorted key order
        out += key.first;
        out += '\t';
        out += key.second;
        out += '\t';
        out += source_token(d.source);
        out += '\t';
        out += d.text;
        out += '\n';
    }
    return out;
}

std::string bank_digest(const ClassDescriptionSet& set) {
    if (set.entries.empty()) throw std::invalid_argument("cannot digest an empty description bank");
    return sha256_hex(set.serialize());
}

ClassDescriptionSet parse_bank(const std::string& bytes) {
    ClassDescriptionSet set;
    size_t pos = 0;
    int line_no = 0;
    while (pos < bytes.size()) {
        size_t nl = bytes.find('\n', pos);
        std::string line = bytes.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? bytes.size() : nl + 1;
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t fpos = 0;
        for (int i = 0; i < 3; ++i) {
            size_t tab = line.find('\t', fpos);
            if (tab == std::string::npos)
                throw std::runtime_error("malformed bank line " + std::to_string(line_no) +
                                         ": expected 4 tab-separated fields");
            fields.push_back(line.substr(fpos, tab - fpos));
            fpos = tab + 1;
        }
        fields.push_back(line.substr(fpos));
        ClassDescription d;
        d.class_name = fields[0];
        d.attribute = parse_attribute(fields[1]);
        d.source = parse_source(fields[2]);
        d.text = fields[3];
        if (set.has(d.class_name, d.attribute))
            throw std::runtime_error("duplicate bank entry at line " + std::to_string(line_no) + " for class '" +
                                     d.class_name + "'");
        set.put(std::move(d));
    }
    return set;
}

ClassDescriptionSet load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read description bank: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_bank(ss.str());
}

void save_bank(const ClassDescriptionSet& set, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write description bank: " + tmp);
        out << set.serialize();
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot move description bank into place: " + path);
}

namespace {

struct FixtureRow {
    const char* cls;
    const char* color;
    const char* shape;
    const char* texture;
    const char* comprehensive;
};

// Descriptions for the bundled synthetic classes, written in the same style
// as the reference classes below. The vocabulary is deliberately shared
// across classes (color words, shape words, fill words) so attribute-level
// information transfers between classes.
// The synthetic-class replies are written to a fixed sentence template: every
// description of a given attribute kind has the same word count, with the
// class-specific words in the same slots. Descriptions of classes that share
// an attribute then differ only in the slots where they actually differ,
// which keeps their token sequences aligned position by position — the
// property that lets a class outside the training set borrow the alignment
// its attribute phrases learned through other classes.
constexpr FixtureRow kFixtureRows[] = {
    {"red circle",
     "A red circle is typically seen in a deep red color with an even tone across the surface.",
     "A red circle has a round disc shape with a filled center and a medium size.",
     "A red circle usually has a solid texture with an even unbroken fill over the surface.",
     "A red circle, colored a deep red, features a round disc shape with a filled center and a solid "
     "texture with an even unbroken fill."},
    {"blue square",
     "A blue square is typically seen in a strong blue color with an even tone across the surface.",
     "A blue square has a square box shape with a straight edge and a medium size.",
     "A blue square usually has a solid texture with an even unbroken fill over the surface.",
     "A blue square, colored a strong blue, features a square box shape with a straight edge and a solid "
     "texture with an even unbroken fill."},
    {"red triangle",
     "A red triangle is typically seen in a deep red color with dark stripe bands across the surface.",
     "A red triangle has a pointed triangle shape with a flat base and a medium size.",
     "A red triangle usually has a striped texture with parallel dark band lines over the surface.",
     "A red triangle, colored a deep red, features a pointed triangle shape with a flat base and a striped "
     "texture with parallel dark band lines."},
    {"blue ring",
     "A blue ring is typically seen in a strong blue color with small dark dots across the surface.",
     "A blue ring has a circular ring shape with a hollow center and a medium size.",
     "A blue ring usually has a dotted texture with small dark dot marks over the surface.",
     "A blue ring, colored a strong blue, features a circular ring shape with a hollow center and a dotted "
     "texture with small dark dot marks."},
    {"green ring",
     "A green ring is typically seen in a bright green color with an even tone across the surface.",
     "A green ring has a circular ring shape with a hollow center and a medium size.",
     "A green ring usually has a solid texture with an even unbroken fill over the surface.",
     "A green ring, colored a bright green, features a circular ring shape with a hollow center and a solid "
     "texture with an even unbroken fill."},
    {"red ring",
     "A red ring is typically seen in a deep red color with an even tone across the surface.",
     "A red ring has a circular ring shape with a hollow center and a medium size.",
     "A red ring usually has a solid texture with an even unbroken fill over the surface.",
     "A red ring, colored a deep red, features a circular ring shape with a hollow center and a solid "
     "texture with an even unbroken fill."},
    // Reference classes; replies are fixed verbatim and exercised as golden tests.
    {"bicycle",
     "A bicycle is typically seen in colors like red, blue, black, or silver, with painted metal frames.",
     "A bicycle has a triangular frame, two wheels, handlebars, and a saddle, often with pedals and a chain.",
     "A bicycle usually has a smooth, metal texture for the frame and rubber for the tires, with possible "
     "patterns on the seat and grips.",
     "A bicycle, often in bright colors, features a triangular frame with two wheels and a smooth metal and "
     "rubber texture."},
    {"motorcycle",
     "A motorcycle is typically seen in colors such as black, red, blue, or silver, often with a shiny finish.",
     "A motorcycle has a sleek, compact shape with two wheels, handlebars, a seat, and an engine beneath the "
     "seat.",
     "A motorcycle usually has a smooth, metallic texture for the frame and engine, with rubber tires and "
     "possible leather seats.",
     "A motorcycle, often in bold colors, features a compact shape with a sleek metallic finish and rubber "
     "tires."},
    {"airplane",
     "An airplane is typically seen in colors like white, blue, silver, and often with airline logos.",
     "An airplane has a long, tubular body with wings on either side, a tail fin, and multiple windows along "
     "the fuselage.",
     "An airplane usually has a smooth, metallic texture for the body and wings, with possible painted "
     "markings and glass windows.",
     "An airplane, commonly in white or silver, features a long tubular shape with smooth metallic wings and a "
     "series of windows."},
    {"tie",
     "A tie is typically seen in colors like red, blue, black, and various patterns such as stripes or polka "
     "dots.",
     "A tie has a long, narrow shape that is worn around the neck and drapes down the front of a shirt.",
     "A tie usually has a smooth, silky texture, often made from materials like silk or polyester.",
     "A tie, often in bold or subtle patterns, features a long narrow shape with a smooth silky texture."},
};

}  // namespace

FixtureClient::FixtureClient() {
    for (const FixtureRow& row : kFixtureRows) {
        table_[build_attribute_query(row.cls, AttributeKind::Color)] = row.color;
        table_[build_attribute_query(row.cls, AttributeKind::ShapeSize)] = row.shape;
        table_[build_attribute_query(row.cls, AttributeKind::TextureMaterial)] = row.texture;
        table_[build_attribute_query(row.cls, AttributeKind::Comprehensive)] = row.comprehensive;
    }
}

std::string FixtureClient::query(const std::string& prompt) {
    ++calls_;
    auto it = table_.find(prompt);
    return it == table_.end() ? std::string() : it->second;
}

std::string HttpClient::query(const std::string& prompt) {
    std::string url = endpoint_;
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0) throw std::runtime_error("http client endpoint must start with http://");
    url = url.substr(scheme.size());
    size_t slash = url.find('/');
    std::string host = slash == std::string::npos ? url : url.substr(0, slash);
    std::string path = slash == std::string::npos ? "/" : url.substr(slash);
    httplib::Client cli(("http://" + host).c_str());
    cli.set_read_timeout(30, 0);
    auto res = cli.Post(path.c_str(), prompt, "text/plain");
    if (!res || res->status != 200)
        throw std::runtime_error("language-model endpoint request failed: " + endpoint_);
    return res->body;
}

namespace {

std::string clean_reply(const std::string& reply, const std::string& class_name, int token_budget) {
    // Collapse all whitespace runs to single spaces and trim the ends.
    std::string s;
    bool in_space = false;
    for (unsigned char c : reply) {
        if (std::isspace(c)) {
            in_space = !s.empty();
        } else {
            if (in_space) s.push_back(' ');
            in_space = false;
            s.push_back(static_cast<char>(c));
        }
    }
    // Keep at most the first two sentences.
    int terminators = 0;
    size_t cut = s.size();
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '.' || s[i] == '?' || s[i] == '!') {
            ++terminators;
            if (terminators == 2) {
                cut = i + 1;
                break;
            }
        }
    }
    s = s.substr(0, cut);
    std::string trimmed = truncate_to_token_budget(s, token_budget);
    if (trimmed.size() != s.size())
        std::cerr << "warning: description for '" << class_name << "' truncated to " << token_budget
                  << " encoder tokens\n";
    return trimmed;
}

bool file_exists(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return static_cast<bool>(f);
}

}  // namespace

GenerateResult generate_descriptions(const std::vector<std::string>& class_names, AttributeKind attribute,
                                     LLMClient& client, const std::string& cache_path, int retries,
                                     int token_budget) {
    if (class_names.empty()) throw std::invalid_argument("no class names given");
    std::set<std::string> folded;
    for (const std::string& name : class_names) {
        if (name.empty()) throw std::invalid_argument("empty class name");
        if (!folded.insert(lower(name)).second)
            throw std::invalid_argument("duplicate class name after case folding: " + name);
    }

    GenerateResult result;
    if (file_exists(cache_path)) result.set = load_bank(cache_path);

    bool changed = false;
    for (const std::string& name : class_names) {
        if (result.set.has(name, attribute)) continue;
        ClassDescription d;
        d.class_name = name;
        d.attribute = attribute;
        d.created_at = now_iso8601();
        if (attribute == AttributeKind::NameOnly) {
            d.text = name_template(name);
            d.source = ClassDescription::Source::Template;
        } else {
            const std::string query = build_attribute_query(name, attribute);
            std::string reply;
            for (int attempt = 0; ; ++attempt) {
                try {
                    reply = client.query(query);
                    ++result.client_calls;
                    break;
                } catch (const std::exception& e) {
                    ++result.client_calls;
                    if (attempt >= retries)
                        throw std::runtime_error("language-model query failed for class '" + name +
                                                 "': " + e.what());
                }
            }
            if (reply.empty())
                throw std::runtime_error("language model returned an empty reply for class '" + name + "'");
            d.text = clean_reply(reply, name, token_budget);
            d.source = client.identity() == "fixture" ? ClassDescription::Source::Fixture
                                                      : ClassDescription::Source::LLM;
        }
        result.set.put(std::move(d));
        changed = true;
    }

    if (changed) save_bank(result.set, cache_path);
    result.bank_hash = sha256_file(cache_path);
    return result;
}

}  // namespace attrseg
