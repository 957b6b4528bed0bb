#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace attrseg {

enum class AttributeKind { Color, ShapeSize, TextureMaterial, Comprehensive, NameOnly };

// Short tokens used in config files, the CLI, and the bank file.
std::string attribute_token(AttributeKind kind);
AttributeKind parse_attribute(const std::string& token);

// The query sent to the language model for one class/attribute pair.
// NameOnly is a fixed template and never queries a model; asking for its
// query is an error.
std::string build_attribute_query(const std::string& class_name, AttributeKind attribute);

// The NameOnly template: "a photo of a {class}".
std::string name_template(const std::string& class_name);

struct ClassDescription {
    std::string class_name;
    AttributeKind attribute = AttributeKind::Comprehensive;
    std::string text;
    enum class Source { LLM, Fixture, Template };
    Source source = Source::LLM;
    std::string created_at;  // ISO-8601 UTC; in-memory only, not serialized
};

std::string source_token(ClassDescription::Source s);
ClassDescription::Source parse_source(const std::string& token);

// A description bank: at most one entry per (class, attribute). The canonical
// serialization is a TSV, one record per line
//   class_name <TAB> attribute <TAB> source <TAB> text
// sorted by (class_name, attribute token); bank_hash is the SHA-256 of those
// bytes. Files written by this module are always canonical, so the digest of
// the file equals the digest of the set.
struct ClassDescriptionSet {
    std::map<std::pair<std::string, std::string>, ClassDescription> entries;  // key: (class, attr token)

    bool has(const std::string& class_name, AttributeKind a) const;
    const ClassDescription& get(const std::string& class_name, AttributeKind a) const;  // throws if missing
    void put(ClassDescription d);
    std::string serialize() const;
};

// SHA-256 hex digest of the canonical serialization. Errors on an empty set.
std::string bank_digest(const ClassDescriptionSet& set);

ClassDescriptionSet parse_bank(const std::string& bytes);
ClassDescriptionSet load_bank(const std::string& path);            // throws on unreadable/malformed
void save_bank(const ClassDescriptionSet& set, const std::string& path);  // canonical, atomic

class LLMClient {
public:
    virtual ~LLMClient() = default;
    virtual std::string query(const std::string& prompt) = 0;
    virtual std::string identity() const = 0;
};

// Deterministic in-process client: replies come from a fixed table keyed by
// the exact query string. Unknown queries get an empty reply (which callers
// treat as a failure). Covers the bundled synthetic dataset classes plus four
// reference classes used as golden tests.
class FixtureClient : public LLMClient {
public:
    FixtureClient();
    std::string query(const std::string& prompt) override;
    std::string identity() const override { return "fixture"; }
    int calls() const { return calls_; }

private:
    std::map<std::string, std::string> table_;
    int calls_ = 0;
};

// POSTs the query as a plain-text body to `endpoint`; the response body is
// the reply. Endpoint form: http://host:port/path
class HttpClient : public LLMClient {
public:
    explicit HttpClient(std::string endpoint) : endpoint_(std::move(endpoint)) {}
    std::string query(const std::string& prompt) override;
    std::string identity() const override { return "http:" + endpoint_; }

private:
    std::string endpoint_;
};

// Ensures the bank at cache_path covers every (class, attribute) pair,
// querying the client only for misses, and persists the updated bank. The
// returned set is the full bank (possibly holding other classes/attributes
// from earlier runs) together with its digest. Replies are cleaned up: outer
// whitespace trimmed, inner whitespace collapsed, at most two sentences kept,
// hard-truncated to the text-encoder token budget.
struct GenerateResult {
    ClassDescriptionSet set;
    std::string bank_hash;
    int client_calls = 0;
};
GenerateResult generate_descriptions(const std::vector<std::string>& class_names,
                                     AttributeKind attribute, LLMClient& client,
                                     const std::string& cache_path, int retries = 2,
                                     int token_budget = 77);

}  // namespace attrseg
