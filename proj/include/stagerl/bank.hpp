#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stagerl/common.hpp"

namespace stagerl::bank {

using Digest = std::array<std::uint8_t, 32>;

std::string digest_hex(const Digest& d);
Digest digest_from_hex(const std::string& hex);

// Unicode NFC plus whitespace trim; no case folding.
std::string normalize_question(const std::string& question);

Digest sha256(std::string_view data);
inline Digest question_hash(const std::string& question) {
    return sha256(normalize_question(question));
}

class EmbeddingProvider {
  public:
    virtual ~EmbeddingProvider() = default;
    virtual int dimension() const = 0;
    virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Deterministic, dependency-free test provider: signed character trigrams
// hashed into a fixed-width vector, L2-normalized.
class TrigramEmbedding : public EmbeddingProvider {
  public:
    explicit TrigramEmbedding(int dimension = 256) : dim_(dimension) {}
    int dimension() const override { return dim_; }
    std::vector<double> embed(const std::string& text) const override;

  private:
    int dim_;
};

struct BankItem {
    std::string question;
    Digest question_hash{};
    std::string rubrics_text;
    std::string takeaways_text;
    std::vector<double> embedding;  // unit L2 norm
    int created_step = 0;
};

BankItem make_bank_item(const EmbeddingProvider& provider, const std::string& question,
                        const std::string& rubrics_text, const std::string& takeaways_text,
                        int created_step);

// Injectable file operations so tests can fail any write boundary.
struct FileOps {
    std::function<bool(const std::string& path, const std::string& data)> write_file;
    std::function<bool(const std::string& from, const std::string& to)> rename_file;

    static FileOps real();
};

class PersistenceError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kDefaultTopK = 2;
inline constexpr int kDefaultSaveEvery = 10;

class RubricBank {
  public:
    explicit RubricBank(int save_every = kDefaultSaveEvery) : save_every_(save_every) {}

    void insert_or_overwrite(BankItem item);

    std::optional<BankItem> retrieve_within(const std::string& question) const;

    // Top-k by inner product, excluding an exact-hash match for the query.
    // Ties break by created_step, then hash bytes.
    std::vector<BankItem> retrieve_cross(const EmbeddingProvider& provider,
                                         const std::string& question, int k) const;

    std::size_t size() const { return items_.size(); }
    bool contains(const Digest& hash) const { return items_.count(hash) > 0; }
    const std::map<Digest, BankItem>& items() const { return items_; }
    int save_every() const { return save_every_; }

    void persist(const std::string& path, const FileOps& ops = FileOps::real()) const;
    static RubricBank load(const std::string& path);

    std::string to_json() const;
    static RubricBank from_json(const std::string& text);

  private:
    std::map<Digest, BankItem> items_;
    int save_every_ = kDefaultSaveEvery;
};

enum class InjectionMode { Within, Cross };

// Renders the reference-examples block for retrieved items, followed by the
// original question. Zero items return the question unchanged.
std::string render_injection(InjectionMode mode, const std::vector<BankItem>& items,
                             const std::string& question);

}  // namespace stagerl::bank
