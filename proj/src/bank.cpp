#include "stagerl/bank.hpp"

#include <openssl/evp.h>
#include <unicode/unorm2.h>
#include <unicode/ustring.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace stagerl::bank {

std::string digest_hex(const Digest& d) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : d) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

Digest digest_from_hex(const std::string& hex) {
    if (hex.size() != 64) throw ConfigError("digest hex must be 64 characters");
    Digest d{};
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw ConfigError("invalid hex digit in digest");
    };
    for (std::size_t i = 0; i < 32; ++i)
        d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return d;
}

std::string normalize_question(const std::string& question) {
    std::string trimmed = trim(question);
    bool ascii = std::all_of(trimmed.begin(), trimmed.end(),
                             [](unsigned char c) { return c < 0x80; });
    if (ascii) return trimmed;  // NFC is the identity on ASCII

    UErrorCode status = U_ZERO_ERROR;
    const UNormalizer2* nfc = unorm2_getNFCInstance(&status);
    if (U_FAILURE(status)) return trimmed;

    std::vector<UChar> utf16(trimmed.size() + 1);
    int32_t len16 = 0;
    u_strFromUTF8(utf16.data(), static_cast<int32_t>(utf16.size()), &len16, trimmed.data(),
                  static_cast<int32_t>(trimmed.size()), &status);
    if (U_FAILURE(status)) return trimmed;

    std::vector<UChar> normalized(static_cast<std::size_t>(len16) * 2 + 16);
    int32_t norm_len = unorm2_normalize(nfc, utf16.data(), len16, normalized.data(),
                                        static_cast<int32_t>(normalized.size()), &status);
    if (U_FAILURE(status)) return trimmed;

    std::string out(static_cast<std::size_t>(norm_len) * 4 + 16, '\0');
    int32_t len8 = 0;
    u_strToUTF8(out.data(), static_cast<int32_t>(out.size()), &len8, normalized.data(),
                norm_len, &status);
    if (U_FAILURE(status)) return trimmed;
    out.resize(static_cast<std::size_t>(len8));
    return out;
}

Digest sha256(std::string_view data) {
    Digest out{};
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
    return out;
}

std::vector<double> TrigramEmbedding::embed(const std::string& text) const {
    std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
    std::string padded = "^^" + text + "$$";
    for (std::size_t i = 0; i + 2 < padded.size(); ++i) {
        std::uint64_t h = fnv1a(std::string_view(padded.data() + i, 3));
        double sign = (h >> 62) & 1 ? 1.0 : -1.0;
        v[h % static_cast<std::uint64_t>(dim_)] += sign;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        v[0] = 1.0;  // degenerate input still yields a unit vector
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

BankItem make_bank_item(const EmbeddingProvider& provider, const std::string& question,
                        const std::string& rubrics_text, const std::string& takeaways_text,
                        int created_step) {
    BankItem item;
    item.question = question;
    item.question_hash = question_hash(question);
    item.rubrics_text = rubrics_text;
    item.takeaways_text = takeaways_text;
    item.embedding = provider.embed(normalize_question(question));
    item.created_step = created_step;
    return item;
}

FileOps FileOps::real() {
    FileOps ops;
    ops.write_file = [](const std::string& path, const std::string& data) {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        if (!f) return false;
        bool ok = std::fwrite(data.data(), 1, data.size(), f) == data.size();
        ok = std::fflush(f) == 0 && ok;
        std::fclose(f);
        return ok;
    };
    ops.rename_file = [](const std::string& from, const std::string& to) {
        return std::rename(from.c_str(), to.c_str()) == 0;
    };
    return ops;
}

void RubricBank::insert_or_overwrite(BankItem item) {
    auto hash = item.question_hash;
    items_[hash] = std::move(item);
}

std::optional<BankItem> RubricBank::retrieve_within(const std::string& question) const {
    auto it = items_.find(question_hash(question));
    if (it == items_.end()) return std::nullopt;
    return it->second;
}

std::vector<BankItem> RubricBank::retrieve_cross(const EmbeddingProvider& provider,
                                                 const std::string& question, int k) const {
    if (k < 1) throw ConfigError("retrieval k must be at least 1");
    auto query_hash = question_hash(question);
    auto query_vec = provider.embed(normalize_question(question));

    struct Scored {
        double sim;
        const BankItem* item;
    };
    std::vector<Scored> scored;
    scored.reserve(items_.size());
    for (const auto& [hash, item] : items_) {
        if (hash == query_hash) continue;
        double sim = 0.0;
        std::size_t n = std::min(query_vec.size(), item.embedding.size());
        for (std::size_t i = 0; i < n; ++i) sim += query_vec[i] * item.embedding[i];
        scored.push_back({sim, &item});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        if (a.item->created_step != b.item->created_step)
            return a.item->created_step < b.item->created_step;
        return a.item->question_hash < b.item->question_hash;
    });
    std::vector<BankItem> out;
    for (const auto& s : scored) {
        if (static_cast<int>(out.size()) >= k) break;
        out.push_back(*s.item);
    }
    return out;
}

std::string RubricBank::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["save_every"] = save_every_;
    auto arr = nlohmann::json::array();
    for (const auto& [hash, item] : items_) {
        arr.push_back(nlohmann::json{{"question", item.question},
                                     {"question_hash", digest_hex(hash)},
                                     {"rubrics", item.rubrics_text},
                                     {"takeaways", item.takeaways_text},
                                     {"embedding", item.embedding},
                                     {"created_step", item.created_step}});
    }
    j["items"] = arr;
    return j.dump(2);
}

RubricBank RubricBank::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    if (j.value("version", 0) != 1) throw PersistenceError("unsupported bank version");
    RubricBank bank(j.value("save_every", kDefaultSaveEvery));
    for (const auto& e : j.at("items")) {
        BankItem item;
        item.question = e.at("question").get<std::string>();
        item.question_hash = digest_from_hex(e.at("question_hash").get<std::string>());
        item.rubrics_text = e.at("rubrics").get<std::string>();
        item.takeaways_text = e.at("takeaways").get<std::string>();
        item.embedding = e.at("embedding").get<std::vector<double>>();
        item.created_step = e.at("created_step").get<int>();
        bank.items_[item.question_hash] = std::move(item);
    }
    return bank;
}

void RubricBank::persist(const std::string& path, const FileOps& ops) const {
    std::string tmp = path + ".tmp";
    if (!ops.write_file(tmp, to_json()))
        throw PersistenceError("failed to write bank snapshot: " + tmp);
    if (!ops.rename_file(tmp, path))
        throw PersistenceError("failed to publish bank snapshot: " + path);
}

RubricBank RubricBank::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PersistenceError("cannot open bank snapshot: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

namespace {

constexpr const char* kWithinPreamble =
    "You have attempted this exact question before. Below are the rubrics and "
    "reflections from your previous attempt. Use them to improve your planning "
    "and answering -- avoid past mistakes and build on what worked.";

constexpr const char* kCrossPreamble =
    "Below are rubrics and reflections from similar questions that were "
    "previously analyzed. Use them as reference to guide your planning and "
    "answering -- adapt to the current question's specific needs. Do NOT copy "
    "them verbatim; extract what is relevant and adjust.";

}  // namespace

std::string render_injection(InjectionMode mode, const std::vector<BankItem>& items,
                             const std::string& question) {
    if (items.empty()) return question;
    if (mode == InjectionMode::Within && items.size() > 1)
        throw ConfigError("within-episode injection takes at most one item");

    std::ostringstream out;
    out << "<reference_examples>\n";
    if (mode == InjectionMode::Within) {
        const auto& item = items.front();
        out << kWithinPreamble << "\n\n";
        out << "## Your Previous Attempt on This Question:\n\n";
        out << "### Rubrics:\n" << item.rubrics_text << "\n\n";
        out << "### Takeaways:\n" << item.takeaways_text << "\n";
    } else {
        out << kCrossPreamble << "\n";
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i > 0) out << "\n---\n";
            out << "\n## Similar Question " << (i + 1) << ":\n" << items[i].question
                << "\n\n";
            out << "### Rubrics:\n" << items[i].rubrics_text << "\n\n";
            out << "### Takeaways:\n" << items[i].takeaways_text << "\n";
        }
    }
    out << "</reference_examples>\n\n" << question;
    return out.str();
}

}  // namespace stagerl::bank
