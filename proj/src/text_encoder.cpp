#include "scadapter/text_encoder.hpp"

#include <cctype>
#include <cmath>

#include "scadapter/errors.hpp"
#include "scadapter/rng.hpp"

namespace scadapter {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

HashTextEncoder::HashTextEncoder(Eigen::Index token_dim, Eigen::Index embed_dim, std::uint64_t seed)
    : token_dim_(token_dim), embed_dim_(embed_dim), seed_(seed) {
    if (token_dim < 1 || embed_dim < 1) throw ConfigError("text encoder dimensions must be positive");
}

std::string HashTextEncoder::id() const {
    return "hash-text/v1/d" + std::to_string(token_dim_) + "/e" + std::to_string(embed_dim_) + "/seed=" +
           std::to_string(seed_);
}

std::vector<std::string> HashTextEncoder::words(const std::string& prompt) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : prompt) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    if (out.size() > kMaxWords) out.resize(kMaxWords);
    return out;
}

Eigen::VectorXd HashTextEncoder::word_vector(const std::string& word, Eigen::Index dim, std::uint64_t stream) const {
    Rng rng(fnv1a(word) ^ (seed_ * 0x9e3779b97f4a7c15ULL) ^ stream);
    return rng.normal_vector(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
}

Eigen::MatrixXd HashTextEncoder::prompt_tokens(const std::string& prompt) const {
    const auto ws = words(prompt);
    Eigen::MatrixXd tokens(static_cast<Eigen::Index>(ws.size()) + 1, token_dim_);
    tokens.row(0) = word_vector("<bos>", token_dim_, 1).transpose();
    for (std::size_t i = 0; i < ws.size(); ++i)
        tokens.row(static_cast<Eigen::Index>(i) + 1) = word_vector(ws[i], token_dim_, 1).transpose();
    return tokens;
}

Eigen::VectorXd HashTextEncoder::pooled(const std::string& prompt) const {
    Eigen::VectorXd sum = word_vector("<bos>", embed_dim_, 2);
    for (const auto& w : words(prompt)) sum += word_vector(w, embed_dim_, 2);
    return sum;
}

}  // namespace scadapter
