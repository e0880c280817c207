#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace scadapter {

// Joint text encoder interface: per-token prompt embeddings for conditioning,
// plus a pooled vector living in the image-embedding space for text alignment.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual std::string id() const = 0;
    virtual Eigen::Index token_dim() const = 0;
    virtual Eigen::Index embed_dim() const = 0;
    virtual Eigen::MatrixXd prompt_tokens(const std::string& prompt) const = 0;
    virtual Eigen::VectorXd pooled(const std::string& prompt) const = 0;
};

// Deterministic hash-seeded embedder. Each lowercase word maps to fixed random
// vectors; the sequence always starts with a begin token so N >= 1. Its pooled
// vector is not semantically aligned with any image encoder: it exists so the
// text-alignment plumbing can be exercised without an external model.
class HashTextEncoder final : public TextEncoder {
public:
    static constexpr std::size_t kMaxWords = 15;

    HashTextEncoder(Eigen::Index token_dim, Eigen::Index embed_dim, std::uint64_t seed = 0);

    std::string id() const override;
    Eigen::Index token_dim() const override { return token_dim_; }
    Eigen::Index embed_dim() const override { return embed_dim_; }
    Eigen::MatrixXd prompt_tokens(const std::string& prompt) const override;
    Eigen::VectorXd pooled(const std::string& prompt) const override;

    static std::vector<std::string> words(const std::string& prompt);

private:
    Eigen::VectorXd word_vector(const std::string& word, Eigen::Index dim, std::uint64_t stream) const;

    Eigen::Index token_dim_;
    Eigen::Index embed_dim_;
    std::uint64_t seed_;
};

}  // namespace scadapter
