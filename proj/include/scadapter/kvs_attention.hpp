#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "scadapter/autodiff.hpp"
#include "scadapter/extractor.hpp"
#include "scadapter/rng.hpp"

namespace scadapter {

enum class TokenKind { prompt, content, style, null_prompt, null_content, null_style };

std::string to_string(TokenKind kind);
bool is_content_stream(TokenKind kind);  // content or its null stand-in
bool is_style_stream(TokenKind kind);    // style or its null stand-in
bool is_prompt_stream(TokenKind kind);

struct TokenSequence {
    Eigen::MatrixXd tokens;  // N x d_token
    TokenKind kind = TokenKind::prompt;

    Eigen::Index count() const noexcept { return tokens.rows(); }
    Eigen::Index dim() const noexcept { return tokens.cols(); }
};

// Projections for one attention block. The style pair may be empty for plain
// cross-attention. Output width d is the shared projection width.
struct AttentionParams {
    Eigen::MatrixXd w_q;    // d_model x d
    Eigen::MatrixXd w_k_p;  // d_token x d
    Eigen::MatrixXd w_v_p;  // d_token x d
    Eigen::MatrixXd w_k_s;  // d_style_token x d
    Eigen::MatrixXd w_v_s;  // d_style_token x d
    int heads = 1;

    Eigen::Index head_dim() const { return w_q.cols() / heads; }
    bool has_style_projections() const noexcept { return w_k_s.size() != 0; }
    void validate() const;

    static AttentionParams random(Eigen::Index d_model, Eigen::Index d_token, Eigen::Index d, Rng& rng,
                                  bool with_style = true, int heads = 1);
};

// Differentiable view of AttentionParams, used inside the UNet.
struct AttentionVars {
    ad::Var w_q, w_k_p, w_v_p, w_k_s, w_v_s;
    int heads = 1;

    static AttentionVars constants(const AttentionParams& p);
};

enum class Nonlinearity { silu, relu, identity };

std::string to_string(Nonlinearity n);
Nonlinearity nonlinearity_from_string(const std::string& name);

// feature (d_embed) -> affine -> nonlinearity -> affine -> reshape to tokens x d_token
struct TokenizerWeights {
    Eigen::MatrixXd w1;  // d_embed x hidden
    Eigen::MatrixXd b1;  // 1 x hidden
    Eigen::MatrixXd w2;  // hidden x (tokens * d_token)
    Eigen::MatrixXd b2;  // 1 x (tokens * d_token)
    Eigen::Index tokens = 1;
    Eigen::Index d_token = 1;
    Nonlinearity nonlinearity = Nonlinearity::silu;

    void validate() const;
    static TokenizerWeights random(Eigen::Index d_embed, Eigen::Index hidden, Eigen::Index tokens,
                                   Eigen::Index d_token, Rng& rng, Nonlinearity nl = Nonlinearity::silu);
};

struct TokenizerVars {
    ad::Var w1, b1, w2, b2;
    Eigen::Index tokens = 1;
    Eigen::Index d_token = 1;
    Nonlinearity nonlinearity = Nonlinearity::silu;
};

// ---- differentiable forms

ad::Var apply_nonlinearity(const ad::Var& x, Nonlinearity n);
ad::Var tokenize(const ad::Var& feature_row, const TokenizerVars& w);
// c_s may be null (no style stream).
ad::Var kvs_attention(const ad::Var& z, const ad::Var& c_p, const ad::Var& c_s, const AttentionVars& p);
ad::Var cross_attention(const ad::Var& z, const ad::Var& c, const AttentionVars& p);

// ---- value forms

template <typename Tag>
TokenSequence tokenize(const FeatureVector<Tag>& feature, const TokenizerWeights& w, TokenKind kind);
TokenSequence tokenize_values(const Eigen::VectorXd& feature, const TokenizerWeights& w, TokenKind kind);

// Output rows = z rows, cols = d. c_s may have zero tokens.
Eigen::MatrixXd kvs_attention(const Eigen::MatrixXd& z, const TokenSequence& c_p, const TokenSequence& c_s,
                              const AttentionParams& params);
Eigen::MatrixXd cross_attention(const Eigen::MatrixXd& z, const TokenSequence& c, const AttentionParams& params);

// Row-stochastic attention weights of the first head, for inspection.
Eigen::MatrixXd attention_weights(const Eigen::MatrixXd& z, const TokenSequence& c_p, const TokenSequence& c_s,
                                  const AttentionParams& params);

template <typename Tag>
TokenSequence tokenize(const FeatureVector<Tag>& feature, const TokenizerWeights& w, TokenKind kind) {
    return tokenize_values(feature.values, w, kind);
}

}  // namespace scadapter
