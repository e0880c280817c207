#include "scadapter/kvs_attention.hpp"

#include <cmath>

#include "scadapter/errors.hpp"

namespace scadapter {

std::string to_string(TokenKind kind) {
    switch (kind) {
        case TokenKind::prompt: return "prompt";
        case TokenKind::content: return "content";
        case TokenKind::style: return "style";
        case TokenKind::null_prompt: return "null_prompt";
        case TokenKind::null_content: return "null_content";
        case TokenKind::null_style: return "null_style";
    }
    return "unknown";
}

bool is_content_stream(TokenKind k) { return k == TokenKind::content || k == TokenKind::null_content; }
bool is_style_stream(TokenKind k) { return k == TokenKind::style || k == TokenKind::null_style; }
bool is_prompt_stream(TokenKind k) { return k == TokenKind::prompt || k == TokenKind::null_prompt; }

void AttentionParams::validate() const {
    if (w_q.cols() < 1) throw ConfigError("attention head dimension must be >= 1");
    if (heads < 1 || w_q.cols() % heads != 0) throw ConfigError("attention width must divide evenly into heads");
    if (w_k_p.cols() != w_q.cols() || w_v_p.cols() != w_q.cols() || w_v_p.rows() != w_k_p.rows())
        throw ConfigError("prompt key/value projections disagree with the query width");
    if (has_style_projections() &&
        (w_k_s.cols() != w_q.cols() || w_v_s.cols() != w_q.cols() || w_v_s.rows() != w_k_s.rows()))
        throw ConfigError("style key/value projections must project to the same width d");
    if (!w_q.allFinite() || !w_k_p.allFinite() || !w_v_p.allFinite() || !w_k_s.allFinite() || !w_v_s.allFinite())
        throw ConfigError("attention parameters contain non-finite values");
}

AttentionParams AttentionParams::random(Eigen::Index d_model, Eigen::Index d_token, Eigen::Index d, Rng& rng,
                                        bool with_style, int heads) {
    AttentionParams p;
    p.w_q = rng.normal_matrix(d_model, d, 1.0 / std::sqrt(static_cast<double>(d_model)));
    p.w_k_p = rng.normal_matrix(d_token, d, 1.0 / std::sqrt(static_cast<double>(d_token)));
    p.w_v_p = rng.normal_matrix(d_token, d, 1.0 / std::sqrt(static_cast<double>(d_token)));
    if (with_style) {
        p.w_k_s = rng.normal_matrix(d_token, d, 1.0 / std::sqrt(static_cast<double>(d_token)));
        p.w_v_s = rng.normal_matrix(d_token, d, 1.0 / std::sqrt(static_cast<double>(d_token)));
    }
    p.heads = heads;
    return p;
}

AttentionVars AttentionVars::constants(const AttentionParams& p) {
    AttentionVars v;
    v.w_q = ad::constant(p.w_q);
    v.w_k_p = ad::constant(p.w_k_p);
    v.w_v_p = ad::constant(p.w_v_p);
    if (p.has_style_projections()) {
        v.w_k_s = ad::constant(p.w_k_s);
        v.w_v_s = ad::constant(p.w_v_s);
    }
    v.heads = p.heads;
    return v;
}

std::string to_string(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::silu: return "silu";
        case Nonlinearity::relu: return "relu";
        case Nonlinearity::identity: return "identity";
    }
    return "unknown";
}

Nonlinearity nonlinearity_from_string(const std::string& name) {
    if (name == "silu") return Nonlinearity::silu;
    if (name == "relu") return Nonlinearity::relu;
    if (name == "identity") return Nonlinearity::identity;
    throw ConfigError("unknown nonlinearity '" + name + "'");
}

void TokenizerWeights::validate() const {
    if (tokens < 1 || d_token < 1) throw ConfigError("tokenizer must emit at least one token of width >= 1");
    if (b1.rows() != 1 || b1.cols() != w1.cols() || w2.rows() != w1.cols() || w2.cols() != tokens * d_token ||
        b2.rows() != 1 || b2.cols() != w2.cols())
        throw ConfigError("tokenizer layer shapes are inconsistent");
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite())
        throw ConfigError("tokenizer weights contain non-finite values");
}

TokenizerWeights TokenizerWeights::random(Eigen::Index d_embed, Eigen::Index hidden, Eigen::Index tokens,
                                          Eigen::Index d_token, Rng& rng, Nonlinearity nl) {
    TokenizerWeights w;
    w.w1 = rng.normal_matrix(d_embed, hidden, 1.0 / std::sqrt(static_cast<double>(d_embed)));
    w.b1 = Eigen::MatrixXd::Zero(1, hidden);
    w.w2 = rng.normal_matrix(hidden, tokens * d_token, 1.0 / std::sqrt(static_cast<double>(hidden)));
    w.b2 = Eigen::MatrixXd::Zero(1, tokens * d_token);
    w.tokens = tokens;
    w.d_token = d_token;
    w.nonlinearity = nl;
    return w;
}

ad::Var apply_nonlinearity(const ad::Var& x, Nonlinearity n) {
    switch (n) {
        case Nonlinearity::silu: return ad::silu(x);
        case Nonlinearity::relu: return ad::relu(x);
        case Nonlinearity::identity: return x;
    }
    return x;
}

ad::Var tokenize(const ad::Var& feature_row, const TokenizerVars& w) {
    if (feature_row->value.rows() != 1 || feature_row->value.cols() != w.w1->value.rows())
        throw ConfigError("tokenizer expects a feature of length " + std::to_string(w.w1->value.rows()) + ", got " +
                          std::to_string(feature_row->value.size()));
    auto h = apply_nonlinearity(ad::add_row(ad::matmul(feature_row, w.w1), w.b1), w.nonlinearity);
    auto flat = ad::add_row(ad::matmul(h, w.w2), w.b2);
    return ad::reshape(flat, w.tokens, w.d_token);
}

ad::Var kvs_attention(const ad::Var& z, const ad::Var& c_p, const ad::Var& c_s, const AttentionVars& p) {
    if (z->value.cols() != p.w_q->value.rows())
        throw InputError("attention: query features have width " + std::to_string(z->value.cols()) + ", expected " +
                         std::to_string(p.w_q->value.rows()));
    if (c_p->value.cols() != p.w_k_p->value.rows())
        throw InputError("attention: prompt tokens have width " + std::to_string(c_p->value.cols()) + ", expected " +
                         std::to_string(p.w_k_p->value.rows()));
    const bool with_style = c_s && c_s->value.rows() > 0;
    if (with_style) {
        if (!p.w_k_s) throw InputError("attention: style tokens given to a block without style projections");
        if (c_s->value.cols() != p.w_k_s->value.rows())
            throw InputError("attention: style tokens have width " + std::to_string(c_s->value.cols()) +
                             ", expected " + std::to_string(p.w_k_s->value.rows()));
    }
    auto q = ad::matmul(z, p.w_q);
    auto k = ad::matmul(c_p, p.w_k_p);
    auto v = ad::matmul(c_p, p.w_v_p);
    if (with_style) {
        k = ad::concat_rows({k, ad::matmul(c_s, p.w_k_s)});
        v = ad::concat_rows({v, ad::matmul(c_s, p.w_v_s)});
    }
    const Eigen::Index d = q->value.cols();
    if (p.heads == 1) {
        auto logits = ad::scale(ad::matmul_transposed(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
        return ad::matmul(ad::softmax_rows(logits), v);
    }
    const Eigen::Index dh = d / p.heads;
    std::vector<ad::Var> outs;
    for (int h = 0; h < p.heads; ++h) {
        auto qh = ad::slice_cols(q, h * dh, dh);
        auto kh = ad::slice_cols(k, h * dh, dh);
        auto vh = ad::slice_cols(v, h * dh, dh);
        auto logits = ad::scale(ad::matmul_transposed(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        outs.push_back(ad::matmul(ad::softmax_rows(logits), vh));
    }
    return ad::concat_cols(outs);
}

ad::Var cross_attention(const ad::Var& z, const ad::Var& c, const AttentionVars& p) {
    return kvs_attention(z, c, nullptr, p);
}

TokenSequence tokenize_values(const Eigen::VectorXd& feature, const TokenizerWeights& w, TokenKind kind) {
    w.validate();
    TokenizerVars vars{ad::constant(w.w1), ad::constant(w.b1), ad::constant(w.w2), ad::constant(w.b2),
                       w.tokens,           w.d_token,          w.nonlinearity};
    return {tokenize(ad::constant(feature.transpose()), vars)->value, kind};
}

Eigen::MatrixXd kvs_attention(const Eigen::MatrixXd& z, const TokenSequence& c_p, const TokenSequence& c_s,
                              const AttentionParams& params) {
    params.validate();
    if (c_p.count() < 1) throw InputError("attention needs at least one prompt token");
    auto vars = AttentionVars::constants(params);
    ad::Var style = c_s.count() > 0 ? ad::constant(c_s.tokens) : nullptr;
    return kvs_attention(ad::constant(z), ad::constant(c_p.tokens), style, vars)->value;
}

Eigen::MatrixXd cross_attention(const Eigen::MatrixXd& z, const TokenSequence& c, const AttentionParams& params) {
    return kvs_attention(z, c, TokenSequence{Eigen::MatrixXd(0, c.dim()), TokenKind::style}, params);
}

Eigen::MatrixXd attention_weights(const Eigen::MatrixXd& z, const TokenSequence& c_p, const TokenSequence& c_s,
                                  const AttentionParams& params) {
    params.validate();
    const Eigen::Index dh = params.head_dim();
    Eigen::MatrixXd q = (z * params.w_q).leftCols(dh);
    Eigen::MatrixXd k(c_p.count() + c_s.count(), dh);
    k.topRows(c_p.count()) = (c_p.tokens * params.w_k_p).leftCols(dh);
    if (c_s.count() > 0) k.bottomRows(c_s.count()) = (c_s.tokens * params.w_k_s).leftCols(dh);
    auto logits = ad::constant((q * k.transpose()) / std::sqrt(static_cast<double>(dh)));
    return ad::softmax_rows(logits)->value;
}

}  // namespace scadapter
