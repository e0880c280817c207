#include <gtest/gtest.h>

#include "scadapter/autodiff.hpp"
#include "test_support.hpp"

using namespace scadapter;
using scadapter::test::all_entries;
using scadapter::test::max_gradient_error;

namespace {

struct OpCase {
    const char* name;
    int rows, cols;
    std::function<ad::Var(const ad::Var&)> op;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
    const auto& c = GetParam();
    Rng rng(42);
    auto x = ad::parameter(rng.normal_matrix(c.rows, c.cols));
    const Eigen::MatrixXd probe = c.op(ad::constant(x->value))->value;
    const Eigen::MatrixXd target = rng.normal_matrix(probe.rows(), probe.cols());
    auto loss = [&] { return ad::mse(c.op(x), target); };
    EXPECT_LT(max_gradient_error(x, loss, all_entries(x)), 1e-6) << c.name;
}

const Eigen::MatrixXd kRight = Rng(7).normal_matrix(5, 4);
const Eigen::MatrixXd kRow = Rng(8).normal_matrix(1, 5);

INSTANTIATE_TEST_SUITE_P(
    Ops, OpGradient,
    ::testing::Values(
        OpCase{"matmul", 3, 5, [](const ad::Var& x) { return ad::matmul(x, ad::constant(kRight)); }},
        OpCase{"matmul_transposed", 3, 4,
               [](const ad::Var& x) { return ad::matmul_transposed(x, ad::constant(kRight)); }},
        OpCase{"matmul_transposed_rhs", 2, 4,
               [](const ad::Var& x) { return ad::matmul_transposed(ad::constant(kRight), x); }},
        OpCase{"add_sub", 3, 5, [](const ad::Var& x) { return ad::sub(ad::add(x, x), ad::scale(x, 0.5)); }},
        OpCase{"add_row", 3, 5, [](const ad::Var& x) { return ad::add_row(x, ad::constant(kRow)); }},
        OpCase{"add_row_rhs", 1, 5,
               [](const ad::Var& x) { return ad::add_row(ad::constant(Eigen::MatrixXd::Ones(4, 5)), x); }},
        OpCase{"silu", 3, 4, [](const ad::Var& x) { return ad::silu(x); }},
        OpCase{"softmax_rows", 3, 4, [](const ad::Var& x) { return ad::softmax_rows(x); }},
        OpCase{"concat_rows", 2, 3, [](const ad::Var& x) { return ad::concat_rows({x, ad::scale(x, 2.0)}); }},
        OpCase{"concat_cols", 2, 3, [](const ad::Var& x) { return ad::concat_cols({x, ad::silu(x)}); }},
        OpCase{"slice_cols", 3, 6, [](const ad::Var& x) { return ad::slice_cols(x, 2, 3); }},
        OpCase{"reshape", 4, 6, [](const ad::Var& x) { return ad::reshape(x, 3, 8); }},
        OpCase{"im2col3x3", 16, 2, [](const ad::Var& x) { return ad::im2col3x3(x, 4, 4); }},
        OpCase{"avgpool2", 16, 3, [](const ad::Var& x) { return ad::avgpool2(x, 4, 4); }},
        OpCase{"upsample2", 4, 3, [](const ad::Var& x) { return ad::upsample2(x, 2, 2); }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

TEST(Autodiff, ReluGradientAwayFromKink) {
    Eigen::MatrixXd v(2, 3);
    v << -1.0, 0.5, 2.0, -0.3, 0.7, -2.0;
    auto x = ad::parameter(v);
    const Eigen::MatrixXd target = Eigen::MatrixXd::Zero(2, 3);
    EXPECT_LT(max_gradient_error(x, [&] { return ad::mse(ad::relu(x), target); }, all_entries(x)), 1e-6);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
    auto x = ad::parameter(Eigen::MatrixXd::Constant(1, 1, 3.0));
    auto y = ad::add(x, x);  // loss = y^2, dloss/dx = 2y * 2
    ad::backward(ad::mse(y, Eigen::MatrixXd::Zero(1, 1)));
    EXPECT_DOUBLE_EQ(x->grad(0, 0), 2.0 * 6.0 * 2.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
    auto c = ad::constant(Eigen::MatrixXd::Ones(2, 2));
    auto p = ad::parameter(Eigen::MatrixXd::Ones(2, 2));
    ad::backward(ad::mse(ad::matmul(c, p), Eigen::MatrixXd::Zero(2, 2)));
    EXPECT_EQ(c->grad.size(), 0);
    EXPECT_EQ(p->grad.size(), 4);
}

TEST(Autodiff, Im2colMatchesDirectConvolution) {
    Rng rng(3);
    const int h = 3, w = 4, cin = 2, cout = 3;
    const Eigen::MatrixXd x = rng.normal_matrix(h * w, cin);
    const Eigen::MatrixXd k = rng.normal_matrix(9 * cin, cout);
    const Eigen::MatrixXd got = ad::matmul(ad::im2col3x3(ad::constant(x), h, w), ad::constant(k))->value;
    // Zero-padded 3x3 correlation; kernel rows ordered (dy, dx, channel).
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            for (int o = 0; o < cout; ++o) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xs = xx + dx;
                        if (yy < 0 || yy >= h || xs < 0 || xs >= w) continue;
                        for (int ci = 0; ci < cin; ++ci)
                            s += x(yy * w + xs, ci) * k(((dy + 1) * 3 + (dx + 1)) * cin + ci, o);
                    }
                EXPECT_NEAR(got(y * w + xx, o), s, 1e-12);
            }
}

}  // namespace
