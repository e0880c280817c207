#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

// Minimal reverse-mode differentiation over dense double matrices. Graph nodes
// keep their parents alive; backward() topologically sorts from the loss.
// Nodes whose inputs never require a gradient keep no parents, so inference
// graphs are released as they go out of scope.
namespace scadapter::ad {

using Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    MatrixXd value;
    MatrixXd grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const MatrixXd& g) {
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
};

Var constant(MatrixXd value);
Var parameter(MatrixXd value);

// Seeds d(loss)/d(loss) = 1 and propagates into every reachable node's grad.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // row (1 x cols) broadcast over a's rows
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

// Row-major reinterpretation: out(i, j) = flat(i * cols + j) where flat walks a row-major.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

// Spatial ops over (height*width) x channels feature maps, rows ordered y * width + x.
Var im2col3x3(const Var& x, int height, int width);
Var avgpool2(const Var& x, int height, int width);
Var upsample2(const Var& x, int height, int width);

// Mean of squared differences against a constant target; returns a 1 x 1 node.
Var mse(const Var& a, const MatrixXd& target);

double scalar(const Var& v);

}  // namespace scadapter::ad
