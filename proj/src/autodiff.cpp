#include "scadapter/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "scadapter/errors.hpp"

namespace scadapter::ad {

namespace {

Var make(MatrixXd value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw InputError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(MatrixXd value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var parameter(MatrixXd value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

void backward(const Var& loss) {
    if (loss->value.size() != 1) throw InputError("backward() requires a scalar loss");
    if (!loss->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; recursion depth would scale with graph depth.
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->accumulate(MatrixXd::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows()) throw InputError("matmul: inner dimension mismatch");
    return make(a->value * b->value, {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad * b->value.transpose());
        if (b->requires_grad) b->accumulate(a->value.transpose() * self.grad);
    });
}

Var matmul_transposed(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.cols()) throw InputError("matmul_transposed: inner dimension mismatch");
    return make(a->value * b->value.transpose(), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad * b->value);
        if (b->requires_grad) b->accumulate(self.grad.transpose() * a->value);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    return make(a->value + b->value, {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) b->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    return make(a->value - b->value, {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) b->accumulate(-self.grad);
    });
}

Var add_row(const Var& a, const Var& row) {
    if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
        throw InputError("add_row: row vector width mismatch");
    MatrixXd out = a->value.rowwise() + row->value.row(0);
    return make(std::move(out), {a, row}, [a, row](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (row->requires_grad) row->accumulate(self.grad.colwise().sum());
    });
}

Var scale(const Var& a, double s) {
    return make(a->value * s, {a}, [a, s](Node& self) { a->accumulate(self.grad * s); });
}

Var silu(const Var& a) {
    const MatrixXd sig = (1.0 + (-a->value.array()).exp()).inverse().matrix();
    MatrixXd out = (a->value.array() * sig.array()).matrix();
    return make(std::move(out), {a}, [a, sig](Node& self) {
        const auto x = a->value.array();
        const auto s = sig.array();
        a->accumulate((self.grad.array() * (s * (1.0 + x * (1.0 - s)))).matrix());
    });
}

Var relu(const Var& a) {
    MatrixXd out = a->value.cwiseMax(0.0);
    return make(std::move(out), {a}, [a](Node& self) {
        a->accumulate((self.grad.array() * (a->value.array() > 0.0).cast<double>()).matrix());
    });
}

Var softmax_rows(const Var& a) {
    MatrixXd out(a->value.rows(), a->value.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double m = a->value.row(r).maxCoeff();
        out.row(r) = (a->value.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return make(out, {a}, [a, out](Node& self) {
        // dL/dx = y * (g - <g, y>) per row
        const Eigen::VectorXd dots = (self.grad.array() * out.array()).rowwise().sum();
        a->accumulate((out.array() * (self.grad.colwise() - dots).array()).matrix());
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw InputError("concat_rows: nothing to concatenate");
    const Eigen::Index cols = parts.front()->value.cols();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != cols) throw InputError("concat_rows: column mismatch");
        rows += p->value.rows();
    }
    MatrixXd out(rows, cols);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleRows(off, p->value.rows()) = p->value;
        off += p->value.rows();
    }
    return make(std::move(out), parts, [parts](Node& self) {
        Eigen::Index o = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) p->accumulate(self.grad.middleRows(o, p->value.rows()));
            o += p->value.rows();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InputError("concat_cols: nothing to concatenate");
    const Eigen::Index rows = parts.front()->value.rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) throw InputError("concat_cols: row mismatch");
        cols += p->value.cols();
    }
    MatrixXd out(rows, cols);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleCols(off, p->value.cols()) = p->value;
        off += p->value.cols();
    }
    return make(std::move(out), parts, [parts](Node& self) {
        Eigen::Index o = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) p->accumulate(self.grad.middleCols(o, p->value.cols()));
            o += p->value.cols();
        }
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a->value.cols()) throw InputError("slice_cols: out of range");
    return make(a->value.middleCols(start, count), {a}, [a, start, count](Node& self) {
        MatrixXd g = MatrixXd::Zero(a->value.rows(), a->value.cols());
        g.middleCols(start, count) = self.grad;
        a->accumulate(g);
    });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    const Eigen::Index ar = a->value.rows(), ac = a->value.cols();
    if (rows * cols != ar * ac) throw InputError("reshape: element count mismatch");
    MatrixXd out(rows, cols);
    for (Eigen::Index k = 0; k < rows * cols; ++k) out(k / cols, k % cols) = a->value(k / ac, k % ac);
    return make(std::move(out), {a}, [a, rows, cols, ar, ac](Node& self) {
        MatrixXd g(ar, ac);
        for (Eigen::Index k = 0; k < rows * cols; ++k) g(k / ac, k % ac) = self.grad(k / cols, k % cols);
        a->accumulate(g);
    });
}

Var im2col3x3(const Var& x, int height, int width) {
    const Eigen::Index c = x->value.cols();
    if (x->value.rows() != static_cast<Eigen::Index>(height) * width) throw InputError("im2col3x3: bad spatial size");
    MatrixXd out = MatrixXd::Zero(x->value.rows(), 9 * c);
    for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx)
            for (int k = 0; k < 9; ++k) {
                const int sy = y + k / 3 - 1, sx = xx + k % 3 - 1;
                if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
                out.block(y * width + xx, k * c, 1, c) = x->value.row(sy * width + sx);
            }
    return make(std::move(out), {x}, [x, height, width, c](Node& self) {
        MatrixXd g = MatrixXd::Zero(x->value.rows(), c);
        for (int y = 0; y < height; ++y)
            for (int xx = 0; xx < width; ++xx)
                for (int k = 0; k < 9; ++k) {
                    const int sy = y + k / 3 - 1, sx = xx + k % 3 - 1;
                    if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
                    g.row(sy * width + sx) += self.grad.block(y * width + xx, k * c, 1, c);
                }
        x->accumulate(g);
    });
}

Var avgpool2(const Var& x, int height, int width) {
    if (height % 2 || width % 2) throw InputError("avgpool2: spatial size must be even");
    if (x->value.rows() != static_cast<Eigen::Index>(height) * width) throw InputError("avgpool2: bad spatial size");
    const int oh = height / 2, ow = width / 2;
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(oh) * ow, x->value.cols());
    for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx) out.row((y / 2) * ow + xx / 2) += 0.25 * x->value.row(y * width + xx);
    return make(std::move(out), {x}, [x, height, width, ow](Node& self) {
        MatrixXd g(x->value.rows(), x->value.cols());
        for (int y = 0; y < height; ++y)
            for (int xx = 0; xx < width; ++xx) g.row(y * width + xx) = 0.25 * self.grad.row((y / 2) * ow + xx / 2);
        x->accumulate(g);
    });
}

Var upsample2(const Var& x, int height, int width) {
    if (x->value.rows() != static_cast<Eigen::Index>(height) * width) throw InputError("upsample2: bad spatial size");
    const int oh = height * 2, ow = width * 2;
    MatrixXd out(static_cast<Eigen::Index>(oh) * ow, x->value.cols());
    for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) out.row(y * ow + xx) = x->value.row((y / 2) * width + xx / 2);
    return make(std::move(out), {x}, [x, width, oh, ow](Node& self) {
        MatrixXd g = MatrixXd::Zero(x->value.rows(), x->value.cols());
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) g.row((y / 2) * width + xx / 2) += self.grad.row(y * ow + xx);
        x->accumulate(g);
    });
}

Var mse(const Var& a, const MatrixXd& target) {
    if (a->value.rows() != target.rows() || a->value.cols() != target.cols()) throw InputError("mse: shape mismatch");
    const MatrixXd diff = a->value - target;
    const double n = static_cast<double>(diff.size());
    MatrixXd out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    return make(std::move(out), {a}, [a, diff, n](Node& self) { a->accumulate(diff * (2.0 * self.grad(0, 0) / n)); });
}

double scalar(const Var& v) {
    if (v->value.size() != 1) throw InputError("scalar(): node is not 1 x 1");
    return v->value(0, 0);
}

}  // namespace scadapter::ad
