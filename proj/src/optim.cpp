#include "scadapter/optim.hpp"

#include <cmath>

#include "scadapter/errors.hpp"

namespace scadapter {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(ParameterStore& params) {
    ++t_;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& p : params.all()) {
        auto& node = *p.var;
        if (!node.requires_grad || node.grad.size() == 0) continue;
        if (kind_ == OptimizerKind::sgd) {
            node.value -= lr_ * node.grad;
            continue;
        }
        auto& mom = state_[p.name];
        if (mom.m.size() == 0) {
            mom.m = Eigen::MatrixXd::Zero(node.value.rows(), node.value.cols());
            mom.v = mom.m;
        }
        mom.m = beta1 * mom.m + (1.0 - beta1) * node.grad;
        mom.v = beta2 * mom.v + (1.0 - beta2) * node.grad.cwiseAbs2();
        node.value.array() -= lr_ * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + eps);
    }
}

}  // namespace scadapter
