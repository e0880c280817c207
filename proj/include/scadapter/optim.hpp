#pragma once

#include <map>
#include <string>

#include "scadapter/parameters.hpp"

namespace scadapter {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);

// Updates only parameters that currently require gradients and hold one.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);

    void step(ParameterStore& params);
    long steps_taken() const noexcept { return t_; }

private:
    struct Moments {
        Eigen::MatrixXd m, v;
    };

    OptimizerKind kind_;
    double lr_;
    long t_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace scadapter
