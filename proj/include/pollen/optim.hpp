#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pollen/tensor.hpp"

namespace pollen {

enum class OptimRule { sgd, sgd_momentum, adam };

inline OptimRule optim_rule_from_name(const std::string& name) {
    if (name == "sgd") return OptimRule::sgd;
    if (name == "sgd_momentum" || name == "momentum") return OptimRule::sgd_momentum;
    if (name == "adam") return OptimRule::adam;
    throw ValueError("unknown optimizer '" + name + "' (sgd, sgd_momentum, adam)");
}

// Per-parameter moment buffers plus the update rule. The parameter list is
// fixed at init and indexes the moment buffers.
template <class T>
struct OptimizerState {
    OptimRule rule = OptimRule::adam;
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T momentum = T(0.9);
    int64_t step_count = 0;

    std::vector<std::vector<T>> m1;  // first moment / velocity
    std::vector<std::vector<T>> m2;  // second moment (adam)

    void init(const std::vector<TensorT<T>>& params) {
        m1.assign(params.size(), {});
        m2.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            m1[i].assign(static_cast<size_t>(params[i].numel()), T(0));
            if (rule == OptimRule::adam) m2[i].assign(static_cast<size_t>(params[i].numel()), T(0));
        }
        step_count = 0;
    }

    void step(std::vector<TensorT<T>>& params) {
        ++step_count;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            auto& g = p.grad();
            auto& val = p.data();
            for (size_t i = 0; i < val.size(); ++i) {
                if (!std::isfinite(static_cast<double>(g[i])))
                    throw ValueError("optimizer_step: non-finite gradient in parameter " +
                                     std::to_string(pi) + " ('" + p.node().op + "') at element " +
                                     std::to_string(i));
                switch (rule) {
                    case OptimRule::sgd:
                        val[i] -= lr * g[i];
                        break;
                    case OptimRule::sgd_momentum: {
                        m1[pi][i] = momentum * m1[pi][i] + g[i];
                        val[i] -= lr * m1[pi][i];
                        break;
                    }
                    case OptimRule::adam: {
                        m1[pi][i] = beta1 * m1[pi][i] + (T(1) - beta1) * g[i];
                        m2[pi][i] = beta2 * m2[pi][i] + (T(1) - beta2) * g[i] * g[i];
                        const T mhat = m1[pi][i] / bc1;
                        const T vhat = m2[pi][i] / bc2;
                        val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
                        break;
                    }
                }
            }
        }
    }
};

template <class T>
void zero_grads(std::vector<TensorT<T>>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace pollen
