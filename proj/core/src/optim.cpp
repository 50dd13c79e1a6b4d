#include "hyperx/optim.hpp"

#include <cmath>

#include "hyperx/errors.hpp"

namespace hyperx {

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
        if (!p.defined()) throw ContractError("Adam given an undefined parameter");
        Moments mom;
        mom.m.assign(p.size(), 0.0);
        mom.v.assign(p.size(), 0.0);
        state_.emplace(p.node(), std::move(mom));
    }
}

void Adam::step(double lr) {
    if (lr < 0.0) throw ContractError("Adam step with negative learning rate");
    ++step_;
    double bc1 = 1.0 - std::pow(beta1_, step_);
    double bc2 = 1.0 - std::pow(beta2_, step_);
    for (Tensor& p : params_) {
        if (!p.has_grad()) continue;
        auto it = state_.find(p.node());
        if (it == state_.end()) {
            throw ContractError("Adam has no moment state for a parameter");
        }
        Moments& mom = it->second;
        std::span<const double> g = p.grad();
        std::span<double> w = p.mutable_data();
        for (size_t i = 0; i < g.size(); ++i) {
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = mom.m[i] / bc1;
            double vhat = mom.v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace hyperx
