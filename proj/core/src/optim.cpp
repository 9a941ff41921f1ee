#include "trustgan/optim.hpp"

#include <cmath>

#include "trustgan/errors.hpp"

namespace trustgan {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    if (!(config_.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0) || !(config_.beta2 > 0.0 && config_.beta2 < 1.0)) {
        throw ConfigError("adam: moment decay rates must lie in (0, 1)");
    }
    if (!(config_.epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (m_[i].size() != params_[i].numel() || v_[i].size() != params_[i].numel()) {
            throw ContractViolation("adam: moment buffer " + std::to_string(i) + " does not match parameter shape " +
                                    shape_to_string(params_[i].shape()));
        }
        if (params_[i].has_grad() && params_[i].grad().size() != params_[i].numel()) {
            throw ContractViolation("adam: gradient size mismatch for parameter " + std::to_string(i));
        }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto grad = p.grad();
        auto values = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = grad.empty() ? 0.0 : grad[k];
            m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
            v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            values[k] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

void Adam::set_state(std::vector<std::vector<double>> first, std::vector<std::vector<double>> second,
                     std::uint64_t step) {
    if (first.size() != params_.size() || second.size() != params_.size()) {
        throw ContractViolation("adam: moment list length does not match parameter count");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (first[i].size() != params_[i].numel() || second[i].size() != params_[i].numel()) {
            throw ContractViolation("adam: moment buffer " + std::to_string(i) + " does not match parameter shape");
        }
    }
    m_ = std::move(first);
    v_ = std::move(second);
    step_ = step;
}

}  // namespace trustgan
