#pragma once

#include <cstdint>
#include <vector>

#include "trustgan/tensor.hpp"

namespace trustgan {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected adaptive moment estimation over a fixed parameter list.
/// Parameters that received no gradient in a pass are treated as having a
/// zero gradient.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config = {});

    /// Clears every parameter gradient. Call before each forward/backward pass.
    void zero_grad();
    void step();

    std::uint64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    /// Replaces moment buffers; shapes must match the parameter list exactly.
    void set_state(std::vector<std::vector<double>> first, std::vector<std::vector<double>> second,
                   std::uint64_t step);

private:
    std::vector<Tensor> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t step_ = 0;
};

}  // namespace trustgan
