#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trustgan/random.hpp"

namespace trustgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> inputs;
    // Accumulates this node's grad into the grads of `inputs`.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Handle to a dense row-major array of doubles that can participate in the
/// gradient tape. Copies share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor uniform(Shape shape, double low, double high, Rng& rng, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Mutable view; intended for leaves (parameters, inputs). Mutating an
    /// interior node invalidates any tape recorded through it.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    /// Empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    bool has_grad() const;
    void zero_grad();

    /// Reverse-mode pass from a scalar (shape [] or [1]). Leaf gradients
    /// accumulate; interior gradients are reset first.
    void backward() const;

    /// Deep copy of values as a new leaf with the same requires_grad flag.
    Tensor clone() const;
    /// New leaf sharing no tape with this tensor and not requiring grad.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    // Used by operator implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

}  // namespace trustgan
