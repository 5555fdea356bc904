#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mapu/errors.hpp"

namespace mapu {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One value in the computation graph. Leaves (parameters, inputs) are never on
// the tape; every op result that depends on a gradient-requiring input is.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
    const char* op = "leaf";

    std::uint64_t generation = 0;  // tape generation at recording time
    std::int64_t tape_index = -1;  // -1 for leaves

    bool is_leaf() const { return tape_index < 0; }
    void accumulate(std::span<const double> g);
    std::span<double> grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

/// Handle to a dense row-major float64 array that can take part in reverse-mode
/// differentiation. Copies share storage; use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Writable view; only valid on leaves (parameters and constants).
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    /// Gradient buffer; zeros if nothing has been accumulated yet.
    std::vector<double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    bool is_leaf() const;
    const char* op_name() const;

    /// Same values, cut from the graph.
    Tensor detach() const;
    /// Deep copy of values (and requires_grad flag) as a new leaf.
    Tensor clone() const;

    // internal
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    void check_defined() const;
    std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations for the current thread.
class Tape {
public:
    static Tape& current();

    std::size_t size() const { return records_.size(); }
    std::uint64_t generation() const { return generation_; }

    /// Drops every record; tensors created before the clear can no longer be
    /// differentiated through.
    void clear();

    // internal
    void record(const std::shared_ptr<detail::Node>& node);
    const std::vector<std::shared_ptr<detail::Node>>& records() const { return records_; }

private:
    std::vector<std::shared_ptr<detail::Node>> records_;
    std::uint64_t generation_ = 1;
};

bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Accumulates d(loss)/d(leaf) into every gradient-requiring leaf reachable
/// from `loss`. Leaf gradients accumulate across calls until zeroed.
void backward(const Tensor& loss);

namespace detail {

/// Builds an op result, checks it is finite and records it if any input
/// requires a gradient. `fn` receives the result node with its grad filled.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn fn);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn);

void check_finite(const char* op, std::span<const double> values);

}  // namespace detail

}  // namespace mapu
