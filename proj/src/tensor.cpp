#include "mapu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mapu {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

void Node::accumulate(std::span<const double> g) {
    auto buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::span<double> Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

void check_finite(const char* op, std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

namespace {

thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    }
    if (data.size() != shape_numel(shape)) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

Tensor make_result_impl(const char* op, Shape shape, std::vector<double> data,
                        std::span<const Tensor> inputs, BackwardFn fn) {
    check_finite(op, data);
    auto node = new_leaf(std::move(shape), std::move(data), false);
    node->op = op;
    if (!t_grad_enabled) return Tensor(node);
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return Tensor(node);
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
    Tape::current().record(node);
    return Tensor(node);
}

}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn fn) {
    return make_result_impl(op, std::move(shape), std::move(data),
                            std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(fn));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
    return make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(fn));
}

}  // namespace detail

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> data(shape_numel(shape), value);
    return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    detail::check_finite("Tensor::from", values);
    return Tensor(detail::new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

void Tensor::check_defined() const {
    if (!node_) throw Error("use of an undefined tensor");
}

const Shape& Tensor::shape() const {
    check_defined();
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("axis out of range for shape " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const {
    check_defined();
    return node_->data.size();
}

std::span<const double> Tensor::data() const {
    check_defined();
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    check_defined();
    if (!node_->is_leaf()) throw TapeError("mutable_data() on a recorded op result");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const {
    check_defined();
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
    check_defined();
    if (!node_->is_leaf()) throw TapeError("set_requires_grad() on a recorded op result");
    node_->requires_grad = flag;
}

bool Tensor::has_grad() const {
    check_defined();
    return !node_->grad.empty();
}

std::vector<double> Tensor::grad() const {
    check_defined();
    if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    check_defined();
    return node_->grad_buffer();
}

void Tensor::zero_grad() {
    check_defined();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const {
    check_defined();
    return node_->is_leaf();
}

const char* Tensor::op_name() const {
    check_defined();
    return node_->op;
}

Tensor Tensor::detach() const {
    check_defined();
    return Tensor(detail::new_leaf(node_->shape, node_->data, false));
}

Tensor Tensor::clone() const {
    check_defined();
    return Tensor(detail::new_leaf(node_->shape, node_->data, node_->requires_grad));
}

// ---- Tape -----------------------------------------------------------------

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::clear() {
    for (auto& rec : records_) {
        rec->backward = nullptr;
        rec->inputs.clear();
        rec->requires_grad = false;  // keeps tape_index so backward() can tell it is stale
    }
    records_.clear();
    ++generation_;
}

void Tape::record(const std::shared_ptr<detail::Node>& node) {
    node->generation = generation_;
    node->tape_index = static_cast<std::int64_t>(records_.size());
    records_.push_back(node);
}

bool grad_enabled() { return detail::t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(detail::t_grad_enabled) { detail::t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
    if (!loss.defined()) throw TapeError("backward() on an undefined tensor");
    if (loss.numel() != 1) {
        throw TapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    auto& tape = Tape::current();
    const auto& root = loss.node();
    if (root->is_leaf()) {
        if (root->requires_grad) root->accumulate(std::vector<double>{1.0});
        return;
    }
    if (root->generation != tape.generation() ||
        static_cast<std::size_t>(root->tape_index) >= tape.size() ||
        tape.records()[static_cast<std::size_t>(root->tape_index)] != root) {
        throw TapeError("backward() on a loss from a cleared tape");
    }
    const auto& recs = tape.records();
    const auto last = static_cast<std::size_t>(root->tape_index);
    for (std::size_t i = 0; i <= last; ++i) std::fill(recs[i]->grad.begin(), recs[i]->grad.end(), 0.0);
    root->grad_buffer()[0] = 1.0;
    for (std::size_t i = last + 1; i-- > 0;) {
        auto& node = *recs[i];
        if (node.grad.empty() || !node.backward) continue;
        node.backward(node);
        for (const auto& in : node.inputs) {
            if (in->requires_grad && !in->grad.empty()) detail::check_finite(node.op, in->grad);
        }
    }
}

}  // namespace mapu
