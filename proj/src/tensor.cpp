// SPDX-License-Identifier: Apache-2.0

#include "remoe/tensor.hpp"

#include <sstream>

namespace remoe {

std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

TensorPtr Tensor::leaf(std::vector<std::size_t> shape) {
    auto t = std::make_shared<Tensor>();
    const std::size_t n = numel(shape);
    t->shape = std::move(shape);
    t->value.assign(n, 0.0);
    t->grad.assign(n, 0.0);
    t->requires_grad = true;
    return t;
}

TensorPtr Tensor::constant(std::vector<std::size_t> shape, std::vector<double> v) {
    if (numel(shape) != v.size())
        throw DimensionError("constant: shape " + shape_str(shape) + " does not match data length");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->value = std::move(v);
    t->requires_grad = false;
    return t;
}

TensorPtr Tape::make(std::vector<std::size_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    const std::size_t n = numel(shape);
    t->shape = std::move(shape);
    t->value.assign(n, 0.0);
    if (requires_grad) t->grad.assign(n, 0.0);
    t->requires_grad = requires_grad;
    return t;
}

void Tape::backward(const TensorPtr& root) {
    if (!root || root->size() != 1)
        throw UsageError("Tape::backward: root must be a scalar tensor");
    if (!root->requires_grad)
        throw UsageError("Tape::backward: root does not require grad");
    root->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace remoe
