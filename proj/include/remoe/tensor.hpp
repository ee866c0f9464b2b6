// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors on a define-by-run reverse-mode tape.
// The tape is rebuilt every training step; backward walks the recorded
// nodes in strict reverse creation order and accumulates gradients.
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "remoe/errors.hpp"

namespace remoe {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

std::size_t numel(const std::vector<std::size_t>& shape);

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // same length as value when requires_grad
    bool requires_grad = false;

    std::size_t size() const { return value.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    // Trainable leaf (persists across tapes).
    static TensorPtr leaf(std::vector<std::size_t> shape);
    // Constant tensor; never accumulates grad.
    static TensorPtr constant(std::vector<std::size_t> shape, std::vector<double> v);
};

class Tape {
public:
    TensorPtr make(std::vector<std::size_t> shape, bool requires_grad);
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    // Seeds root (must be scalar) with 1 and runs all nodes in reverse.
    void backward(const TensorPtr& root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace remoe
