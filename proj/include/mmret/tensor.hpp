#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mmret/errors.hpp"

namespace mmret {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense n-dimensional array of f64 in row-major order. Data and gradient
/// buffers are shared: copying a Tensor yields another handle onto the same
/// storage, which is how parameter tying works (two modules holding the same
/// Tensor observe each other's updates).
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // null unless requires_grad
    bool requires_grad = false;
    int node = -1;  // tape node id of the op that produced this, -1 for leaves

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    size_t numel() const { return data ? data->size() : 0; }
    int rows() const;
    int cols() const;

    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }
    double& operator[](size_t i) { return (*data)[i]; }
    double operator[](size_t i) const { return (*data)[i]; }

    /// Allocates (or re-zeroes) the gradient buffer.
    void ensure_grad();
    void zero_grad();

    /// Same storage viewed under a different shape (element count must match).
    Tensor reshaped(Shape new_shape) const;

    bool all_finite() const;
};

/// Append-only record of backward rules. Insertion order is topological
/// order; backward() walks it once in reverse. One tape per training step,
/// rebuilt from scratch each step.
class Tape {
public:
    int record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
        return static_cast<int>(nodes_.size()) - 1;
    }

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse
    /// insertion order. `loss` must be a scalar produced on this tape.
    void backward(Tensor& loss);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

}  // namespace mmret
