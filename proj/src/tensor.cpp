#include "mmret/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mmret {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    size_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(n, 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

int Tensor::rows() const {
    if (shape.size() != 2) throw DimensionError("rows() on non-matrix " + shape_str(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw DimensionError("cols() on non-matrix " + shape_str(shape));
    return shape[1];
}

void Tensor::ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw DimensionError("cannot reshape " + shape_str(shape) + " to " + shape_str(new_shape));
    Tensor t = *this;  // shares data, grad and node
    t.shape = std::move(new_shape);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tape::backward(Tensor& loss) {
    if (loss.numel() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape));
    if (!loss.requires_grad) throw StructureError("backward() on a tensor with no gradient path");
    loss.ensure_grad();
    (*loss.grad)[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

}  // namespace mmret
