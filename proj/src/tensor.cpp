#include "fmk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fmk/errors.hpp"

namespace fmk {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape_) : shape(std::move(shape_)) {
    for (std::size_t d : shape)
        if (d == 0) throw ArgumentError("tensor dimension must be positive, got shape " + shape_str(shape));
    data.assign(shape_numel(shape), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    for (std::size_t d : shape)
        if (d == 0) throw ArgumentError("tensor dimension must be positive, got shape " + shape_str(shape));
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
}

void Tensor::alloc_grad() {
    grad.emplace(data.size(), 0.0f);
}

bool Tensor::all_finite() const {
    auto fin = [](float v) { return std::isfinite(v); };
    if (!std::all_of(data.begin(), data.end(), fin)) return false;
    if (grad && !std::all_of(grad->begin(), grad->end(), fin)) return false;
    return true;
}

void Tensor::clamp(float lo, float hi) {
    for (float& v : data) v = std::min(hi, std::max(lo, v));
}

void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw NumericalError(std::string("non-finite values in ") + what);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    float m = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace fmk
