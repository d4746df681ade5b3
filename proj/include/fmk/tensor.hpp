#ifndef FMK_TENSOR_HPP
#define FMK_TENSOR_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace fmk {

/// Dense n-dimensional array of 32-bit floats, row-major, with an optional
/// gradient buffer of the same length. Shape dimensions are all positive and
/// product(shape) == data.size() at all times.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;
    std::optional<std::vector<float>> grad;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape_);
    Tensor(std::vector<std::size_t> shape_, std::vector<float> data_);

    static Tensor zeros(std::vector<std::size_t> shape_) { return Tensor(std::move(shape_)); }

    std::size_t numel() const { return data.size(); }

    float& at(std::size_t i) { return data[i]; }
    float at(std::size_t i) const { return data[i]; }

    /// Allocate (or reset) the gradient buffer to all zeros.
    void alloc_grad();
    void drop_grad() { grad.reset(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    /// True when every data entry (and grad entry, if present) is finite.
    bool all_finite() const;

    void clamp(float lo, float hi);
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

/// Throws NumericalError mentioning `what` if any entry is non-finite.
void require_finite(const Tensor& t, const char* what);

/// Max absolute componentwise difference; tensors must have equal shape.
float max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace fmk

#endif
