#include "lgap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "lgap/error.hpp"

namespace lgap {

namespace memory {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t current_bytes() noexcept { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() noexcept { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

void keep_freed_pages() noexcept {
#ifdef __GLIBC__
    constexpr int kOneGiB = 1 << 30;
    mallopt(M_MMAP_THRESHOLD, kOneGiB);
    mallopt(M_TRIM_THRESHOLD, kOneGiB);
#endif
}

namespace detail {
void on_allocate(std::size_t bytes) noexcept {
    const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t peak = g_peak.load(std::memory_order_relaxed);
    while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
}
void on_deallocate(std::size_t bytes) noexcept { g_current.fetch_sub(bytes, std::memory_order_relaxed); }
}  // namespace detail
}  // namespace memory

namespace detail {
void throw_validation(const std::string& what) { throw ValidationError(what); }
void throw_shape(const std::string& what) { throw ShapeError(what); }
}  // namespace detail

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::span<const float> values) : shape_(std::move(shape)) {
    require_shape(values.size() == shape_numel(shape_),
                  "tensor value count " + std::to_string(values.size()) + " does not match shape " +
                      shape_str(shape_));
    data_.assign(values.begin(), values.end());
}

Tensor::Tensor(Shape shape, std::initializer_list<float> values)
    : Tensor(std::move(shape), std::span<const float>(values.begin(), values.size())) {}

std::size_t Tensor::dim(std::size_t axis) const {
    require_shape(axis < shape_.size(), "axis out of range for shape " + shape_str(shape_));
    return shape_[axis];
}

float& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor t = *this;
    return std::move(t).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    require_shape(shape_numel(shape) == numel(),
                  "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
    return std::move(*this);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    require_shape(!shape_.empty() && begin <= end && end <= shape_[0], "row slice out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t stride = shape_[0] ? numel() / shape_[0] : 0;
    return Tensor(std::move(s), std::span<const float>(data_.data() + begin * stride, (end - begin) * stride));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
    require_shape(!shape_.empty(), "gather on scalar tensor");
    Shape s = shape_;
    s[0] = indices.size();
    Tensor out(std::move(s));
    const std::size_t stride = shape_[0] ? numel() / shape_[0] : 0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require_shape(indices[i] < shape_[0], "gather index out of range");
        std::memcpy(out.data() + i * stride, data_.data() + indices[i] * stride, stride * sizeof(float));
    }
    return out;
}

Tensor Tensor::row(std::size_t index) const {
    require_shape(!shape_.empty() && index < shape_[0], "row index out of range");
    Shape s(shape_.begin() + 1, shape_.end());
    const std::size_t stride = numel() / shape_[0];
    return Tensor(std::move(s), std::span<const float>(data_.data() + index * stride, stride));
}

void Tensor::fill(float value) noexcept { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
    require_shape(other.numel() == numel(), "+= size mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

float Tensor::max_abs_diff(const Tensor& other) const {
    require_shape(other.numel() == numel(), "max_abs_diff size mismatch");
    float m = 0.0f;
    for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
    return m;
}

bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
           std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

Tensor stack(std::span<const Tensor> items) {
    require_shape(!items.empty(), "stack of zero tensors");
    Shape s{items.size()};
    s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
    Tensor out(std::move(s));
    const std::size_t stride = items[0].numel();
    for (std::size_t i = 0; i < items.size(); ++i) {
        require_shape(items[i].shape() == items[0].shape(), "stack of mismatched shapes");
        std::memcpy(out.data() + i * stride, items[i].data(), stride * sizeof(float));
    }
    return out;
}

}  // namespace lgap
