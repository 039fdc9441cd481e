#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace lgap {

// Process-wide accounting of bytes held by tensor storage. Benchmarks read the
// peak to compare memory footprints of different inference paths.
namespace memory {

std::size_t current_bytes() noexcept;
std::size_t peak_bytes() noexcept;
void reset_peak() noexcept;

/// Asks the C allocator to keep freed pages instead of returning them to the
/// OS. Training frees and reallocates the same large activation buffers every
/// step; without this, glibc maps and unmaps them each time. No-op elsewhere.
void keep_freed_pages() noexcept;

namespace detail {
void on_allocate(std::size_t bytes) noexcept;
void on_deallocate(std::size_t bytes) noexcept;
}  // namespace detail

}  // namespace memory

template <class T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        auto* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64}));
        memory::detail::on_allocate(n * sizeof(T));
        return p;
    }
    void deallocate(T* p, std::size_t n) noexcept {
        memory::detail::on_deallocate(n * sizeof(T));
        ::operator delete(p, std::align_val_t{64});
    }

    template <class U>
    bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

using Shape = std::vector<std::size_t>;
using Storage = std::vector<float, TrackingAllocator<float>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float tensor with value semantics.
///
/// Image batches use NCHW layout throughout the library.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::span<const float> values);
    Tensor(Shape shape, std::initializer_list<float> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return {data_.data(), data_.size()}; }
    std::span<const float> values() const noexcept { return {data_.data(), data_.size()}; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    /// Same storage contents under a new shape with equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    /// Rows [begin, end) along axis 0.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    /// Gathers the given indices along axis 0.
    Tensor gather_rows(std::span<const std::size_t> indices) const;
    /// Elements of one item along axis 0, as a tensor of rank-1 lower.
    Tensor row(std::size_t index) const;

    void fill(float value) noexcept;
    Tensor& operator+=(const Tensor& other);

    bool all_finite() const noexcept;
    float max_abs_diff(const Tensor& other) const;

    /// Bit-exact equality of shape and contents.
    friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

private:
    Shape shape_;
    Storage data_;
};

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace lgap
