#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <new>
#include <vector>

#include "efanet/errors.hpp"

namespace efanet {

// NCHW extents.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    std::array<int, 4> dims() const { return {n, c, h, w}; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
    return os.str();
}

namespace detail {

// Fixed 64-byte alignment keeps vectorized kernels on the same code path
// from run to run, so float results do not depend on heap addresses.
inline constexpr std::size_t kStorageAlignment = 64;

template <typename T>
struct AlignedAllocator {
    using value_type = T;
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kStorageAlignment}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kStorageAlignment}); }
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorNode {
    Shape shape;
    AlignedVector<T> value;
    AlignedVector<T> grad;  // empty unless requires_grad
    bool requires_grad = false;
};

}  // namespace detail

// Reference-counted handle to a dense NCHW array. Copies share storage; use
// clone() for a deep copy.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::TensorNode<T>>()) {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
            throw ShapeError("negative extent in shape " + to_string(shape));
        }
        node_->shape = shape;
        node_->value.assign(shape.numel(), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::TensorNode<T>>()) {
        if (values.size() != shape.numel()) {
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             to_string(shape));
        }
        node_->shape = shape;
        node_->value.assign(values.begin(), values.end());
    }

    static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
    static Tensor ones(Shape shape) { return Tensor(shape, T(1)); }
    static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    std::span<T> grad() { return node_->grad; }
    std::span<const T> grad() const { return node_->grad; }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        if (on) {
            node_->grad.assign(node_->value.size(), T(0));
        } else {
            node_->grad.clear();
            node_->grad.shrink_to_fit();
        }
        return *this;
    }

    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

    std::size_t offset(int n, int c, int h, int w) const {
        const Shape& s = node_->shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
    }
    T& at(int n, int c, int h, int w) { return node_->value[offset(n, c, h, w)]; }
    T at(int n, int c, int h, int w) const { return node_->value[offset(n, c, h, w)]; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
        return node_->value[0];
    }

    // Deep copy of values; the copy does not require grad.
    Tensor clone() const {
        Tensor out(node_->shape);
        out.node_->value = node_->value;
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->value.begin(), node_->value.end());
        return Tensor<U>(node_->shape, std::move(out));
    }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::TensorNode<T>>& node() const { return node_; }

   private:
    std::shared_ptr<detail::TensorNode<T>> node_;
};

// Ordered record of differentiable operations. Ops append a backward closure
// after computing their output, so recording order is a topological order.
// A tape is single-threaded; use one tape per worker.
template <typename T>
class Tape {
   public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }

    // True when an op on these inputs must be recorded.
    template <typename... Ts>
    bool wants(const Ts&... inputs) const {
        return recording_ && (... || inputs.requires_grad());
    }

    bool wants_any(std::span<const Tensor<T>> inputs) const {
        return recording_ && std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
    }

    void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // Runs every recorded closure once, newest first, then empties the tape.
    void run_backward() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        entries_.clear();
    }

   private:
    bool recording_;
    std::vector<std::function<void()>> entries_;
};

// Seeds d(loss)/d(loss) = 1 and propagates through the tape. Gradients
// accumulate into existing grad buffers.
template <typename T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ShapeError("backward: loss is not connected to any tensor that requires grad");
    }
    loss.grad()[0] += T(1);
    tape.run_backward();
}

}  // namespace efanet
