#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace orthoct {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the compute graph. Nodes created by primitives keep
// shared handles to their parents plus a closure that scatters the
// node's gradient into the parents' gradient buffers. backward()
// releases both once it has run, so a graph can be walked only once.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // same length as value when requires_grad
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;
};

} // namespace detail

/// Dense n-dimensional array with optional reverse-mode gradient.
/// Value-semantics handle to a shared graph node: copying a Tensor is
/// cheap and aliases the same storage. Values are row-major (last
/// extent fastest). Leaf tensors may be mutated in place (optimizer,
/// EMA); op results must not be.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    bool requires_grad() const;
    bool is_leaf() const;

    std::span<const T> values() const;
    std::span<T> values_mut(); // leaf mutation only
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> grad_mut();
    void zero_grad();

    /// Value of a single-element tensor.
    T item() const;

    detail::Node<T>* node() const { return n_.get(); }
    std::shared_ptr<detail::Node<T>> handle() const { return n_; }
    static Tensor wrap(std::shared_ptr<detail::Node<T>> n);

private:
    std::shared_ptr<detail::Node<T>> n_;
};

/// Reverse-mode sweep from a scalar loss. Accumulates into the grad
/// buffer of every requires_grad tensor reachable from `loss`; leaves
/// that do not feed the loss keep their zero gradient. A graph can be
/// consumed once; a second backward through the same nodes throws.
template <typename T>
void backward(const Tensor<T>& loss);

/// Throws if any element is NaN or Inf. `what` names the offender in
/// the message.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what);

template <typename T>
bool all_finite(std::span<const T> v);

// ---- elementwise & reduction primitives (graph-recording) ----

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> offset(const Tensor<T>& a, T c);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace orthoct
