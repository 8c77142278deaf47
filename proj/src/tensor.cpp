#include "orthoct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace orthoct {

int64_t numel(const Shape& shape)
{
    int64_t n = 1;
    for (int e : shape) {
        if (e <= 0)
            throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i)
            s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

template <typename T>
std::shared_ptr<detail::Node<T>> new_leaf(Shape shape, bool requires_grad)
{
    auto n = std::make_shared<detail::Node<T>>();
    const int64_t count = numel(shape);
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(count));
    n->requires_grad = requires_grad;
    if (requires_grad)
        n->grad.assign(static_cast<size_t>(count), T(0));
    return n;
}

} // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    return wrap(new_leaf<T>(std::move(shape), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
    auto n = new_leaf<T>(std::move(shape), requires_grad);
    std::fill(n->value.begin(), n->value.end(), value);
    return wrap(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad)
{
    const int64_t count = numel(shape);
    if (static_cast<int64_t>(data.size()) != count)
        throw std::invalid_argument("data length " + std::to_string(data.size())
            + " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad)
        n->grad.assign(static_cast<size_t>(count), T(0));
    return wrap(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return from_data({1}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const
{
    if (!n_)
        throw std::logic_error("shape() on undefined tensor");
    return n_->shape;
}

template <typename T>
int64_t Tensor<T>::size() const
{
    return n_ ? static_cast<int64_t>(n_->value.size()) : 0;
}

template <typename T>
bool Tensor<T>::requires_grad() const
{
    return n_ && n_->requires_grad;
}

template <typename T>
bool Tensor<T>::is_leaf() const
{
    if (!n_)
        throw std::logic_error("is_leaf() on undefined tensor");
    return n_->is_leaf;
}

template <typename T>
std::span<const T> Tensor<T>::values() const
{
    if (!n_)
        throw std::logic_error("values() on undefined tensor");
    return {n_->value.data(), n_->value.size()};
}

template <typename T>
std::span<T> Tensor<T>::values_mut()
{
    if (!n_)
        throw std::logic_error("values_mut() on undefined tensor");
    if (!n_->is_leaf)
        throw std::logic_error("values_mut() is only valid on leaf tensors");
    return {n_->value.data(), n_->value.size()};
}

template <typename T>
bool Tensor<T>::has_grad() const
{
    return n_ && !n_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const
{
    if (!has_grad())
        throw std::logic_error("tensor has no gradient buffer");
    return {n_->grad.data(), n_->grad.size()};
}

template <typename T>
std::span<T> Tensor<T>::grad_mut()
{
    if (!has_grad())
        throw std::logic_error("tensor has no gradient buffer");
    return {n_->grad.data(), n_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad()
{
    if (has_grad())
        std::fill(n_->grad.begin(), n_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const
{
    if (size() != 1)
        throw std::logic_error("item() requires a single-element tensor, shape is "
            + shape_str(shape()));
    return n_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<detail::Node<T>> n)
{
    Tensor<T> t;
    t.n_ = std::move(n);
    return t;
}

template <typename T>
bool all_finite(std::span<const T> v)
{
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            return false;
    return true;
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what)
{
    if (!all_finite(t.values()))
        throw std::runtime_error("non-finite values in " + what);
}

template <typename T>
void backward(const Tensor<T>& loss)
{
    using Node = detail::Node<T>;
    if (!loss.defined())
        throw std::logic_error("backward() on undefined tensor");
    if (loss.size() != 1)
        throw std::invalid_argument("backward() requires a scalar loss, shape is "
            + shape_str(loss.shape()));
    Node* root = loss.node();
    if (!root->requires_grad)
        throw std::invalid_argument("backward(): loss does not depend on any requires_grad tensor");
    if (root->consumed)
        throw std::logic_error("backward(): graph already consumed; re-run the forward pass first");

    // iterative post-order DFS, children after parents
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf)
            continue;
        if (n->consumed)
            throw std::logic_error("backward(): graph already consumed; re-run the forward pass first");
        if (n->backprop)
            n->backprop();
        n->consumed = true;
        n->backprop = nullptr; // release the closure and the parent handles
        n->parents.clear();
    }
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<NodePtr<T>> parents,
    std::vector<T> value, std::function<void(detail::Node<T>*)> make_back)
{
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->is_leaf = false;
    for (auto& p : parents)
        if (p->requires_grad)
            n->requires_grad = true;
    if (n->requires_grad) {
        n->grad.assign(n->value.size(), T(0));
        n->parents = std::move(parents);
        detail::Node<T>* raw = n.get();
        n->backprop = [raw, fn = std::move(make_back)]() { fn(raw); };
    }
    return Tensor<T>::wrap(std::move(n));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape())
            + " vs " + shape_str(b.shape()));
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "add");
    std::vector<T> v(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < v.size(); ++i)
        v[i] += bv[i];
    auto pa = a.handle(), pb = b.handle();
    return make_op<T>(a.shape(), {pa, pb}, std::move(v), [pa, pb](detail::Node<T>* out) {
        if (pa->requires_grad)
            for (size_t i = 0; i < out->grad.size(); ++i)
                pa->grad[i] += out->grad[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < out->grad.size(); ++i)
                pb->grad[i] += out->grad[i];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "sub");
    std::vector<T> v(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < v.size(); ++i)
        v[i] -= bv[i];
    auto pa = a.handle(), pb = b.handle();
    return make_op<T>(a.shape(), {pa, pb}, std::move(v), [pa, pb](detail::Node<T>* out) {
        if (pa->requires_grad)
            for (size_t i = 0; i < out->grad.size(); ++i)
                pa->grad[i] += out->grad[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < out->grad.size(); ++i)
                pb->grad[i] -= out->grad[i];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "mul");
    std::vector<T> v(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < v.size(); ++i)
        v[i] *= bv[i];
    auto pa = a.handle(), pb = b.handle();
    return make_op<T>(a.shape(), {pa, pb}, std::move(v), [pa, pb](detail::Node<T>* out) {
        if (pa->requires_grad)
            for (size_t i = 0; i < out->grad.size(); ++i)
                pa->grad[i] += pb->value[i] * out->grad[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < out->grad.size(); ++i)
                pb->grad[i] += pa->value[i] * out->grad[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c)
{
    std::vector<T> v(a.values().begin(), a.values().end());
    for (T& x : v)
        x *= c;
    auto pa = a.handle();
    return make_op<T>(a.shape(), {pa}, std::move(v), [pa, c](detail::Node<T>* out) {
        for (size_t i = 0; i < out->grad.size(); ++i)
            pa->grad[i] += c * out->grad[i];
    });
}

template <typename T>
Tensor<T> offset(const Tensor<T>& a, T c)
{
    std::vector<T> v(a.values().begin(), a.values().end());
    for (T& x : v)
        x += c;
    auto pa = a.handle();
    return make_op<T>(a.shape(), {pa}, std::move(v), [pa](detail::Node<T>* out) {
        for (size_t i = 0; i < out->grad.size(); ++i)
            pa->grad[i] += out->grad[i];
    });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a)
{
    std::vector<T> v(a.values().begin(), a.values().end());
    for (T& x : v)
        x = std::fabs(x);
    auto pa = a.handle();
    // subgradient 0 at exact ties
    return make_op<T>(a.shape(), {pa}, std::move(v), [pa](detail::Node<T>* out) {
        for (size_t i = 0; i < out->grad.size(); ++i) {
            const T x = pa->value[i];
            const T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
            pa->grad[i] += s * out->grad[i];
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    T acc = 0;
    for (T x : a.values())
        acc += x;
    auto pa = a.handle();
    return make_op<T>({1}, {pa}, {acc}, [pa](detail::Node<T>* out) {
        const T g = out->grad[0];
        for (size_t i = 0; i < pa->grad.size(); ++i)
            pa->grad[i] += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a)
{
    T acc = 0;
    for (T x : a.values())
        acc += x;
    const T inv = T(1) / static_cast<T>(a.size());
    auto pa = a.handle();
    return make_op<T>({1}, {pa}, {acc * inv}, [pa, inv](detail::Node<T>* out) {
        const T g = out->grad[0] * inv;
        for (size_t i = 0; i < pa->grad.size(); ++i)
            pa->grad[i] += g;
    });
}

template class Tensor<float>;
template class Tensor<double>;

#define ORTHOCT_INSTANTIATE(T)                                     \
    template void backward<T>(const Tensor<T>&);                   \
    template void check_finite<T>(const Tensor<T>&, const std::string&); \
    template bool all_finite<T>(std::span<const T>);               \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> scale<T>(const Tensor<T>&, T);              \
    template Tensor<T> offset<T>(const Tensor<T>&, T);             \
    template Tensor<T> abs<T>(const Tensor<T>&);                   \
    template Tensor<T> sum<T>(const Tensor<T>&);                   \
    template Tensor<T> mean<T>(const Tensor<T>&);

ORTHOCT_INSTANTIATE(float)
ORTHOCT_INSTANTIATE(double)
#undef ORTHOCT_INSTANTIATE

} // namespace orthoct
