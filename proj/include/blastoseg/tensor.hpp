#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "blastoseg/errors.hpp"

namespace blastoseg {

using index_t = std::int64_t;
using Shape = std::vector<index_t>;
using Rng = std::mt19937_64;

inline index_t shape_numel(const Shape& s) {
    index_t n = 1;
    for (index_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
class Tape;

// Dense row-major N-d array. Copies share the underlying buffer; an op
// never mutates a tensor it did not just allocate, so values recorded on
// a tape stay frozen until the tape is dropped.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(check_numel(shape_), fill)),
          requires_grad_(requires_grad) {}

    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<index_t>(values.size()))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(std::move(values));
        t.requires_grad_ = requires_grad;
        return t;
    }

    static Tensor scalar(T value) { return from_data({1}, {value}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    index_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    index_t numel() const { return data_ ? static_cast<index_t>(data_->size()) : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

    T& operator[](index_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
    T operator[](index_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

    // 4-d convenience accessor (batch, channel, row, col).
    T& at(index_t b, index_t c, index_t h, index_t w) {
        return (*data_)[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    T at(index_t b, index_t c, index_t h, index_t w) const {
        return (*data_)[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T v : *data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        t.requires_grad_ = requires_grad_;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_->size());
        for (std::size_t i = 0; i < data_->size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return Tensor<U>::from_data(shape_, std::move(out), requires_grad_);
    }

private:
    static index_t check_numel(const Shape& s) {
        for (index_t d : s)
            if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
        return shape_numel(s);
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    bool requires_grad_ = false;
};

// Reverse-mode autodiff record. Ops append one node per produced tensor;
// node inputs always precede the node, so a single right-to-left sweep
// in backward() visits everything in reverse topological order. A tape
// serves exactly one forward+backward and is confined to one thread.
//
// Tensors are identified by their storage, so any copy sharing the same
// buffer names the same node; the tape pins every registered storage
// alive, which also rules out address-reuse aliasing.
template <typename T>
class Tape {
public:
    // Backward closure: receives the node's output gradient buffer and
    // this tape, and accumulates into the input gradients it fetches via
    // grad_buffer().
    using BackwardFn = std::function<void(const T* grad_out, Tape<T>& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf tensor (parameter or input). Idempotent per tape.
    int watch(const Tensor<T>& t) {
        const int existing = id_of(t);
        if (existing >= 0) return existing;
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{{}, nullptr, t.shape(), t.storage()});
        ids_.emplace(t.storage().get(), id);
        return id;
    }

    // Returns the node id of t on this tape, auto-watching tensors that
    // require grad; -1 marks a constant that gradients do not flow into.
    int track(const Tensor<T>& t) {
        const int existing = id_of(t);
        if (existing >= 0) return existing;
        if (t.requires_grad()) return watch(t);
        return -1;
    }

    bool wants(const Tensor<T>& t) const { return id_of(t) >= 0 || t.requires_grad(); }

    // Records an op node producing `out` from the given input ids.
    void record(const Tensor<T>& out, std::vector<int> inputs, BackwardFn fn) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{std::move(inputs), std::move(fn), out.shape(), out.storage()});
        ids_.emplace(out.storage().get(), id);
    }

    // Gradient accumulation buffer for node `id`, zero-initialized on
    // first touch. Called by op backward closures.
    T* grad_buffer(int id) {
        if (id < 0) return nullptr;
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(static_cast<std::size_t>(shape_numel(nodes_[static_cast<std::size_t>(id)].out_shape)), T(0));
        return g.data();
    }

    // Reverse sweep from a scalar loss. Gradients for every watched leaf
    // reachable from the loss are available through grad() afterwards.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ParameterError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        const int loss_id = id_of(loss);
        if (loss_id < 0)
            throw ParameterError("backward() loss was not produced on this tape");
        grads_.assign(nodes_.size(), {});
        grads_[static_cast<std::size_t>(loss_id)] = {T(1)};
        for (int i = loss_id; i >= 0; --i) {
            auto& node = nodes_[static_cast<std::size_t>(i)];
            auto& g = grads_[static_cast<std::size_t>(i)];
            if (g.empty() || !node.backward) continue;
            node.backward(g.data(), *this);
        }
        ran_backward_ = true;
    }

    // Gradient of a tensor after backward(); zeros if nothing flowed into it.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (!ran_backward_) throw ParameterError("grad() called before backward()");
        const int id = id_of(t);
        if (id < 0) throw ParameterError("grad() of a tensor that is not on this tape");
        const auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) return Tensor<T>(t.shape(), T(0));
        return Tensor<T>::from_data(t.shape(), std::vector<T>(g));
    }

    bool has_grad(const Tensor<T>& t) const {
        const int id = id_of(t);
        return ran_backward_ && id >= 0 && !grads_[static_cast<std::size_t>(id)].empty();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> inputs;
        BackwardFn backward;
        Shape out_shape;
        std::shared_ptr<std::vector<T>> pin;  // keeps the storage address unique
    };

    int id_of(const Tensor<T>& t) const {
        if (!t.defined()) return -1;
        auto it = ids_.find(t.storage().get());
        return it == ids_.end() ? -1 : it->second;
    }

    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> ids_;
    std::vector<std::vector<T>> grads_;
    bool ran_backward_ = false;
};

// Free-standing spec entry point: gradients of every watched leaf w.r.t.
// a scalar loss recorded on `tape`.
template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
    tape.backward(loss);
}

} // namespace blastoseg
