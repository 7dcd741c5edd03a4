#pragma once

// Reverse-mode differentiation over a recorded tape. Node ids are assigned in
// creation order, and a node may only consume earlier nodes, so reverse id
// order is a valid topological order and each node is visited once.

#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "utopy/core/tensor.hpp"

namespace utopy {

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    int id() const noexcept { return id_; }
    Tape<T>* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }
    bool requires_grad() const { return tape_->requires_grad(id_); }

private:
    Tape<T>* tape_ = nullptr;
    int id_ = -1;
};

template <class T>
class Tape {
public:
    /// Called during backward with the node id; reads grad(id) and
    /// accumulates into the node's inputs.
    using Backward = std::function<void(Tape&, int)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Trainable leaf.
    Var<T> parameter(Tensor<T> value) {
        check_finite(value, "parameter", static_cast<int>(nodes_.size()));
        nodes_.push_back(Node{"parameter", std::move(value), {}, {}, {}, true, true});
        return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
    }

    Var<T> constant(Tensor<T> value) {
        check_finite(value, "constant", static_cast<int>(nodes_.size()));
        nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}, false, false});
        return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
    }

    /// Appends an op node. `op` must have static storage duration.
    Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
        const int id = static_cast<int>(nodes_.size());
        check_finite(value, op, id);
        Node node{op, std::move(value), {}, {}, std::move(backward), false, false};
        node.inputs.reserve(inputs.size());
        for (const auto& v : inputs) {
            UTOPY_REQUIRE(v.tape() == this && v.id() >= 0 && v.id() < id,
                          std::string("op '") + op + "' consumes a node from another tape");
            node.inputs.push_back(v.id());
            node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
        }
        if (!node.requires_grad) node.backward = nullptr;
        nodes_.push_back(std::move(node));
        return Var<T>(this, id);
    }

    const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
    bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
    bool is_leaf(int id) const { return nodes_.at(id).leaf; }
    const char* op(int id) const { return nodes_.at(id).op; }
    const std::vector<int>& inputs(int id) const { return nodes_.at(id).inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    const Tensor<T>& grad(int id) const { return nodes_.at(id).grad; }

    /// Gradient buffer of `id`, zero-initialised on first use.
    Tensor<T>& grad_buffer(int id) {
        auto& n = nodes_[id];
        if (n.grad.numel() != n.value.numel() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    void accumulate(int id, const Tensor<T>& g) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return;
        require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
        if (n.grad.numel() == 0 && n.value.numel() != 0) {
            n.grad = g;
        } else {
            for (std::size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
        }
    }

    void accumulate(int id, Tensor<T>&& g) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return;
        require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
        if (n.grad.numel() == 0 && n.value.numel() != 0) {
            n.grad = std::move(g);
        } else {
            for (std::size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
        }
    }

    /// d(root)/d(leaf) for every trainable leaf reachable from root.
    /// Intermediate gradients are released as the sweep passes them.
    std::map<int, Tensor<T>> backward(Var<T> root) {
        UTOPY_REQUIRE(root.tape() == this, "backward: root belongs to another tape");
        UTOPY_REQUIRE(value(root.id()).numel() == 1,
                      "backward: root must be scalar, got shape " + shape_str(value(root.id()).shape()));
        for (auto& n : nodes_) n.grad = Tensor<T>();
        std::map<int, Tensor<T>> out;
        if (!nodes_[root.id()].requires_grad) return out;
        nodes_[root.id()].grad = Tensor<T>(nodes_[root.id()].value.shape(), T(1));
        for (int id = root.id(); id >= 0; --id) {
            auto& n = nodes_[id];
            if (!n.requires_grad || n.grad.numel() == 0) continue;
            if (!n.grad.all_finite())
                throw NumericFailure(std::string("non-finite gradient at node ") + std::to_string(id) + " ('" +
                                     n.op + "')");
            if (n.leaf) {
                out.emplace(id, std::move(n.grad));
                n.grad = Tensor<T>();
                continue;
            }
            if (n.backward) n.backward(*this, id);
            n.grad = Tensor<T>();
        }
        return out;
    }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        const char* op;
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> inputs;
        Backward backward;
        bool requires_grad;
        bool leaf;
    };

    static void check_finite(const Tensor<T>& v, const char* op, int id) {
        if (!v.all_finite())
            throw NumericFailure(std::string("non-finite value produced by '") + op + "' (node " +
                                 std::to_string(id) + ")");
    }

    std::vector<Node> nodes_;
};

} // namespace utopy
