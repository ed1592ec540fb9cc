#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dastm {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

namespace detail {

// One vertex of the recorded computation graph. Parents are only kept when the
// node participates in differentiation, so inference graphs are freed eagerly.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Rank-4 (n, c, h, w) array of doubles, row-major with w fastest.
///
/// Copies are shallow handles onto the same storage; use clone() for a deep
/// copy. Ops in ops.hpp record a reverse-mode graph whenever any input
/// requires a gradient.
class Tensor4 {
   public:
    Tensor4();
    explicit Tensor4(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor4(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor4 scalar(double v, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> data() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    double at(int n, int c, int h, int w) const { return node_->data[index(n, c, h, w)]; }
    double& at(int n, int c, int h, int w) { return node_->data[index(n, c, h, w)]; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double& operator[](std::size_t i) { return node_->data[i]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    // Same values, no graph history.
    Tensor4 detach() const;
    // Deep copy including requires_grad (graph history dropped).
    Tensor4 clone() const;

    bool is_leaf() const { return node_->parents.empty(); }
    bool same_storage(const Tensor4& other) const { return node_ == other.node_; }

    std::size_t index(int n, int c, int h, int w) const {
        const Shape& s = node_->shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
    }

    // Graph plumbing for op implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor4 from_node(std::shared_ptr<detail::Node> node);

   private:
    std::shared_ptr<detail::Node> node_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

// Suspends graph recording on the current thread for inference.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Named parameters with deterministic insertion order. Entries are handles,
/// so updates through the set are visible to the model that registered them.
class ParamSet {
   public:
    void add(std::string name, Tensor4 t);

    std::size_t size() const { return entries_.size(); }
    bool contains(std::string_view name) const;
    Tensor4& get(std::string_view name);
    const Tensor4& get(std::string_view name) const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    const std::pair<std::string, Tensor4>& operator[](std::size_t i) const { return entries_[i]; }
    std::pair<std::string, Tensor4>& operator[](std::size_t i) { return entries_[i]; }

    void zero_grad();
    std::size_t total_numel() const;

   private:
    std::vector<std::pair<std::string, Tensor4>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dastm
