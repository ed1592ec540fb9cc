#include "dastm/tensor.hpp"

#include "dastm/error.hpp"

namespace dastm {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }


std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) +
           ")";
}

Tensor4::Tensor4() : node_(std::make_shared<detail::Node>()) {}

Tensor4::Tensor4(Shape shape, double fill, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw DimensionError("negative tensor dimension " + shape.str());
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
    node_->requires_grad = requires_grad;
}

Tensor4::Tensor4(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape.numel())
        throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                             shape.str());
    node_->shape = shape;
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor4 Tensor4::scalar(double v, bool requires_grad) { return Tensor4({1, 1, 1, 1}, v, requires_grad); }

double Tensor4::item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
}

Tensor4 Tensor4::detach() const { return Tensor4(shape(), node_->data, false); }

Tensor4 Tensor4::clone() const { return Tensor4(shape(), node_->data, node_->requires_grad); }

Tensor4 Tensor4::from_node(std::shared_ptr<detail::Node> node) {
    Tensor4 t;
    t.node_ = std::move(node);
    return t;
}

void ParamSet::add(std::string name, Tensor4 t) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
}

bool ParamSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

Tensor4& ParamSet::get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return entries_[it->second].second;
}

const Tensor4& ParamSet::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return entries_[it->second].second;
}

void ParamSet::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

std::size_t ParamSet::total_numel() const {
    std::size_t total = 0;
    for (const auto& [name, t] : entries_) total += t.numel();
    return total;
}

}  // namespace dastm
