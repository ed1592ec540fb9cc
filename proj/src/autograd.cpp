#include "dastm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dastm/error.hpp"

namespace dastm {

namespace {

using detail::Node;

// Post-order DFS; iterative so deep graphs cannot overflow the stack.
std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.contains(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void backward(const Tensor4& output) {
    if (output.numel() != 1) throw DimensionError("backward needs a scalar output, got " + output.shape().str());
    Node* root = output.node().get();
    if (!root->requires_grad) return;
    const std::vector<Node*> order = topo_order(root);
    for (Node* n : order)
        if (n->backward) n->grad.assign(n->data.size(), 0.0);
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->backward(*n);
            // Interior gradients are not needed once propagated.
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

std::vector<std::vector<double>> backprop(const Tensor4& output, ParamSet& params) {
    params.zero_grad();
    backward(output);
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& [name, t] : params) {
        if (t.has_grad())
            grads.emplace_back(t.grad().begin(), t.grad().end());
        else
            grads.emplace_back(t.numel(), 0.0);
    }
    return grads;
}

double grad_check(const std::function<Tensor4()>& fn, ParamSet& params, double eps) {
    if (!(eps > 0.0)) throw ParameterError("grad_check eps must be > 0");
    const auto analytic = backprop(fn(), params);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].second.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = fn().item();
            values[i] = saved - eps;
            const double down = fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace dastm
