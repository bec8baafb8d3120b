#pragma once

#include <functional>
#include <vector>

#include "ccam/tensor.hpp"

namespace ccam {

// Reverse-mode autodiff over a linear tape. Nodes are created in topological
// order, so the backward sweep is a reverse iteration. One tape per
// differentiation job; tapes are not shared across threads.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var constant(Tensor value);  // no gradient tracked
    Var leaf(Tensor value);      // gradient tracked

    const Tensor& val(Var v) const { return nodes_[v.id].value; }
    // Gradient after backward(); zeros for nodes outside the differentiated path.
    Tensor grad(Var v) const;

    // Clears all gradients, seeds d(scalar)/d(scalar)=1 and sweeps the tape.
    void backward(Var scalar);

    std::size_t size() const { return nodes_.size(); }

    // --- ops ---
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var relu(Var x);
    Var tanh_op(Var x);
    Var avg_pool2x2(Var x);
    Var global_avg_pool(Var x);           // (C,H,W) -> (C)
    Var linear(Var x, Var w, Var b);      // w: (out,in)
    Var concat(const std::vector<Var>& xs);
    Var softmax(Var logits);
    Var pick(Var x, int index);           // scalar element
    Var dot(Var a, Var b);
    Var l2_normalize(Var x);
    Var mse_to(Var x, Tensor target);     // mean of squared differences
    Var add(Var a, Var b);
    Var sub_const(Var x, double c);
    Var square(Var x);
    Var scale(Var x, double c);
    Var add_scalars(const std::vector<Var>& xs);
    Var cross_entropy(Var logits, int label);

    // token ops; tokens are (N, D)
    Var tokens_linear(Var x, Var w, Var b);  // w: (out,in), result (N,out)
    Var token_mean(Var x);                   // (N,D) -> (D)
    Var broadcast_add(Var tokens, Var vec);  // add vec to each token row
    Var grid_from_tokens(Var tokens, int side);  // (S*S, D) -> (D,S,S)
    Var tokens_from_grid(Var grid);              // (D,S,S) -> (S*S, D)

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&)> back;  // accumulates into parents' grads
    };

    int push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
    bool rg(Var v) const { return nodes_[v.id].requires_grad; }
    Tensor& g(Var v) { return nodes_[v.id].grad; }

    std::vector<Node> nodes_;
};

}  // namespace ccam
