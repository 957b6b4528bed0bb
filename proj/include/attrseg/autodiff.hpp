#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace attrseg::ad {

using Mat = Eigen::MatrixXd;

// A named trainable tensor. Lives outside any tape; gradients accumulate
// across backward passes until zeroed.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;

    Param() = default;
    Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.setZero(); }
};

struct Node {
    Mat val;
    Mat grad;  // empty until first contribution; empty means zero
    bool requires_grad = false;
    std::function<void()> back;  // pulls this->grad into parents
};

// Define-by-run tape. Nodes are created in topological order; backward walks
// the creation order in reverse. One tape per forward pass.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Node* make(Mat v, bool requires_grad) {
        nodes_.emplace_back();
        Node* n = &nodes_.back();
        n->val = std::move(v);
        n->requires_grad = requires_grad && grad_enabled_;
        return n;
    }

    // Root must be 1x1. Seeds d(root)/d(root) = 1 and propagates.
    void backward(Node* root);

    size_t size() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;
    bool grad_enabled_;
};

// Adds g into n's grad, allocating on first touch.
void accumulate(Node* n, const Mat& g);

// ---- leaves -----------------------------------------------------------------

Node* constant(Tape& t, Mat v);
// Copies p.value onto the tape; backward adds the node gradient into p.grad.
Node* leaf(Tape& t, Param& p);

// Per-forward context: caches one leaf per Param so shared weights accumulate
// gradients through a single node.
struct Ctx {
    Tape& tape;
    std::unordered_map<const Param*, Node*> leaves;

    explicit Ctx(Tape& t) : tape(t) {}
    Node* use(Param& p) {
        auto it = leaves.find(&p);
        if (it != leaves.end()) return it->second;
        Node* n = leaf(tape, p);
        leaves.emplace(&p, n);
        return n;
    }
};

// ---- elementwise / linear algebra --------------------------------------------

Node* add(Tape& t, Node* a, Node* b);
Node* sub(Tape& t, Node* a, Node* b);
Node* cmul(Tape& t, Node* a, Node* b);  // elementwise product
Node* scale(Tape& t, Node* a, double s);
Node* add_scalar(Tape& t, Node* a, double s);
// a scaled by a 1x1 node
Node* scale_bynode(Tape& t, Node* a, Node* s);
Node* matmul(Tape& t, Node* a, Node* b);
Node* transpose(Tape& t, Node* a);
// v is 1xC, added to every row of a
Node* add_rowvec(Tape& t, Node* a, Node* v);
// y = x*w + b (b is 1xC)
Node* linear(Tape& t, Node* x, Node* w, Node* b);
// Same result as linear() but computed one row at a time so that the output
// rows are bit-identical under any row permutation of x.
Node* linear_rowsafe(Tape& t, Node* x, Node* w, Node* b);

Node* concat_cols(Tape& t, Node* a, Node* b);
Node* slice_cols(Tape& t, Node* a, int j0, int n);
Node* gather_rows(Tape& t, Node* a, std::vector<int> idx);
Node* concat_rows(Tape& t, const std::vector<Node*>& parts);

// ---- nonlinearities -----------------------------------------------------------

Node* gelu(Tape& t, Node* a);     // exact erf form
Node* sigmoid(Tape& t, Node* a);
// Row-wise softmax, computed max-shifted for stability.
Node* softmax_rows(Tape& t, Node* a);
Node* layernorm(Tape& t, Node* x, Node* gamma, Node* beta, double eps = 1e-5);

// ---- attention ----------------------------------------------------------------

// Multi-head softmax attention over row groups. q,k,v share shape (R x d);
// within each group, every row attends to every row of the same group. Rows
// not named by any group pass through as zeros. d must be divisible by heads.
Node* mha(Tape& t, Node* q, Node* k, Node* v,
          const std::vector<std::vector<int>>& groups, int heads, double att_scale);

// Softmax-free linear attention with kernel phi(x) = elu(x)+1, applied over
// consecutive row groups of size group_size (rows [i*g, (i+1)*g) form group i).
// Reductions over the group axis are order-canonical (summands sorted before
// accumulation) so outputs are bit-identical under within-group permutation.
Node* linear_attention(Tape& t, Node* q, Node* k, Node* v, int group_size);

// ---- geometry -----------------------------------------------------------------

// Rows of x are an h_in x w_in grid (row-major), C columns. Bilinear resample
// to h_out x w_out using the half-pixel (align_corners=false) convention.
Node* bilinear_resize(Tape& t, Node* x, int h_in, int w_in, int h_out, int w_out);

// 3x3 im2col with zero padding 1: (h*w x C) -> (h*w x 9C). Column block k
// holds the neighbor at offset (dy,dx) = (k/3 - 1, k%3 - 1).
Node* im2col3x3(Tape& t, Node* x, int h, int w);

// ---- reductions / losses --------------------------------------------------------

Node* sum_all(Tape& t, Node* a);
Node* mean_all(Tape& t, Node* a);

// cosine(a_i, b_n) for every row pair: (P x D), (k x D) -> (P x k).
// Denominator is (|a_i| + eps)(|b_n| + eps); exact-zero rows give 0.
Node* cosine_rows(Tape& t, Node* f, Node* tt, double eps = 1e-8);

// Numerically stable sigmoid BCE against dense targets, averaged over the
// valid rows (valid.size() == rows; each valid row contributes all columns).
// Gradient per element is (sigmoid(x) - y) / N with N = #valid rows * cols.
Node* bce_logits(Tape& t, Node* logits, const Mat& targets, const std::vector<uint8_t>& row_valid);

}  // namespace attrseg::ad
