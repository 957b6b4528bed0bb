#include "attrseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace attrseg::ad {

namespace {

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Ascending-by-value insertion sort then accumulate. Summing a multiset in a
// canonical order makes the result independent of the input permutation.
double canonical_sum(double* buf, int n) {
    for (int i = 1; i < n; ++i) {
        double key = buf[i];
        int j = i - 1;
        while (j >= 0 && buf[j] > key) {
            buf[j + 1] = buf[j];
            --j;
        }
        buf[j + 1] = key;
    }
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += buf[i];
    return s;
}

}  // namespace

void accumulate(Node* n, const Mat& g) {
    if (!n->requires_grad) return;
    if (n->grad.size() == 0)
        n->grad = g;
    else
        n->grad += g;
}

void Tape::backward(Node* root) {
    check(root->val.rows() == 1 && root->val.cols() == 1, "backward: root must be 1x1");
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    root->grad = Mat::Ones(1, 1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = *it;
        if (n.grad.size() == 0 || !n.back) continue;
        n.back();
    }
}

Node* constant(Tape& t, Mat v) { return t.make(std::move(v), false); }

Node* leaf(Tape& t, Param& p) {
    Node* n = t.make(p.value, p.trainable);
    if (n->requires_grad) {
        Param* pp = &p;
        n->back = [n, pp] { pp->grad += n->grad; };
    }
    return n;
}

Node* add(Tape& t, Node* a, Node* b) {
    check(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), "add: shape mismatch");
    Node* n = t.make(a->val + b->val, a->requires_grad || b->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, b] {
            accumulate(a, n->grad);
            accumulate(b, n->grad);
        };
    return n;
}

Node* sub(Tape& t, Node* a, Node* b) {
    check(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), "sub: shape mismatch");
    Node* n = t.make(a->val - b->val, a->requires_grad || b->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, b] {
            accumulate(a, n->grad);
            accumulate(b, -n->grad);
        };
    return n;
}

Node* cmul(Tape& t, Node* a, Node* b) {
    check(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), "cmul: shape mismatch");
    Node* n = t.make(a->val.cwiseProduct(b->val), a->requires_grad || b->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, b] {
            accumulate(a, n->grad.cwiseProduct(b->val));
            accumulate(b, n->grad.cwiseProduct(a->val));
        };
    return n;
}

Node* scale(Tape& t, Node* a, double s) {
    Node* n = t.make(a->val * s, a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, s] { accumulate(a, n->grad * s); };
    return n;
}

Node* add_scalar(Tape& t, Node* a, double s) {
    Node* n = t.make(a->val.array() + s, a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] { accumulate(a, n->grad); };
    return n;
}

Node* scale_bynode(Tape& t, Node* a, Node* s) {
    check(s->val.rows() == 1 && s->val.cols() == 1, "scale_bynode: scalar must be 1x1");
    double sv = s->val(0, 0);
    Node* n = t.make(a->val * sv, a->requires_grad || s->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, s, sv] {
            accumulate(a, n->grad * sv);
            if (s->requires_grad) {
                Mat ds(1, 1);
                ds(0, 0) = (n->grad.cwiseProduct(a->val)).sum();
                accumulate(s, ds);
            }
        };
    return n;
}

Node* matmul(Tape& t, Node* a, Node* b) {
    check(a->val.cols() == b->val.rows(), "matmul: inner dim mismatch");
    Node* n = t.make(a->val * b->val, a->requires_grad || b->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, b] {
            if (a->requires_grad) accumulate(a, n->grad * b->val.transpose());
            if (b->requires_grad) accumulate(b, a->val.transpose() * n->grad);
        };
    return n;
}

Node* transpose(Tape& t, Node* a) {
    Node* n = t.make(a->val.transpose(), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] { accumulate(a, n->grad.transpose()); };
    return n;
}

Node* add_rowvec(Tape& t, Node* a, Node* v) {
    check(v->val.rows() == 1 && v->val.cols() == a->val.cols(), "add_rowvec: v must be 1xC");
    Node* n = t.make(a->val.rowwise() + v->val.row(0), a->requires_grad || v->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, v] {
            accumulate(a, n->grad);
            if (v->requires_grad) accumulate(v, n->grad.colwise().sum());
        };
    return n;
}

Node* linear(Tape& t, Node* x, Node* w, Node* b) { return add_rowvec(t, matmul(t, x, w), b); }

Node* linear_rowsafe(Tape& t, Node* x, Node* w, Node* b) {
    check(x->val.cols() == w->val.rows(), "linear_rowsafe: inner dim mismatch");
    check(b->val.rows() == 1 && b->val.cols() == w->val.cols(), "linear_rowsafe: bias must be 1xC");
    const long R = x->val.rows();
    Mat out(R, w->val.cols());
    for (long i = 0; i < R; ++i) out.row(i).noalias() = x->val.row(i) * w->val;
    out.rowwise() += b->val.row(0);
    Node* n = t.make(std::move(out), x->requires_grad || w->requires_grad || b->requires_grad);
    if (n->requires_grad)
        n->back = [n, x, w, b] {
            if (x->requires_grad) {
                Mat dx(x->val.rows(), x->val.cols());
                for (long i = 0; i < x->val.rows(); ++i)
                    dx.row(i).noalias() = n->grad.row(i) * w->val.transpose();
                accumulate(x, dx);
            }
            if (w->requires_grad) accumulate(w, x->val.transpose() * n->grad);
            if (b->requires_grad) accumulate(b, n->grad.colwise().sum());
        };
    return n;
}

Node* concat_cols(Tape& t, Node* a, Node* b) {
    check(a->val.rows() == b->val.rows(), "concat_cols: row mismatch");
    Mat out(a->val.rows(), a->val.cols() + b->val.cols());
    out.leftCols(a->val.cols()) = a->val;
    out.rightCols(b->val.cols()) = b->val;
    Node* n = t.make(std::move(out), a->requires_grad || b->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, b] {
            accumulate(a, n->grad.leftCols(a->val.cols()));
            accumulate(b, n->grad.rightCols(b->val.cols()));
        };
    return n;
}

Node* slice_cols(Tape& t, Node* a, int j0, int ncols) {
    check(j0 >= 0 && j0 + ncols <= a->val.cols(), "slice_cols: out of range");
    Node* n = t.make(a->val.middleCols(j0, ncols), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a, j0, ncols] {
            Mat g = Mat::Zero(a->val.rows(), a->val.cols());
            g.middleCols(j0, ncols) = n->grad;
            accumulate(a, g);
        };
    return n;
}

Node* gather_rows(Tape& t, Node* a, std::vector<int> idx) {
    Mat out(static_cast<long>(idx.size()), a->val.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < a->val.rows(), "gather_rows: index out of range");
        out.row(static_cast<long>(i)) = a->val.row(idx[i]);
    }
    Node* n = t.make(std::move(out), a->requires_grad);
    if (n->requires_grad) {
        auto ids = std::make_shared<std::vector<int>>(std::move(idx));
        n->back = [n, a, ids] {
            Mat g = Mat::Zero(a->val.rows(), a->val.cols());
            for (size_t i = 0; i < ids->size(); ++i) g.row((*ids)[i]) += n->grad.row(static_cast<long>(i));
            accumulate(a, g);
        };
    }
    return n;
}

Node* concat_rows(Tape& t, const std::vector<Node*>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    long rows = 0;
    bool rg = false;
    for (Node* p : parts) {
        check(p->val.cols() == parts[0]->val.cols(), "concat_rows: col mismatch");
        rows += p->val.rows();
        rg = rg || p->requires_grad;
    }
    Mat out(rows, parts[0]->val.cols());
    long r = 0;
    for (Node* p : parts) {
        out.middleRows(r, p->val.rows()) = p->val;
        r += p->val.rows();
    }
    Node* n = t.make(std::move(out), rg);
    if (n->requires_grad) {
        auto ps = std::make_shared<std::vector<Node*>>(parts);
        n->back = [n, ps] {
            long r = 0;
            for (Node* p : *ps) {
                accumulate(p, n->grad.middleRows(r, p->val.rows()));
                r += p->val.rows();
            }
        };
    }
    return n;
}

Node* gelu(Tape& t, Node* a) {
    static constexpr double inv_sqrt2 = 0.7071067811865475244;
    static constexpr double inv_sqrt2pi = 0.3989422804014326779;
    Mat out = a->val.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    Node* n = t.make(std::move(out), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] {
            Mat d = a->val.unaryExpr([](double x) {
                return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
            });
            accumulate(a, n->grad.cwiseProduct(d));
        };
    return n;
}

Node* sigmoid(Tape& t, Node* a) {
    Mat out = a->val.unaryExpr([](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    Node* n = t.make(std::move(out), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] { accumulate(a, n->grad.cwiseProduct(n->val.cwiseProduct((1.0 - n->val.array()).matrix()))); };
    return n;
}

Node* softmax_rows(Tape& t, Node* a) {
    Mat out = a->val;
    for (long i = 0; i < out.rows(); ++i) {
        double m = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    Node* n = t.make(std::move(out), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] {
            Mat d = n->grad.cwiseProduct(n->val);
            Eigen::VectorXd rowsum = d.rowwise().sum();
            d -= n->val.cwiseProduct(rowsum.replicate(1, n->val.cols()));
            accumulate(a, d);
        };
    return n;
}

Node* layernorm(Tape& t, Node* x, Node* gamma, Node* beta, double eps) {
    const long R = x->val.rows(), C = x->val.cols();
    check(gamma->val.rows() == 1 && gamma->val.cols() == C, "layernorm: gamma must be 1xC");
    check(beta->val.rows() == 1 && beta->val.cols() == C, "layernorm: beta must be 1xC");
    auto xhat = std::make_shared<Mat>(R, C);
    auto inv_sigma = std::make_shared<Eigen::VectorXd>(R);
    Mat out(R, C);
    for (long i = 0; i < R; ++i) {
        double mu = x->val.row(i).mean();
        double var = (x->val.row(i).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)(i) = is;
        xhat->row(i) = (x->val.row(i).array() - mu) * is;
        out.row(i) = xhat->row(i).cwiseProduct(gamma->val.row(0)) + beta->val.row(0);
    }
    Node* n = t.make(std::move(out), x->requires_grad || gamma->requires_grad || beta->requires_grad);
    if (n->requires_grad)
        n->back = [n, x, gamma, beta, xhat, inv_sigma] {
            const long R = x->val.rows(), C = x->val.cols();
            if (x->requires_grad) {
                Mat dx(R, C);
                for (long i = 0; i < R; ++i) {
                    Eigen::RowVectorXd g = n->grad.row(i).cwiseProduct(gamma->val.row(0));
                    double mg = g.mean();
                    double mgx = g.cwiseProduct(xhat->row(i)).mean();
                    dx.row(i) = ((g.array() - mg) - xhat->row(i).array() * mgx) * (*inv_sigma)(i);
                }
                accumulate(x, dx);
            }
            if (gamma->requires_grad) accumulate(gamma, n->grad.cwiseProduct(*xhat).colwise().sum());
            if (beta->requires_grad) accumulate(beta, n->grad.colwise().sum());
        };
    return n;
}

Node* mha(Tape& t, Node* q, Node* k, Node* v,
          const std::vector<std::vector<int>>& groups, int heads, double att_scale) {
    const long R = q->val.rows(), d = q->val.cols();
    check(k->val.rows() == R && k->val.cols() == d && v->val.rows() == R && v->val.cols() == d,
          "mha: q,k,v must share shape");
    check(heads >= 1 && d % heads == 0, "mha: heads must divide dim");
    const long dh = d / heads;

    auto attn = std::make_shared<std::vector<Mat>>();  // per (group, head), row-softmaxed scores
    attn->reserve(groups.size() * heads);
    Mat out = Mat::Zero(R, d);
    for (const auto& g : groups) {
        const long n_rows = static_cast<long>(g.size());
        Mat Q(n_rows, d), K(n_rows, d), V(n_rows, d);
        for (long i = 0; i < n_rows; ++i) {
            Q.row(i) = q->val.row(g[i]);
            K.row(i) = k->val.row(g[i]);
            V.row(i) = v->val.row(g[i]);
        }
        for (int h = 0; h < heads; ++h) {
            Mat S = att_scale * (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose());
            for (long i = 0; i < n_rows; ++i) {
                double m = S.row(i).maxCoeff();
                S.row(i) = (S.row(i).array() - m).exp();
                S.row(i) /= S.row(i).sum();
            }
            Mat O = S * V.middleCols(h * dh, dh);
            for (long i = 0; i < n_rows; ++i) out.block(g[i], h * dh, 1, dh) = O.row(i);
            attn->push_back(std::move(S));
        }
    }
    Node* n = t.make(std::move(out), q->requires_grad || k->requires_grad || v->requires_grad);
    if (n->requires_grad) {
        auto gs = std::make_shared<std::vector<std::vector<int>>>(groups);
        n->back = [n, q, k, v, gs, attn, heads, att_scale, dh] {
            Mat dq = Mat::Zero(q->val.rows(), q->val.cols());
            Mat dk = dq, dv = dq;
            size_t slot = 0;
            for (const auto& g : *gs) {
                const long n_rows = static_cast<long>(g.size());
                Mat Q(n_rows, q->val.cols()), K(n_rows, q->val.cols()), V(n_rows, q->val.cols()), G(n_rows, q->val.cols());
                for (long i = 0; i < n_rows; ++i) {
                    Q.row(i) = q->val.row(g[i]);
                    K.row(i) = k->val.row(g[i]);
                    V.row(i) = v->val.row(g[i]);
                    G.row(i) = n->grad.row(g[i]);
                }
                for (int h = 0; h < heads; ++h) {
                    const Mat& A = (*attn)[slot++];
                    Mat Gh = G.middleCols(h * dh, dh);
                    Mat dV = A.transpose() * Gh;
                    Mat dA = Gh * V.middleCols(h * dh, dh).transpose();
                    Mat dS = A.cwiseProduct(dA);
                    Eigen::VectorXd rowsum = dS.rowwise().sum();
                    dS -= A.cwiseProduct(rowsum.replicate(1, A.cols()));
                    Mat dQ = att_scale * (dS * K.middleCols(h * dh, dh));
                    Mat dK = att_scale * (dS.transpose() * Q.middleCols(h * dh, dh));
                    for (long i = 0; i < n_rows; ++i) {
                        dq.block(g[i], h * dh, 1, dh) += dQ.row(i);
                        dk.block(g[i], h * dh, 1, dh) += dK.row(i);
                        dv.block(g[i], h * dh, 1, dh) += dV.row(i);
                    }
                }
            }
            accumulate(q, dq);
            accumulate(k, dk);
            accumulate(v, dv);
        };
    }
    return n;
}

namespace {

inline double elu1(double x) { return x > 0 ? x + 1.0 : std::exp(x); }
inline double elu1_deriv(double x) { return x > 0 ? 1.0 : std::exp(x); }

}  // namespace

Node* linear_attention(Tape& t, Node* q, Node* k, Node* v, int group_size) {
    const long R = q->val.rows(), d = q->val.cols();
    check(k->val.rows() == R && k->val.cols() == d && v->val.rows() == R && v->val.cols() == d,
          "linear_attention: q,k,v must share shape");
    check(group_size >= 1 && R % group_size == 0, "linear_attention: rows must be a multiple of group_size");
    const long n_groups = R / group_size;
    const long g = group_size;

    Mat phi_q = q->val.unaryExpr([](double x) { return elu1(x); });
    Mat phi_k = k->val.unaryExpr([](double x) { return elu1(x); });

    // Per group: S = sum_m phi_k[m]^T v[m]  (d x d), z = sum_m phi_k[m]  (d).
    // Group-axis sums are order-canonical; channel-axis contractions use a
    // fixed order, so the math is bit-stable under class permutation.
    auto Ss = std::make_shared<std::vector<Mat>>(n_groups);
    auto zs = std::make_shared<std::vector<Eigen::VectorXd>>(n_groups);
    auto dens = std::make_shared<Mat>(R, 1);
    Mat out(R, d);
    std::vector<double> buf(static_cast<size_t>(g));
    for (long gi = 0; gi < n_groups; ++gi) {
        const long r0 = gi * g;
        Mat S(d, d);
        Eigen::VectorXd z(d);
        for (long a = 0; a < d; ++a) {
            for (long m = 0; m < g; ++m) buf[static_cast<size_t>(m)] = phi_k(r0 + m, a);
            z(a) = canonical_sum(buf.data(), static_cast<int>(g));
            for (long b = 0; b < d; ++b) {
                for (long m = 0; m < g; ++m) buf[static_cast<size_t>(m)] = phi_k(r0 + m, a) * v->val(r0 + m, b);
                S(a, b) = canonical_sum(buf.data(), static_cast<int>(g));
            }
        }
        for (long i = 0; i < g; ++i) {
            double den = phi_q.row(r0 + i).dot(z);
            (*dens)(r0 + i, 0) = den;
            out.row(r0 + i).noalias() = (phi_q.row(r0 + i) * S) / den;
        }
        (*Ss)[gi] = std::move(S);
        (*zs)[gi] = std::move(z);
    }

    Node* n = t.make(std::move(out), q->requires_grad || k->requires_grad || v->requires_grad);
    if (n->requires_grad) {
        auto pq = std::make_shared<Mat>(std::move(phi_q));
        auto pk = std::make_shared<Mat>(std::move(phi_k));
        n->back = [n, q, k, v, pq, pk, Ss, zs, dens, n_groups, g, d] {
            Mat dq = Mat::Zero(q->val.rows(), d), dk = dq, dv = dq;
            for (long gi = 0; gi < n_groups; ++gi) {
                const long r0 = gi * g;
                const Mat& S = (*Ss)[gi];
                const Eigen::VectorXd& z = (*zs)[gi];
                Mat dS = Mat::Zero(d, d);
                Eigen::VectorXd dz = Eigen::VectorXd::Zero(d);
                for (long i = 0; i < g; ++i) {
                    const double den = (*dens)(r0 + i, 0);
                    Eigen::RowVectorXd gout = n->grad.row(r0 + i);
                    Eigen::RowVectorXd dnum = gout / den;
                    const double num_dot_g = (pq->row(r0 + i) * S).dot(gout) / den;  // out.row dot gout
                    const double dden = -num_dot_g / den;
                    Eigen::RowVectorXd dphiq = dnum * S.transpose() + dden * z.transpose();
                    dq.row(r0 + i) = dphiq.cwiseProduct(
                        q->val.row(r0 + i).unaryExpr([](double x) { return elu1_deriv(x); }));
                    dS.noalias() += pq->row(r0 + i).transpose() * dnum;
                    dz.noalias() += pq->row(r0 + i).transpose() * dden;
                }
                for (long m = 0; m < g; ++m) {
                    Eigen::RowVectorXd dphik = v->val.row(r0 + m) * dS.transpose() + dz.transpose();
                    dk.row(r0 + m) = dphik.cwiseProduct(
                        k->val.row(r0 + m).unaryExpr([](double x) { return elu1_deriv(x); }));
                    dv.row(r0 + m) = pk->row(r0 + m) * dS;
                }
            }
            accumulate(q, dq);
            accumulate(k, dk);
            accumulate(v, dv);
        };
    }
    return n;
}

namespace {

struct AxisTap {
    int i0, i1;
    double f;  // weight of i1; (1-f) goes to i0
};

std::vector<AxisTap> resize_taps(int in, int out) {
    std::vector<AxisTap> taps(static_cast<size_t>(out));
    for (int o = 0; o < out; ++o) {
        double s = (o + 0.5) * static_cast<double>(in) / out - 0.5;
        s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
        int i0 = static_cast<int>(std::floor(s));
        int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<size_t>(o)] = {i0, i1, s - i0};
    }
    return taps;
}

}  // namespace

Node* bilinear_resize(Tape& t, Node* x, int h_in, int w_in, int h_out, int w_out) {
    check(x->val.rows() == static_cast<long>(h_in) * w_in, "bilinear_resize: rows != h_in*w_in");
    check(h_in >= 1 && w_in >= 1 && h_out >= 1 && w_out >= 1, "bilinear_resize: bad dims");
    auto ty = std::make_shared<std::vector<AxisTap>>(resize_taps(h_in, h_out));
    auto tx = std::make_shared<std::vector<AxisTap>>(resize_taps(w_in, w_out));
    const long C = x->val.cols();
    Mat out(static_cast<long>(h_out) * w_out, C);
    for (int oy = 0; oy < h_out; ++oy) {
        const AxisTap& ay = (*ty)[static_cast<size_t>(oy)];
        for (int ox = 0; ox < w_out; ++ox) {
            const AxisTap& ax = (*tx)[static_cast<size_t>(ox)];
            out.row(static_cast<long>(oy) * w_out + ox) =
                (1 - ay.f) * (1 - ax.f) * x->val.row(static_cast<long>(ay.i0) * w_in + ax.i0) +
                (1 - ay.f) * ax.f * x->val.row(static_cast<long>(ay.i0) * w_in + ax.i1) +
                ay.f * (1 - ax.f) * x->val.row(static_cast<long>(ay.i1) * w_in + ax.i0) +
                ay.f * ax.f * x->val.row(static_cast<long>(ay.i1) * w_in + ax.i1);
        }
    }
    Node* n = t.make(std::move(out), x->requires_grad);
    if (n->requires_grad)
        n->back = [n, x, ty, tx, h_out, w_out, w_in] {
            Mat g = Mat::Zero(x->val.rows(), x->val.cols());
            for (int oy = 0; oy < h_out; ++oy) {
                const AxisTap& ay = (*ty)[static_cast<size_t>(oy)];
                for (int ox = 0; ox < w_out; ++ox) {
                    const AxisTap& ax = (*tx)[static_cast<size_t>(ox)];
                    const auto& go = n->grad.row(static_cast<long>(oy) * w_out + ox);
                    g.row(static_cast<long>(ay.i0) * w_in + ax.i0) += (1 - ay.f) * (1 - ax.f) * go;
                    g.row(static_cast<long>(ay.i0) * w_in + ax.i1) += (1 - ay.f) * ax.f * go;
                    g.row(static_cast<long>(ay.i1) * w_in + ax.i0) += ay.f * (1 - ax.f) * go;
                    g.row(static_cast<long>(ay.i1) * w_in + ax.i1) += ay.f * ax.f * go;
                }
            }
            accumulate(x, g);
        };
    return n;
}

Node* im2col3x3(Tape& t, Node* x, int h, int w) {
    check(x->val.rows() == static_cast<long>(h) * w, "im2col3x3: rows != h*w");
    const long C = x->val.cols();
    Mat out = Mat::Zero(static_cast<long>(h) * w, 9 * C);
    for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
            const long blk = (static_cast<long>(ky) * 3 + kx) * C;
            for (int y = 0; y < h; ++y) {
                int sy = y + ky - 1;
                if (sy < 0 || sy >= h) continue;
                for (int xx = 0; xx < w; ++xx) {
                    int sx = xx + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    out.block(static_cast<long>(y) * w + xx, blk, 1, C) = x->val.row(static_cast<long>(sy) * w + sx);
                }
            }
        }
    }
    Node* n = t.make(std::move(out), x->requires_grad);
    if (n->requires_grad)
        n->back = [n, x, h, w, C] {
            Mat g = Mat::Zero(x->val.rows(), x->val.cols());
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const long blk = (static_cast<long>(ky) * 3 + kx) * C;
                    for (int y = 0; y < h; ++y) {
                        int sy = y + ky - 1;
                        if (sy < 0 || sy >= h) continue;
                        for (int xx = 0; xx < w; ++xx) {
                            int sx = xx + kx - 1;
                            if (sx < 0 || sx >= w) continue;
                            g.row(static_cast<long>(sy) * w + sx) += n->grad.block(static_cast<long>(y) * w + xx, blk, 1, C);
                        }
                    }
                }
            }
            accumulate(x, g);
        };
    return n;
}

Node* sum_all(Tape& t, Node* a) {
    Mat out(1, 1);
    out(0, 0) = a->val.sum();
    Node* n = t.make(std::move(out), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] { accumulate(a, Mat::Constant(a->val.rows(), a->val.cols(), n->grad(0, 0))); };
    return n;
}

Node* mean_all(Tape& t, Node* a) {
    check(a->val.size() > 0, "mean_all: empty");
    Mat out(1, 1);
    out(0, 0) = a->val.mean();
    Node* n = t.make(std::move(out), a->requires_grad);
    if (n->requires_grad)
        n->back = [n, a] {
            double s = n->grad(0, 0) / static_cast<double>(a->val.size());
            accumulate(a, Mat::Constant(a->val.rows(), a->val.cols(), s));
        };
    return n;
}

Node* cosine_rows(Tape& t, Node* f, Node* tt, double eps) {
    check(f->val.cols() == tt->val.cols(), "cosine_rows: feature dim mismatch");
    const long P = f->val.rows(), K = tt->val.rows();
    auto fn = std::make_shared<Eigen::VectorXd>(P);   // |f_i|
    auto tn = std::make_shared<Eigen::VectorXd>(K);   // |t_n|
    for (long i = 0; i < P; ++i) (*fn)(i) = f->val.row(i).norm();
    for (long nn = 0; nn < K; ++nn) (*tn)(nn) = tt->val.row(nn).norm();
    Mat out(P, K);
    for (long i = 0; i < P; ++i)
        for (long nn = 0; nn < K; ++nn)
            out(i, nn) = f->val.row(i).dot(tt->val.row(nn)) / (((*fn)(i) + eps) * ((*tn)(nn) + eps));
    Node* n = t.make(std::move(out), f->requires_grad || tt->requires_grad);
    if (n->requires_grad)
        n->back = [n, f, tt, fn, tn, eps] {
            const long P = f->val.rows(), K = tt->val.rows();
            Mat df = Mat::Zero(P, f->val.cols());
            Mat dt = Mat::Zero(K, tt->val.cols());
            for (long i = 0; i < P; ++i) {
                const double nf = (*fn)(i);
                for (long nn = 0; nn < K; ++nn) {
                    const double g = n->grad(i, nn);
                    if (g == 0.0) continue;
                    const double nt = (*tn)(nn);
                    const double denom = (nf + eps) * (nt + eps);
                    const double dot = f->val.row(i).dot(tt->val.row(nn));
                    if (f->requires_grad) {
                        df.row(i) += g * tt->val.row(nn) / denom;
                        if (nf > 0) df.row(i) -= g * dot / (denom * (nf + eps) * nf) * f->val.row(i);
                    }
                    if (tt->requires_grad) {
                        dt.row(nn) += g * f->val.row(i) / denom;
                        if (nt > 0) dt.row(nn) -= g * dot / (denom * (nt + eps) * nt) * tt->val.row(nn);
                    }
                }
            }
            if (f->requires_grad) accumulate(f, df);
            if (tt->requires_grad) accumulate(tt, dt);
        };
    return n;
}

Node* bce_logits(Tape& t, Node* logits, const Mat& targets, const std::vector<uint8_t>& row_valid) {
    const long P = logits->val.rows(), K = logits->val.cols();
    check(targets.rows() == P && targets.cols() == K, "bce_logits: target shape mismatch");
    check(static_cast<long>(row_valid.size()) == P, "bce_logits: valid mask size mismatch");
    long n_valid = 0;
    for (uint8_t vb : row_valid) n_valid += vb ? 1 : 0;
    if (n_valid == 0) throw std::invalid_argument("bce_logits: all rows ignored, mean undefined");
    const double N = static_cast<double>(n_valid) * static_cast<double>(K);
    double acc = 0.0;
    for (long i = 0; i < P; ++i) {
        if (!row_valid[static_cast<size_t>(i)]) continue;
        for (long j = 0; j < K; ++j) {
            const double x = logits->val(i, j), y = targets(i, j);
            acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        }
    }
    Mat out(1, 1);
    out(0, 0) = acc / N;
    Node* n = t.make(std::move(out), logits->requires_grad);
    if (n->requires_grad) {
        auto tg = std::make_shared<Mat>(targets);
        auto valid = std::make_shared<std::vector<uint8_t>>(row_valid);
        n->back = [n, logits, tg, valid, N] {
            const double g = n->grad(0, 0) / N;
            Mat dl = Mat::Zero(logits->val.rows(), logits->val.cols());
            for (long i = 0; i < logits->val.rows(); ++i) {
                if (!(*valid)[static_cast<size_t>(i)]) continue;
                for (long j = 0; j < logits->val.cols(); ++j) {
                    const double x = logits->val(i, j);
                    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                    dl(i, j) = g * (s - (*tg)(i, j));
                }
            }
            accumulate(logits, dl);
        };
    }
    return n;
}

}  // namespace attrseg::ad
