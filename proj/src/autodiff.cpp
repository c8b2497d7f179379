#include "maskfuse/autodiff.hpp"

#include <cmath>

namespace maskfuse {

Var Graph::input(Mat value, bool requires_grad) {
    return emplace(std::move(value), requires_grad);
}

Var Graph::emplace(Mat value, bool requires_grad) {
    auto v = std::make_shared<VarData>();
    v->value = std::move(value);
    v->requires_grad = requires_grad;
    v->graph = this;
    tape_.push_back(v);
    return v;
}

void Graph::backward(const Var& loss) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
        throw ContractViolation("backward: loss must be 1x1");
    if (loss->graph != this)
        throw ContractViolation("backward: loss belongs to another graph");
    accumulate_grad(loss, Mat(1, 1, 1.0));
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        const Var& v = *it;
        if (v->has_grad && v->backprop) v->backprop();
    }
}

void accumulate_grad(const Var& v, const Mat& delta) {
    if (!v->requires_grad) return;
    if (!v->has_grad) {
        v->grad = Mat(v->value.rows(), v->value.cols());
        v->has_grad = true;
    }
    if (!v->grad.same_shape(delta))
        throw ContractViolation("accumulate_grad: gradient shape mismatch");
    for (size_t i = 0; i < v->grad.size(); ++i) v->grad.raw()[i] += delta.raw()[i];
}

namespace {

Graph* common_graph(const Var& a, const Var& b) {
    if (a->graph != b->graph)
        throw ContractViolation("autodiff: operands belong to different graphs");
    return a->graph;
}

}  // namespace

Var vmatmul(const Var& a, const Var& b) {
    Graph* g = common_graph(a, b);
    Var out = g->emplace(matmul(a->value, b->value), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [a, b, o]() {
            if (a->requires_grad) accumulate_grad(a, matmul(o->grad, transpose(b->value)));
            if (b->requires_grad) accumulate_grad(b, matmul(transpose(a->value), o->grad));
        };
    }
    return out;
}

Var vtranspose(const Var& a) {
    Var out = a->graph->emplace(transpose(a->value), a->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [a, o]() { accumulate_grad(a, transpose(o->grad)); };
    }
    return out;
}

Var vadd(const Var& a, const Var& b) {
    Graph* g = common_graph(a, b);
    Var out = g->emplace(add(a->value, b->value), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [a, b, o]() {
            if (a->requires_grad) accumulate_grad(a, o->grad);
            if (b->requires_grad) accumulate_grad(b, o->grad);
        };
    }
    return out;
}

Var vsub(const Var& a, const Var& b) {
    Graph* g = common_graph(a, b);
    Var out = g->emplace(sub(a->value, b->value), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [a, b, o]() {
            if (a->requires_grad) accumulate_grad(a, o->grad);
            if (b->requires_grad) accumulate_grad(b, scale(o->grad, -1.0));
        };
    }
    return out;
}

Var vscale(const Var& a, double c) {
    Var out = a->graph->emplace(scale(a->value, c), a->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [a, o, c]() { accumulate_grad(a, scale(o->grad, c)); };
    }
    return out;
}

Var vtanh(const Var& a) {
    Var out = a->graph->emplace(tanh_elem(a->value), a->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [a, o]() {
            Mat d = o->grad;
            for (size_t i = 0; i < d.size(); ++i) {
                const double t = o->value.raw()[i];
                d.raw()[i] *= 1.0 - t * t;
            }
            accumulate_grad(a, d);
        };
    }
    return out;
}

Var vsoftmax_rows(const Var& logits) {
    Var out = logits->graph->emplace(softmax_rows(logits->value), logits->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [logits, o]() {
            // dx_ij = a_ij (g_ij − Σ_k g_ik a_ik)
            const Mat& a = o->value;
            const Mat& gmat = o->grad;
            Mat d(a.rows(), a.cols());
            for (int i = 0; i < a.rows(); ++i) {
                double inner = 0.0;
                for (int j = 0; j < a.cols(); ++j) inner += gmat(i, j) * a(i, j);
                for (int j = 0; j < a.cols(); ++j) d(i, j) = a(i, j) * (gmat(i, j) - inner);
            }
            accumulate_grad(logits, d);
        };
    }
    return out;
}

Var vadd_row(const Var& x, const Var& row) {
    Graph* g = common_graph(x, row);
    if (row->value.rows() != 1 || row->value.cols() != x->value.cols())
        throw ContractViolation("vadd_row: row must be 1×cols(x)");
    Mat v = x->value;
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) v(i, j) += row->value(0, j);
    Var out = g->emplace(std::move(v), x->requires_grad || row->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [x, row, o]() {
            if (x->requires_grad) accumulate_grad(x, o->grad);
            if (row->requires_grad) {
                Mat d(1, o->grad.cols());
                for (int i = 0; i < o->grad.rows(); ++i)
                    for (int j = 0; j < o->grad.cols(); ++j) d(0, j) += o->grad(i, j);
                accumulate_grad(row, d);
            }
        };
    }
    return out;
}

Var vcols(const Var& x, int c0, int c1) {
    if (c0 < 0 || c1 > x->value.cols() || c0 >= c1)
        throw ContractViolation("vcols: bad column range");
    Mat v(x->value.rows(), c1 - c0);
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) v(i, j) = x->value(i, c0 + j);
    Var out = x->graph->emplace(std::move(v), x->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [x, o, c0]() {
            Mat d(x->value.rows(), x->value.cols());
            for (int i = 0; i < o->grad.rows(); ++i)
                for (int j = 0; j < o->grad.cols(); ++j) d(i, c0 + j) = o->grad(i, j);
            accumulate_grad(x, d);
        };
    }
    return out;
}

Var vconcat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractViolation("vconcat_cols: empty part list");
    Graph* g = parts[0]->graph;
    const int rows = parts[0]->value.rows();
    int cols = 0;
    bool needs = false;
    for (const Var& p : parts) {
        if (p->graph != g) throw ContractViolation("vconcat_cols: mixed graphs");
        if (p->value.rows() != rows) throw ContractViolation("vconcat_cols: row mismatch");
        cols += p->value.cols();
        needs = needs || p->requires_grad;
    }
    Mat v(rows, cols);
    int off = 0;
    for (const Var& p : parts) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p->value.cols(); ++j) v(i, off + j) = p->value(i, j);
        off += p->value.cols();
    }
    Var out = g->emplace(std::move(v), needs);
    if (out->requires_grad) {
        Var o = out;
        std::vector<Var> ps = parts;
        out->backprop = [ps, o]() {
            int off = 0;
            for (const Var& p : ps) {
                if (p->requires_grad) {
                    Mat d(p->value.rows(), p->value.cols());
                    for (int i = 0; i < d.rows(); ++i)
                        for (int j = 0; j < d.cols(); ++j) d(i, j) = o->grad(i, off + j);
                    accumulate_grad(p, d);
                }
                off += p->value.cols();
            }
        };
    }
    return out;
}

Var vfrob_sq(const Var& x) {
    double s = 0.0;
    for (double v : x->value.raw()) s += v * v;
    Var out = x->graph->emplace(Mat(1, 1, s), x->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [x, o]() {
            accumulate_grad(x, scale(x->value, 2.0 * o->grad(0, 0)));
        };
    }
    return out;
}

Var vsqrt(const Var& x) {
    Mat v = x->value;
    for (double& e : v.raw()) e = std::sqrt(e);
    Var out = x->graph->emplace(std::move(v), x->requires_grad);
    if (out->requires_grad) {
        Var o = out;
        out->backprop = [x, o]() {
            Mat d = o->grad;
            for (size_t i = 0; i < d.size(); ++i) {
                const double r = o->value.raw()[i];
                // sqrt is flat-extended at 0: subgradient 0 keeps the loss
                // well-defined when reference and produced features coincide.
                d.raw()[i] = r > 0.0 ? d.raw()[i] / (2.0 * r) : 0.0;
            }
            accumulate_grad(x, d);
        };
    }
    return out;
}

}  // namespace maskfuse
