#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "maskfuse/mat.hpp"

namespace maskfuse {

// Reverse-mode tape over Mat. A Graph owns the nodes in creation order, which
// is a topological order, so backward() is a single reverse sweep. Values are
// computed eagerly at op-construction time; gradients only exist after
// backward(). One graph per forward pass; nothing here is thread-shared.
class Graph;

struct VarData {
    Mat value;
    Mat grad;                // allocated on first accumulation
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void()> backprop;  // pulls this->grad into parents
    Graph* graph = nullptr;
};

using Var = std::shared_ptr<VarData>;

class Graph {
public:
    Var input(Mat value, bool requires_grad = false);

    // Seeds loss (must be 1×1) with gradient 1 and sweeps the tape.
    void backward(const Var& loss);

    size_t size() const { return tape_.size(); }

    // internal: ops register their result nodes here
    Var emplace(Mat value, bool requires_grad);

private:
    std::vector<Var> tape_;
};

void accumulate_grad(const Var& v, const Mat& delta);

Var vmatmul(const Var& a, const Var& b);
Var vtranspose(const Var& a);
Var vadd(const Var& a, const Var& b);
Var vsub(const Var& a, const Var& b);
Var vscale(const Var& a, double c);
Var vtanh(const Var& a);
Var vsoftmax_rows(const Var& logits);
// x [P×d] plus a [1×d] row broadcast over all rows.
Var vadd_row(const Var& x, const Var& row);
Var vcols(const Var& x, int c0, int c1);              // column slice [c0, c1)
Var vconcat_cols(const std::vector<Var>& parts);
Var vfrob_sq(const Var& x);                           // 1×1 sum of squares
Var vsqrt(const Var& x);  // elementwise; gradient at 0 defined as 0

}  // namespace maskfuse
