#include "monoflow/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <Eigen/Dense>

#include "monoflow/geometry.hpp"

namespace monoflow::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;

NodePtr make(Tensor value, std::vector<NodePtr> parents,
             std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(back);
    return n;
}

void require_same(const NodePtr& a, const NodePtr& b, const char* who) {
    if (!a->value.same_shape(b->value))
        throw ConfigError(std::string(who) + ": shape mismatch");
}

int reflect(int i, int n) {  // reflect-101
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

}  // namespace

NodePtr constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

NodePtr leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

void backward(const NodePtr& root) {
    if (root->value.numel() != 1) throw ConfigError("backward: root must be scalar");
    if (!root->requires_grad) return;

    // iterative postorder over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        bool descended = false;
        while (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_ready) {
            for (const auto& p : n->parents)
                if (p->requires_grad) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

double scalar_of(const NodePtr& n) {
    if (n->value.numel() != 1) throw ConfigError("scalar_of: not a scalar");
    return n->value.data[0];
}

// ---------------------------------------------------------------------------
// elementwise

NodePtr add(NodePtr a, NodePtr b) {
    require_same(a, b, "add");
    Tensor v(a->value.shape);
    v.data = a->value.data + b->value.data;
    return make(std::move(v), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad.data += n.grad.data;
        if (n.parents[1]->requires_grad) n.parents[1]->grad.data += n.grad.data;
    });
}

NodePtr sub(NodePtr a, NodePtr b) {
    require_same(a, b, "sub");
    Tensor v(a->value.shape);
    v.data = a->value.data - b->value.data;
    return make(std::move(v), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad.data += n.grad.data;
        if (n.parents[1]->requires_grad) n.parents[1]->grad.data -= n.grad.data;
    });
}

NodePtr mul(NodePtr a, NodePtr b) {
    require_same(a, b, "mul");
    Tensor v(a->value.shape);
    v.data = a->value.data * b->value.data;
    return make(std::move(v), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad)
            n.parents[0]->grad.data += n.grad.data * n.parents[1]->value.data;
        if (n.parents[1]->requires_grad)
            n.parents[1]->grad.data += n.grad.data * n.parents[0]->value.data;
    });
}

NodePtr div(NodePtr a, NodePtr b) {
    require_same(a, b, "div");
    Tensor v(a->value.shape);
    v.data = a->value.data / b->value.data;
    return make(std::move(v), {a, b}, [](Node& n) {
        const auto& bd = n.parents[1]->value.data;
        if (n.parents[0]->requires_grad) n.parents[0]->grad.data += n.grad.data / bd;
        if (n.parents[1]->requires_grad)
            n.parents[1]->grad.data -= n.grad.data * n.value.data / bd;
    });
}

NodePtr neg(NodePtr a) { return mul_scalar(std::move(a), -1.0); }

NodePtr add_scalar(NodePtr a, double s) {
    Tensor v(a->value.shape);
    v.data = a->value.data + s;
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data;
    });
}

NodePtr mul_scalar(NodePtr a, double s) {
    Tensor v(a->value.shape);
    v.data = a->value.data * s;
    return make(std::move(v), {a}, [s](Node& n) {
        n.parents[0]->grad.data += n.grad.data * s;
    });
}

NodePtr reciprocal(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = a->value.data.inverse();
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data -= n.grad.data * n.value.data.square();
    });
}

NodePtr abs_(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = a->value.data.abs();
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data * n.parents[0]->value.data.sign();
    });
}

NodePtr exp_(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = a->value.data.exp();
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data * n.value.data;
    });
}

NodePtr log_(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = a->value.data.log();
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data / n.parents[0]->value.data;
    });
}

NodePtr sqrt_(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = a->value.data.sqrt();
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data / (2.0 * n.value.data);
    });
}

NodePtr relu(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = a->value.data.max(0.0);
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data +=
            n.grad.data * (n.parents[0]->value.data > 0.0).cast<double>();
    });
}

NodePtr elu(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = (a->value.data > 0.0).select(a->value.data, a->value.data.exp() - 1.0);
    return make(std::move(v), {a}, [](Node& n) {
        const auto& x = n.parents[0]->value.data;
        n.parents[0]->grad.data +=
            n.grad.data * (x > 0.0).select(Eigen::ArrayXd::Ones(x.size()), n.value.data + 1.0);
    });
}

NodePtr sigmoid(NodePtr a) {
    Tensor v(a->value.shape);
    v.data = 1.0 / (1.0 + (-a->value.data).exp());
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data * n.value.data * (1.0 - n.value.data);
    });
}

NodePtr clamp(NodePtr a, double lo, double hi) {
    Tensor v(a->value.shape);
    v.data = a->value.data.max(lo).min(hi);
    return make(std::move(v), {a}, [lo, hi](Node& n) {
        const auto& x = n.parents[0]->value.data;
        n.parents[0]->grad.data +=
            n.grad.data * ((x >= lo) && (x <= hi)).cast<double>();
    });
}

NodePtr detach(NodePtr a) { return constant(a->value); }

NodePtr mul_bc(NodePtr a, NodePtr m) {
    if (a->value.shape.size() != 3 || m->value.shape.size() != 3 || m->value.shape[0] != 1 ||
        m->value.shape[1] != a->value.shape[1] || m->value.shape[2] != a->value.shape[2])
        throw ConfigError("mul_bc: expects {C,H,W} x {1,H,W}");
    const int C = a->value.shape[0];
    const auto hw = static_cast<std::int64_t>(a->value.shape[1]) * a->value.shape[2];
    Tensor v(a->value.shape);
    for (int c = 0; c < C; ++c)
        v.data.segment(c * hw, hw) = a->value.data.segment(c * hw, hw) * m->value.data;
    return make(std::move(v), {a, m}, [C, hw](Node& n) {
        for (int c = 0; c < C; ++c) {
            if (n.parents[0]->requires_grad)
                n.parents[0]->grad.data.segment(c * hw, hw) +=
                    n.grad.data.segment(c * hw, hw) * n.parents[1]->value.data;
            if (n.parents[1]->requires_grad)
                n.parents[1]->grad.data +=
                    n.grad.data.segment(c * hw, hw) * n.parents[0]->value.data.segment(c * hw, hw);
        }
    });
}

NodePtr min_elem(NodePtr a, NodePtr b) {
    require_same(a, b, "min_elem");
    Tensor v(a->value.shape);
    v.data = a->value.data.min(b->value.data);
    return make(std::move(v), {a, b}, [](Node& n) {
        const auto pick_a = (n.parents[0]->value.data <= n.parents[1]->value.data).cast<double>();
        if (n.parents[0]->requires_grad)
            n.parents[0]->grad.data += n.grad.data * pick_a;
        if (n.parents[1]->requires_grad)
            n.parents[1]->grad.data += n.grad.data * (1.0 - pick_a);
    });
}

NodePtr masked_fill(NodePtr a, const Tensor& mask, double fill) {
    if (mask.shape != a->value.shape) throw ConfigError("masked_fill: shape mismatch");
    Tensor v(a->value.shape);
    v.data = (mask.data > 0.5).select(a->value.data, fill);
    Tensor keep = mask;
    return make(std::move(v), {a}, [keep](Node& n) {
        n.parents[0]->grad.data += n.grad.data * (keep.data > 0.5).cast<double>();
    });
}

// ---------------------------------------------------------------------------
// reductions / shape

NodePtr sum(NodePtr a) {
    Tensor v = Tensor::scalar(a->value.data.sum());
    return make(std::move(v), {a}, [](Node& n) {
        n.parents[0]->grad.data += n.grad.data[0];
    });
}

NodePtr mean(NodePtr a) {
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    Tensor v = Tensor::scalar(a->value.data.mean());
    return make(std::move(v), {a}, [inv](Node& n) {
        n.parents[0]->grad.data += n.grad.data[0] * inv;
    });
}

NodePtr mean_finite(NodePtr a) {
    const auto finite = a->value.data.isFinite();
    const double count = static_cast<double>(finite.count());
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i)
        if (finite[i]) s += a->value.data[i];
    Tensor v = Tensor::scalar(count > 0 ? s / count : 0.0);
    return make(std::move(v), {a}, [count](Node& n) {
        if (count == 0) return;
        const auto f = n.parents[0]->value.data.isFinite().cast<double>();
        n.parents[0]->grad.data += (n.grad.data[0] / count) * f;
    });
}

NodePtr mean_channels(NodePtr a) {
    if (a->value.shape.size() != 3) throw ConfigError("mean_channels: expects {C,H,W}");
    const int C = a->value.shape[0];
    const auto hw = static_cast<std::int64_t>(a->value.shape[1]) * a->value.shape[2];
    Tensor v({1, a->value.shape[1], a->value.shape[2]});
    for (int c = 0; c < C; ++c) v.data += a->value.data.segment(c * hw, hw);
    v.data /= static_cast<double>(C);
    return make(std::move(v), {a}, [C, hw](Node& n) {
        for (int c = 0; c < C; ++c)
            n.parents[0]->grad.data.segment(c * hw, hw) += n.grad.data / static_cast<double>(C);
    });
}

NodePtr spatial_mean(NodePtr a) {
    if (a->value.shape.size() != 3) throw ConfigError("spatial_mean: expects {C,H,W}");
    const int C = a->value.shape[0];
    const auto hw = static_cast<std::int64_t>(a->value.shape[1]) * a->value.shape[2];
    Tensor v({C});
    for (int c = 0; c < C; ++c) v.data[c] = a->value.data.segment(c * hw, hw).mean();
    return make(std::move(v), {a}, [C, hw](Node& n) {
        for (int c = 0; c < C; ++c)
            n.parents[0]->grad.data.segment(c * hw, hw) +=
                n.grad.data[c] / static_cast<double>(hw);
    });
}

NodePtr div_by_scalar_node(NodePtr a, NodePtr s) {
    if (s->value.numel() != 1) throw ConfigError("div_by_scalar_node: divisor must be scalar");
    const double sv = s->value.data[0];
    Tensor v(a->value.shape);
    v.data = a->value.data / sv;
    return make(std::move(v), {a, s}, [sv](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad.data += n.grad.data / sv;
        if (n.parents[1]->requires_grad)
            n.parents[1]->grad.data[0] -= (n.grad.data * n.value.data).sum() / sv;
    });
}

NodePtr concat_ch(NodePtr a, NodePtr b) {
    if (a->value.shape.size() != 3 || b->value.shape.size() != 3 ||
        a->value.shape[1] != b->value.shape[1] || a->value.shape[2] != b->value.shape[2])
        throw ConfigError("concat_ch: spatial shapes disagree");
    const auto na = a->value.numel(), nb = b->value.numel();
    Tensor v({a->value.shape[0] + b->value.shape[0], a->value.shape[1], a->value.shape[2]});
    v.data.head(na) = a->value.data;
    v.data.tail(nb) = b->value.data;
    return make(std::move(v), {a, b}, [na, nb](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad.data += n.grad.data.head(na);
        if (n.parents[1]->requires_grad) n.parents[1]->grad.data += n.grad.data.tail(nb);
    });
}

NodePtr slice_ch(NodePtr a, int c0, int c1) {
    if (a->value.shape.size() != 3 || c0 < 0 || c1 > a->value.shape[0] || c0 >= c1)
        throw ConfigError("slice_ch: bad channel range");
    const auto hw = static_cast<std::int64_t>(a->value.shape[1]) * a->value.shape[2];
    Tensor v({c1 - c0, a->value.shape[1], a->value.shape[2]});
    v.data = a->value.data.segment(c0 * hw, (c1 - c0) * hw);
    return make(std::move(v), {a}, [c0, hw](Node& n) {
        n.parents[0]->grad.data.segment(c0 * hw, n.grad.data.size()) += n.grad.data;
    });
}

NodePtr slice_vec(NodePtr a, int i0, int i1) {
    if (a->value.shape.size() != 1 || i0 < 0 || i1 > a->value.shape[0] || i0 >= i1)
        throw ConfigError("slice_vec: bad range");
    Tensor v({i1 - i0});
    v.data = a->value.data.segment(i0, i1 - i0);
    return make(std::move(v), {a}, [i0](Node& n) {
        n.parents[0]->grad.data.segment(i0, n.grad.data.size()) += n.grad.data;
    });
}

NodePtr diff_x(NodePtr a) {
    if (a->value.shape.size() != 3) throw ConfigError("diff_x: expects {C,H,W}");
    const int C = a->value.shape[0], H = a->value.shape[1], W = a->value.shape[2];
    if (W < 2) throw ConfigError("diff_x: width < 2");
    Tensor v({C, H, W - 1});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W - 1; ++x)
                v.data[v.at3(c, y, x)] =
                    a->value.data[a->value.at3(c, y, x + 1)] - a->value.data[a->value.at3(c, y, x)];
    return make(std::move(v), {a}, [C, H, W](Node& n) {
        auto& g = n.parents[0]->grad.data;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W - 1; ++x) {
                    const double gg = n.grad.data[n.grad.at3(c, y, x)];
                    g[n.parents[0]->value.at3(c, y, x + 1)] += gg;
                    g[n.parents[0]->value.at3(c, y, x)] -= gg;
                }
    });
}

NodePtr diff_y(NodePtr a) {
    if (a->value.shape.size() != 3) throw ConfigError("diff_y: expects {C,H,W}");
    const int C = a->value.shape[0], H = a->value.shape[1], W = a->value.shape[2];
    if (H < 2) throw ConfigError("diff_y: height < 2");
    Tensor v({C, H - 1, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H - 1; ++y)
            for (int x = 0; x < W; ++x)
                v.data[v.at3(c, y, x)] =
                    a->value.data[a->value.at3(c, y + 1, x)] - a->value.data[a->value.at3(c, y, x)];
    return make(std::move(v), {a}, [C, H, W](Node& n) {
        auto& g = n.parents[0]->grad.data;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H - 1; ++y)
                for (int x = 0; x < W; ++x) {
                    const double gg = n.grad.data[n.grad.at3(c, y, x)];
                    g[n.parents[0]->value.at3(c, y + 1, x)] += gg;
                    g[n.parents[0]->value.at3(c, y, x)] -= gg;
                }
    });
}

// ---------------------------------------------------------------------------
// conv / pooling / upsampling

namespace {

// col is (Cin*k*k) x (Ho*Wo), column-major
void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, ColMat& col) {
    const int ci = x.shape[0], h = x.shape[1], w = x.shape[2];
    col.resize(ci * k * k, static_cast<Eigen::Index>(ho) * wo);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index o = static_cast<Eigen::Index>(oy) * wo + ox;
            double* dst = col.data() + o * col.rows();
            for (int c = 0; c < ci; ++c) {
                for (int ky = 0; ky < k; ++ky) {
                    const int y = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xx = ox * stride - pad + kx;
                        *dst++ = (y >= 0 && y < h && xx >= 0 && xx < w)
                                     ? x.data[x.at3(c, y, xx)]
                                     : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const ColMat& col, int ci, int h, int w, int k, int stride, int pad,
                int ho, int wo, Eigen::ArrayXd& out) {
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index o = static_cast<Eigen::Index>(oy) * wo + ox;
            const double* src = col.data() + o * col.rows();
            for (int c = 0; c < ci; ++c) {
                for (int ky = 0; ky < k; ++ky) {
                    const int y = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xx = ox * stride - pad + kx;
                        if (y >= 0 && y < h && xx >= 0 && xx < w)
                            out[(static_cast<std::int64_t>(c) * h + y) * w + xx] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

}  // namespace

NodePtr conv2d(NodePtr x, NodePtr w, NodePtr b, int ksize, int stride, int pad) {
    if (x->value.shape.size() != 3) throw ConfigError("conv2d: input must be {C,H,W}");
    const int ci = x->value.shape[0], h = x->value.shape[1], wid = x->value.shape[2];
    const int co = w->value.shape[0];
    if (w->value.shape.size() != 2 || w->value.shape[1] != ci * ksize * ksize)
        throw ConfigError("conv2d: weight must be {Cout, Cin*k*k}");
    if (b->value.shape.size() != 1 || b->value.shape[0] != co)
        throw ConfigError("conv2d: bias must be {Cout}");
    const int ho = (h + 2 * pad - ksize) / stride + 1;
    const int wo = (wid + 2 * pad - ksize) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ConfigError("conv2d: empty output");

    ColMat col;
    im2col(x->value, ksize, stride, pad, ho, wo, col);
    Tensor v({co, ho, wo});
    {
        Eigen::Map<RowMat> out(v.data.data(), co, static_cast<Eigen::Index>(ho) * wo);
        Eigen::Map<const RowMat> wm(w->value.data.data(), co, ci * ksize * ksize);
        out.noalias() = wm * col;
        Eigen::Map<const Eigen::VectorXd> bv(b->value.data.data(), co);
        out.colwise() += bv;
    }

    return make(std::move(v), {x, w, b}, [ksize, stride, pad, ci, h, wid, co, ho, wo](Node& n) {
        Eigen::Map<const RowMat> g(n.grad.data.data(), co, static_cast<Eigen::Index>(ho) * wo);
        Node& xn = *n.parents[0];
        Node& wn = *n.parents[1];
        Node& bn = *n.parents[2];

        if (bn.requires_grad) {
            Eigen::Map<Eigen::VectorXd> gb(bn.grad.data.data(), co);
            gb += g.rowwise().sum();
        }
        if (wn.requires_grad) {
            ColMat col;
            im2col(xn.value, ksize, stride, pad, ho, wo, col);
            Eigen::Map<RowMat> gw(wn.grad.data.data(), co, ci * ksize * ksize);
            gw.noalias() += g * col.transpose();
        }
        if (xn.requires_grad) {
            Eigen::Map<const RowMat> wm(wn.value.data.data(), co, ci * ksize * ksize);
            ColMat gcol = wm.transpose() * g;
            col2im_add(gcol, ci, h, wid, ksize, stride, pad, ho, wo, xn.grad.data);
        }
    });
}

NodePtr upsample2x(NodePtr a) {
    if (a->value.shape.size() != 3) throw ConfigError("upsample2x: expects {C,H,W}");
    const int C = a->value.shape[0], H = a->value.shape[1], W = a->value.shape[2];
    Tensor v({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int x = 0; x < 2 * W; ++x)
                v.data[v.at3(c, y, x)] = a->value.data[a->value.at3(c, y / 2, x / 2)];
    return make(std::move(v), {a}, [C, H, W](Node& n) {
        auto& g = n.parents[0]->grad.data;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int x = 0; x < 2 * W; ++x)
                    g[n.parents[0]->value.at3(c, y / 2, x / 2)] +=
                        n.grad.data[n.grad.at3(c, y, x)];
    });
}

NodePtr avgpool3x3_reflect(NodePtr a) {
    if (a->value.shape.size() != 3) throw ConfigError("avgpool3x3_reflect: expects {C,H,W}");
    const int C = a->value.shape[0], H = a->value.shape[1], W = a->value.shape[2];
    Tensor v({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        s += a->value.data[a->value.at3(c, reflect(y + dy, H), reflect(x + dx, W))];
                v.data[v.at3(c, y, x)] = s / 9.0;
            }
    return make(std::move(v), {a}, [C, H, W](Node& n) {
        auto& g = n.parents[0]->grad.data;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double gg = n.grad.data[n.grad.at3(c, y, x)] / 9.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx)
                            g[n.parents[0]->value.at3(c, reflect(y + dy, H), reflect(x + dx, W))] += gg;
                }
    });
}

// ---------------------------------------------------------------------------
// geometry bridges

NodePtr so3_exp_node(NodePtr w) {
    if (w->value.shape != std::vector<int>{3}) throw ConfigError("so3_exp_node: expects {3}");
    const geom::Vec3 wv(w->value.data[0], w->value.data[1], w->value.data[2]);
    const geom::Mat3 r = geom::so3_exp(wv);
    Tensor v({9});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) v.data[3 * i + j] = r(i, j);
    return make(std::move(v), {w}, [](Node& n) {
        const auto& wd = n.parents[0]->value.data;
        const geom::Vec3 wv(wd[0], wd[1], wd[2]);
        geom::Mat3 r, g;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                r(i, j) = n.value.data[3 * i + j];
                g(i, j) = n.grad.data[3 * i + j];
            }
        // dL/dw = J_r(w)^T vee(R^T G - G^T R)
        const geom::Mat3 bmat = r.transpose() * g;
        const geom::Vec3 vvec(bmat(2, 1) - bmat(1, 2), bmat(0, 2) - bmat(2, 0),
                              bmat(1, 0) - bmat(0, 1));
        const double t2 = wv.squaredNorm();
        const double t = std::sqrt(t2);
        geom::Mat3 wx;
        wx << 0, -wv.z(), wv.y(), wv.z(), 0, -wv.x(), -wv.y(), wv.x(), 0;
        double b, c;  // (1-cos)/t^2 and (t-sin)/t^3
        if (t < 1e-5) {
            b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
            c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
        } else {
            b = (1.0 - std::cos(t)) / t2;
            c = (t - std::sin(t)) / (t2 * t);
        }
        const geom::Mat3 jr = geom::Mat3::Identity() - b * wx + c * (wx * wx);
        const geom::Vec3 gw = jr.transpose() * vvec;
        for (int i = 0; i < 3; ++i) n.parents[0]->grad.data[i] += gw[i];
    });
}

NodePtr backproject_node(NodePtr depth, double fx, double fy, double cx, double cy) {
    if (depth->value.shape.size() != 3 || depth->value.shape[0] != 1)
        throw ConfigError("backproject_node: expects {1,H,W}");
    const int H = depth->value.shape[1], W = depth->value.shape[2];
    const auto hw = static_cast<std::int64_t>(H) * W;
    Tensor v({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
            const double d = depth->value.data[i];
            v.data[i] = d * (x - cx) / fx;
            v.data[hw + i] = d * (y - cy) / fy;
            v.data[2 * hw + i] = d;
        }
    return make(std::move(v), {depth}, [fx, fy, cx, cy, H, W, hw](Node& n) {
        auto& g = n.parents[0]->grad.data;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
                g[i] += n.grad.data[i] * (x - cx) / fx +
                        n.grad.data[hw + i] * (y - cy) / fy + n.grad.data[2 * hw + i];
            }
    });
}

NodePtr rigid_transform(NodePtr points, NodePtr rot9, NodePtr trans3) {
    if (points->value.shape.size() != 3 || points->value.shape[0] != 3)
        throw ConfigError("rigid_transform: points must be {3,H,W}");
    if (rot9->value.shape != std::vector<int>{9} || trans3->value.shape != std::vector<int>{3})
        throw ConfigError("rigid_transform: pose shapes must be {9} and {3}");
    const int H = points->value.shape[1], W = points->value.shape[2];
    const auto hw = static_cast<std::int64_t>(H) * W;
    const auto& r = rot9->value.data;
    const auto& t = trans3->value.data;
    Tensor v({3, H, W});
    for (std::int64_t i = 0; i < hw; ++i) {
        const double px = points->value.data[i];
        const double py = points->value.data[hw + i];
        const double pz = points->value.data[2 * hw + i];
        v.data[i] = r[0] * px + r[1] * py + r[2] * pz + t[0] - px;
        v.data[hw + i] = r[3] * px + r[4] * py + r[5] * pz + t[1] - py;
        v.data[2 * hw + i] = r[6] * px + r[7] * py + r[8] * pz + t[2] - pz;
    }
    return make(std::move(v), {points, rot9, trans3}, [H, W, hw](Node& n) {
        Node& pn = *n.parents[0];
        Node& rn = *n.parents[1];
        Node& tn = *n.parents[2];
        const auto& r = rn.value.data;
        for (std::int64_t i = 0; i < hw; ++i) {
            const double g0 = n.grad.data[i];
            const double g1 = n.grad.data[hw + i];
            const double g2 = n.grad.data[2 * hw + i];
            const double px = pn.value.data[i];
            const double py = pn.value.data[hw + i];
            const double pz = pn.value.data[2 * hw + i];
            if (pn.requires_grad) {
                pn.grad.data[i] += r[0] * g0 + r[3] * g1 + r[6] * g2 - g0;
                pn.grad.data[hw + i] += r[1] * g0 + r[4] * g1 + r[7] * g2 - g1;
                pn.grad.data[2 * hw + i] += r[2] * g0 + r[5] * g1 + r[8] * g2 - g2;
            }
            if (rn.requires_grad) {
                rn.grad.data[0] += g0 * px; rn.grad.data[1] += g0 * py; rn.grad.data[2] += g0 * pz;
                rn.grad.data[3] += g1 * px; rn.grad.data[4] += g1 * py; rn.grad.data[5] += g1 * pz;
                rn.grad.data[6] += g2 * px; rn.grad.data[7] += g2 * py; rn.grad.data[8] += g2 * pz;
            }
            if (tn.requires_grad) {
                tn.grad.data[0] += g0;
                tn.grad.data[1] += g1;
                tn.grad.data[2] += g2;
            }
        }
    });
}

WarpOut warp_bilinear(const Tensor& source, NodePtr warp_points,
                      double fx, double fy, double cx, double cy) {
    if (source.shape.size() != 3) throw ConfigError("warp_bilinear: source must be {C,H,W}");
    if (warp_points->value.shape.size() != 3 || warp_points->value.shape[0] != 3)
        throw ConfigError("warp_bilinear: warp points must be {3,H,W}");
    const int C = source.shape[0];
    const int H = warp_points->value.shape[1], W = warp_points->value.shape[2];
    if (source.shape[1] != H || source.shape[2] != W)
        throw ConfigError("warp_bilinear: source/points spatial mismatch");
    const auto hw = static_cast<std::int64_t>(H) * W;
    constexpr double kZEps = 1e-6;

    Tensor out({C, H, W});
    Tensor valid({1, H, W});
    // cached per-pixel sampling state for the backward pass
    Tensor us({1, H, W}), vs({1, H, W});

    const double kNoSample = std::numeric_limits<double>::quiet_NaN();
    for (std::int64_t i = 0; i < hw; ++i) {
        const double X = warp_points->value.data[i];
        const double Y = warp_points->value.data[hw + i];
        const double Z = warp_points->value.data[2 * hw + i];
        if (!(Z > kZEps) || !std::isfinite(X) || !std::isfinite(Y) || !std::isfinite(Z)) {
            us.data[i] = kNoSample;
            continue;
        }
        const double u = fx * X / Z + cx;
        const double v = fy * Y / Z + cy;
        const bool inb = u >= 0.0 && u <= W - 1.0 && v >= 0.0 && v <= H - 1.0;
        valid.data[i] = inb ? 1.0 : 0.0;
        const double uc = std::min(std::max(u, 0.0), double(W - 1));
        const double vc = std::min(std::max(v, 0.0), double(H - 1));
        us.data[i] = u;
        vs.data[i] = v;
        const int x0 = static_cast<int>(std::floor(uc));
        const int y0 = static_cast<int>(std::floor(vc));
        const int x1 = std::min(x0 + 1, W - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wx = uc - x0, wy = vc - y0;
        for (int c = 0; c < C; ++c) {
            const double i00 = source.data[source.at3(c, y0, x0)];
            const double i01 = source.data[source.at3(c, y0, x1)];
            const double i10 = source.data[source.at3(c, y1, x0)];
            const double i11 = source.data[source.at3(c, y1, x1)];
            out.data[(static_cast<std::int64_t>(c) * H) * W + i] =
                (1 - wy) * ((1 - wx) * i00 + wx * i01) + wy * ((1 - wx) * i10 + wx * i11);
        }
    }

    Tensor src = source;
    auto node = make(std::move(out), {warp_points},
                     [src, us, vs, fx, fy, C, H, W, hw](Node& n) {
        Node& pn = *n.parents[0];
        for (std::int64_t i = 0; i < hw; ++i) {
            const double u = us.data[i];
            if (std::isnan(u)) continue;  // no sample taken at this pixel
            const double v = vs.data[i];
            const double uc = std::min(std::max(u, 0.0), double(W - 1));
            const double vc = std::min(std::max(v, 0.0), double(H - 1));
            const int x0 = static_cast<int>(std::floor(uc));
            const int y0 = static_cast<int>(std::floor(vc));
            const int x1 = std::min(x0 + 1, W - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double wx = uc - x0, wy = vc - y0;
            const bool du_live = u > 0.0 && u < W - 1.0;  // clamp kills the gradient outside
            const bool dv_live = v > 0.0 && v < H - 1.0;
            double gu = 0.0, gv = 0.0;
            for (int c = 0; c < C; ++c) {
                const double g = n.grad.data[(static_cast<std::int64_t>(c) * H) * W + i];
                if (g == 0.0) continue;
                const double i00 = src.data[src.at3(c, y0, x0)];
                const double i01 = src.data[src.at3(c, y0, x1)];
                const double i10 = src.data[src.at3(c, y1, x0)];
                const double i11 = src.data[src.at3(c, y1, x1)];
                if (du_live) gu += g * ((1 - wy) * (i01 - i00) + wy * (i11 - i10));
                if (dv_live) gv += g * ((1 - wx) * (i10 - i00) + wx * (i11 - i01));
            }
            if (gu == 0.0 && gv == 0.0) continue;
            const double X = pn.value.data[i];
            const double Y = pn.value.data[hw + i];
            const double Z = pn.value.data[2 * hw + i];
            pn.grad.data[i] += gu * fx / Z;
            pn.grad.data[hw + i] += gv * fy / Z;
            pn.grad.data[2 * hw + i] += -(gu * fx * X + gv * fy * Y) / (Z * Z);
        }
    });
    return {node, valid};
}

}  // namespace monoflow::nn
