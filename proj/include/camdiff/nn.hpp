#pragma once

#include <Eigen/Dense>
#include <bit>
#include <fstream>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "camdiff/rng.hpp"

namespace camdiff::nn {

// Row-major 2D float tensor. Activations are [rows x cols]; higher-rank
// data (videos, feature volumes) is flattened to rows of channels with the
// spatial bookkeeping kept by the caller.
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {}

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor randn(int r, int c, Rng& rng, double stddev) {
        Tensor t(r, c);
        for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline EMap emap(Tensor& t) { return EMap(t.data.data(), t.rows, t.cols); }
inline ECMap emap(const Tensor& t) { return ECMap(t.data.data(), t.rows, t.cols); }

// ---- Autodiff graph -------------------------------------------------------

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer() {
        if (grad.rows != value.rows || grad.cols != value.cols)
            grad = Tensor::zeros(value.rows, value.cols);
        return grad;
    }
};

// Gradient recording switch (RAII); sampling runs with it off.
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = saved; }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline Var leaf(Tensor t, bool want_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = want_grad && grad_enabled();
    return n;
}

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_enabled()) {
        for (const auto& p : parents) n->requires_grad |= p->requires_grad;
        if (n->requires_grad) {
            n->parents = std::move(parents);
            n->backward = std::move(backward);
        }
    }
    return n;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// Runs the reverse pass from a scalar loss node.
inline void backward(const Var& loss) {
    if (loss->value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss->requires_grad) return;

    // Iterative topological order (graphs get deep at many blocks x steps).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && visited.count(node)) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (!visited.count(parent) && parent->requires_grad)
                stack.emplace_back(parent, 0);
        } else {
            visited.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->grad_buffer().data[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.numel() > 0) n->backward(*n);
    }
}

// ---- Elementwise and linear algebra ops -----------------------------------

inline Var add(const Var& a, const Var& b) {
    detail::check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    emap(out) += emap(b->value);
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) emap(a->grad_buffer()) += emap(n.grad);
        if (b->requires_grad) emap(b->grad_buffer()) += emap(n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    emap(out) -= emap(b->value);
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) emap(a->grad_buffer()) += emap(n.grad);
        if (b->requires_grad) emap(b->grad_buffer()) -= emap(n.grad);
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    emap(out).array() *= emap(b->value).array();
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            emap(a->grad_buffer()).array() += emap(n.grad).array() * emap(b->value).array();
        if (b->requires_grad)
            emap(b->grad_buffer()).array() += emap(n.grad).array() * emap(a->value).array();
    });
}

inline Var scale(const Var& a, float s) {
    Tensor out = a->value;
    emap(out) *= s;
    return detail::make_op(std::move(out), {a}, [a, s](Node& n) {
        if (a->requires_grad) emap(a->grad_buffer()) += s * emap(n.grad);
    });
}

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.cols != b->value.rows) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor out(a->value.rows, b->value.cols);
    emap(out).noalias() = emap(a->value) * emap(b->value);
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            emap(a->grad_buffer()).noalias() += emap(n.grad) * emap(b->value).transpose();
        if (b->requires_grad)
            emap(b->grad_buffer()).noalias() += emap(a->value).transpose() * emap(n.grad);
    });
}

// y = x W^T + b with x [n x din], W [dout x din], b [1 x dout] (optional).
inline Var linear(const Var& x, const Var& W, const Var& b) {
    if (x->value.cols != W->value.cols) throw std::invalid_argument("linear: dim mismatch");
    Tensor out(x->value.rows, W->value.rows);
    emap(out).noalias() = emap(x->value) * emap(W->value).transpose();
    if (b) emap(out).rowwise() += emap(b->value).row(0);
    std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
    return detail::make_op(std::move(out), std::move(parents), [x, W, b](Node& n) {
        if (x->requires_grad)
            emap(x->grad_buffer()).noalias() += emap(n.grad) * emap(W->value);
        if (W->requires_grad)
            emap(W->grad_buffer()).noalias() += emap(n.grad).transpose() * emap(x->value);
        if (b && b->requires_grad)
            emap(b->grad_buffer()).row(0) += emap(n.grad).colwise().sum();
    });
}

inline Var add_rowvector(const Var& x, const Var& v) {
    if (v->value.rows != 1 || v->value.cols != x->value.cols)
        throw std::invalid_argument("add_rowvector: shape mismatch");
    Tensor out = x->value;
    emap(out).rowwise() += emap(v->value).row(0);
    return detail::make_op(std::move(out), {x, v}, [x, v](Node& n) {
        if (x->requires_grad) emap(x->grad_buffer()) += emap(n.grad);
        if (v->requires_grad) emap(v->grad_buffer()).row(0) += emap(n.grad).colwise().sum();
    });
}

inline Var gelu(const Var& x) {
    constexpr float c = 0.79788456080286535588f;  // sqrt(2/pi)
    constexpr float a = 0.044715f;
    Tensor out = x->value;
    for (auto& v : out.data) {
        float u = c * (v + a * v * v * v);
        v = 0.5f * v * (1.0f + std::tanh(u));
    }
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        auto& g = x->grad_buffer();
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            float v = x->value.data[k];
            float u = c * (v + a * v * v * v);
            float th = std::tanh(u);
            float sech2 = 1.0f - th * th;
            float d = 0.5f * (1.0f + th) + 0.5f * v * sech2 * c * (1.0f + 3.0f * a * v * v);
            g.data[k] += n.grad.data[k] * d;
        }
    });
}

inline Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f) {
    const int n = x->value.rows, d = x->value.cols;
    if (gamma->value.cols != d || beta->value.cols != d)
        throw std::invalid_argument("layernorm: parameter dim mismatch");
    Tensor out(n, d);
    auto xhat = std::make_shared<Tensor>(n, d);
    auto inv_std = std::make_shared<std::vector<float>>(n);
    for (int r = 0; r < n; ++r) {
        const float* xv = &x->value.data[static_cast<std::size_t>(r) * d];
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += xv[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xv[c] - mean) * (xv[c] - mean);
        var /= d;
        float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[r] = istd;
        for (int c = 0; c < d; ++c) {
            float xh = (xv[c] - static_cast<float>(mean)) * istd;
            xhat->at(r, c) = xh;
            out.at(r, c) = xh * gamma->value.at(0, c) + beta->value.at(0, c);
        }
    }
    return detail::make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Node& n) {
        const int rows = x->value.rows, d = x->value.cols;
        if (gamma->requires_grad) {
            auto& gg = gamma->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < d; ++c) gg.at(0, c) += n.grad.at(r, c) * xhat->at(r, c);
        }
        if (beta->requires_grad) {
            auto& gb = beta->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < d; ++c) gb.at(0, c) += n.grad.at(r, c);
        }
        if (x->requires_grad) {
            auto& gx = x->grad_buffer();
            for (int r = 0; r < rows; ++r) {
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int c = 0; c < d; ++c) {
                    float dxh = n.grad.at(r, c) * gamma->value.at(0, c);
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xhat->at(r, c);
                }
                const float m1 = static_cast<float>(sum_dxh / d);
                const float m2 = static_cast<float>(sum_dxh_xh / d);
                for (int c = 0; c < d; ++c) {
                    float dxh = n.grad.at(r, c) * gamma->value.at(0, c);
                    gx.at(r, c) += (*inv_std)[r] * (dxh - m1 - xhat->at(r, c) * m2);
                }
            }
        }
    });
}

inline Var concat_rows(const Var& a, const Var& b) {
    if (a->value.cols != b->value.cols) throw std::invalid_argument("concat_rows: col mismatch");
    Tensor out(a->value.rows + b->value.rows, a->value.cols);
    std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(),
              out.data.begin() + a->value.data.size());
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        const std::size_t na = a->value.data.size();
        if (a->requires_grad) {
            auto& ga = a->grad_buffer();
            for (std::size_t k = 0; k < na; ++k) ga.data[k] += n.grad.data[k];
        }
        if (b->requires_grad) {
            auto& gb = b->grad_buffer();
            for (std::size_t k = 0; k < b->value.data.size(); ++k)
                gb.data[k] += n.grad.data[na + k];
        }
    });
}

inline Var concat_features(const Var& a, const Var& b) {
    if (a->value.rows != b->value.rows) throw std::invalid_argument("concat_features: row mismatch");
    Tensor out(a->value.rows, a->value.cols + b->value.cols);
    emap(out).leftCols(a->value.cols) = emap(a->value);
    emap(out).rightCols(b->value.cols) = emap(b->value);
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            emap(a->grad_buffer()) += emap(n.grad).leftCols(a->value.cols);
        if (b->requires_grad)
            emap(b->grad_buffer()) += emap(n.grad).rightCols(b->value.cols);
    });
}

inline Var slice_rows(const Var& x, int start, int count) {
    if (start < 0 || start + count > x->value.rows)
        throw std::invalid_argument("slice_rows: out of range");
    Tensor out(count, x->value.cols);
    emap(out) = emap(x->value).middleRows(start, count);
    return detail::make_op(std::move(out), {x}, [x, start, count](Node& n) {
        if (x->requires_grad)
            emap(x->grad_buffer()).middleRows(start, count) += emap(n.grad);
    });
}

// Adds `r` into rows [offset, offset + r.rows) of x.
inline Var add_to_rows(const Var& x, const Var& r, int offset) {
    if (offset < 0 || offset + r->value.rows > x->value.rows ||
        r->value.cols != x->value.cols)
        throw std::invalid_argument("add_to_rows: shape mismatch");
    Tensor out = x->value;
    emap(out).middleRows(offset, r->value.rows) += emap(r->value);
    return detail::make_op(std::move(out), {x, r}, [x, r, offset](Node& n) {
        if (x->requires_grad) emap(x->grad_buffer()) += emap(n.grad);
        if (r->requires_grad)
            emap(r->grad_buffer()) += emap(n.grad).middleRows(offset, r->value.rows);
    });
}

inline Var embedding_rows(const Var& table, const std::vector<int>& ids) {
    Tensor out(static_cast<int>(ids.size()), table->value.cols);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] < 0 || ids[k] >= table->value.rows)
            throw std::invalid_argument("embedding_rows: id out of range");
        emap(out).row(static_cast<int>(k)) = emap(table->value).row(ids[k]);
    }
    return detail::make_op(std::move(out), {table}, [table, ids](Node& n) {
        if (!table->requires_grad) return;
        auto g = emap(table->grad_buffer());
        for (std::size_t k = 0; k < ids.size(); ++k)
            g.row(ids[k]) += emap(n.grad).row(static_cast<int>(k));
    });
}

// Gathers rows of `table` by index, with -1 producing a zero row. Used for
// identity-token embedding deltas where only some prompt slots have one.
inline Var gather_rows_or_zero(const Var& table, const std::vector<int>& ids) {
    Tensor out(static_cast<int>(ids.size()), table->value.cols);
    for (std::size_t k = 0; k < ids.size(); ++k)
        if (ids[k] >= 0) emap(out).row(static_cast<int>(k)) = emap(table->value).row(ids[k]);
    return detail::make_op(std::move(out), {table}, [table, ids](Node& n) {
        if (!table->requires_grad) return;
        auto g = emap(table->grad_buffer());
        for (std::size_t k = 0; k < ids.size(); ++k)
            if (ids[k] >= 0) g.row(ids[k]) += emap(n.grad).row(static_cast<int>(k));
    });
}

// ---- Losses ----------------------------------------------------------------

// Mean of mask-weighted squared error: sum(mask (p-t)^2) / sum(mask).
// Reductions accumulate in double so finite-difference checks stay clean.
inline Var mse_masked(const Var& pred, const Tensor& target, const Tensor* mask = nullptr) {
    detail::check_same_shape(pred->value, target, "mse_masked");
    double denom = 0.0, acc = 0.0;
    if (mask) {
        detail::check_same_shape(pred->value, *mask, "mse_masked(mask)");
        for (std::size_t k = 0; k < target.data.size(); ++k) {
            double d = static_cast<double>(pred->value.data[k]) - target.data[k];
            acc += mask->data[k] * d * d;
            denom += mask->data[k];
        }
    } else {
        for (std::size_t k = 0; k < target.data.size(); ++k) {
            double d = static_cast<double>(pred->value.data[k]) - target.data[k];
            acc += d * d;
        }
        denom = static_cast<double>(target.data.size());
    }
    if (denom <= 0.0) throw std::invalid_argument("mse_masked: empty mask");
    Tensor out(1, 1);
    out.data[0] = static_cast<float>(acc / denom);
    auto tgt = std::make_shared<Tensor>(target);
    auto msk = mask ? std::make_shared<Tensor>(*mask) : nullptr;
    return detail::make_op(std::move(out), {pred}, [pred, tgt, msk, denom](Node& n) {
        if (!pred->requires_grad) return;
        auto& g = pred->grad_buffer();
        const float s = n.grad.data[0] * static_cast<float>(2.0 / denom);
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            float d = pred->value.data[k] - tgt->data[k];
            float w = msk ? msk->data[k] : 1.0f;
            g.data[k] += s * w * d;
        }
    });
}

// Mean cross-entropy over rows of logits with integer targets.
inline Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
    const int n = logits->value.rows, C = logits->value.cols;
    if (static_cast<int>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy: target count mismatch");
    auto probs = std::make_shared<Tensor>(n, C);
    double loss = 0.0;
    for (int r = 0; r < n; ++r) {
        const float* lv = &logits->value.data[static_cast<std::size_t>(r) * C];
        float mx = lv[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, lv[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(lv[c]) - mx);
        for (int c = 0; c < C; ++c)
            probs->at(r, c) = static_cast<float>(std::exp(static_cast<double>(lv[c]) - mx) / z);
        loss -= std::log(std::max(1e-30, static_cast<double>(probs->at(r, targets[r]))));
    }
    Tensor out(1, 1);
    out.data[0] = static_cast<float>(loss / n);
    return detail::make_op(std::move(out), {logits}, [logits, probs, targets](Node& n) {
        if (!logits->requires_grad) return;
        const int rows = logits->value.rows, C = logits->value.cols;
        auto& g = logits->grad_buffer();
        const float s = n.grad.data[0] / rows;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < C; ++c)
                g.at(r, c) += s * (probs->at(r, c) - (c == targets[r] ? 1.0f : 0.0f));
    });
}

// ---- Grouped attention ------------------------------------------------------

// Sparse multi-head attention: each group lists query rows and key/value
// rows; every row of the sequence must appear as a query in exactly one
// group per call.
struct AttentionGroup {
    std::vector<int> q_idx;
    std::vector<int> kv_idx;
};
struct AttentionPattern {
    std::vector<AttentionGroup> groups;
    int sequence_rows = 0;
};

inline Var grouped_attention(const Var& qkv, int heads,
                             const std::shared_ptr<const AttentionPattern>& pattern) {
    const int n = qkv->value.rows;
    if (qkv->value.cols % 3 != 0) throw std::invalid_argument("grouped_attention: qkv cols");
    const int width = qkv->value.cols / 3;
    if (width % heads != 0) throw std::invalid_argument("grouped_attention: heads");
    if (pattern->sequence_rows != n)
        throw std::invalid_argument("grouped_attention: pattern size mismatch");
    const int dh = width / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor out(n, width);
    auto probs = std::make_shared<std::vector<EMat>>();
    probs->reserve(pattern->groups.size() * heads);
    auto qkv_m = emap(qkv->value);

    for (const auto& grp : pattern->groups) {
        const int nq = static_cast<int>(grp.q_idx.size());
        const int nk = static_cast<int>(grp.kv_idx.size());
        for (int h = 0; h < heads; ++h) {
            EMat Q(nq, dh), K(nk, dh), V(nk, dh);
            for (int r = 0; r < nq; ++r) Q.row(r) = qkv_m.block(grp.q_idx[r], h * dh, 1, dh);
            for (int r = 0; r < nk; ++r) {
                K.row(r) = qkv_m.block(grp.kv_idx[r], width + h * dh, 1, dh);
                V.row(r) = qkv_m.block(grp.kv_idx[r], 2 * width + h * dh, 1, dh);
            }
            EMat S = (Q * K.transpose()) * scale;
            for (int r = 0; r < nq; ++r) {
                float mx = S.row(r).maxCoeff();
                S.row(r) = (S.row(r).array() - mx).exp();
                S.row(r) /= S.row(r).sum();
            }
            EMat O = S * V;
            auto out_m = emap(out);
            for (int r = 0; r < nq; ++r) out_m.block(grp.q_idx[r], h * dh, 1, dh) = O.row(r);
            probs->push_back(std::move(S));
        }
    }

    return detail::make_op(std::move(out), {qkv},
                           [qkv, heads, pattern, probs, width, dh, scale](Node& n) {
        if (!qkv->requires_grad) return;
        auto& gq = qkv->grad_buffer();
        auto gqkv = emap(gq);
        auto qkv_m = emap(qkv->value);
        auto gout = emap(n.grad);
        std::size_t pi = 0;
        for (const auto& grp : pattern->groups) {
            const int nq = static_cast<int>(grp.q_idx.size());
            const int nk = static_cast<int>(grp.kv_idx.size());
            for (int h = 0; h < heads; ++h) {
                const EMat& P = (*probs)[pi++];
                EMat Q(nq, dh), K(nk, dh), V(nk, dh), dO(nq, dh);
                for (int r = 0; r < nq; ++r) {
                    Q.row(r) = qkv_m.block(grp.q_idx[r], h * dh, 1, dh);
                    dO.row(r) = gout.block(grp.q_idx[r], h * dh, 1, dh);
                }
                for (int r = 0; r < nk; ++r) {
                    K.row(r) = qkv_m.block(grp.kv_idx[r], width + h * dh, 1, dh);
                    V.row(r) = qkv_m.block(grp.kv_idx[r], 2 * width + h * dh, 1, dh);
                }
                EMat dV = P.transpose() * dO;
                EMat dP = dO * V.transpose();
                EMat dS(nq, nk);
                for (int r = 0; r < nq; ++r) {
                    float dot = dP.row(r).dot(P.row(r));
                    dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
                }
                dS *= scale;
                EMat dQ = dS * K;
                EMat dK = dS.transpose() * Q;
                for (int r = 0; r < nq; ++r)
                    gqkv.block(grp.q_idx[r], h * dh, 1, dh) += dQ.row(r);
                for (int r = 0; r < nk; ++r) {
                    gqkv.block(grp.kv_idx[r], width + h * dh, 1, dh) += dK.row(r);
                    gqkv.block(grp.kv_idx[r], 2 * width + h * dh, 1, dh) += dV.row(r);
                }
            }
        }
    });
}

// ---- 3D convolution ---------------------------------------------------------

// Input is a feature volume [T*H*W rows x C cols]; output likewise. Kernel
// 3x3x3 (or 1x1x1), zero padding, configurable stride. Used by the Plucker
// encoder and the identity embedder.
struct ConvSpec {
    int t = 0, h = 0, w = 0, c_in = 0, c_out = 0;
    int kt = 3, kh = 3, kw = 3;
    int st = 1, sh = 1, sw = 1;
    int pad_t = 1, pad_h = 1, pad_w = 1;

    int out_t() const { return (t + 2 * pad_t - kt) / st + 1; }
    int out_h() const { return (h + 2 * pad_h - kh) / sh + 1; }
    int out_w() const { return (w + 2 * pad_w - kw) / sw + 1; }
    int k() const { return kt * kh * kw * c_in; }
};

inline Var conv3d(const Var& x, const Var& W, const Var& b, const ConvSpec& spec) {
    if (x->value.rows != spec.t * spec.h * spec.w || x->value.cols != spec.c_in)
        throw std::invalid_argument("conv3d: input shape mismatch");
    if (W->value.rows != spec.c_out || W->value.cols != spec.k())
        throw std::invalid_argument("conv3d: weight shape mismatch");
    const int ot = spec.out_t(), oh = spec.out_h(), ow = spec.out_w();
    const int n_out = ot * oh * ow;

    auto cols = std::make_shared<Tensor>(n_out, spec.k());
    int row = 0;
    for (int t = 0; t < ot; ++t)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j, ++row) {
                float* dst = &cols->data[static_cast<std::size_t>(row) * spec.k()];
                int kk = 0;
                for (int dt = 0; dt < spec.kt; ++dt) {
                    int it = t * spec.st - spec.pad_t + dt;
                    for (int di = 0; di < spec.kh; ++di) {
                        int ii = i * spec.sh - spec.pad_h + di;
                        for (int dj = 0; dj < spec.kw; ++dj) {
                            int ij = j * spec.sw - spec.pad_w + dj;
                            if (it >= 0 && it < spec.t && ii >= 0 && ii < spec.h && ij >= 0 &&
                                ij < spec.w) {
                                const float* src =
                                    &x->value.data[(static_cast<std::size_t>(it) * spec.h * spec.w +
                                                    static_cast<std::size_t>(ii) * spec.w + ij) *
                                                   spec.c_in];
                                std::copy(src, src + spec.c_in, dst + kk);
                            } else {
                                std::fill(dst + kk, dst + kk + spec.c_in, 0.0f);
                            }
                            kk += spec.c_in;
                        }
                    }
                }
            }

    Tensor out(n_out, spec.c_out);
    emap(out).noalias() = emap(*cols) * emap(W->value).transpose();
    if (b) emap(out).rowwise() += emap(b->value).row(0);

    std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
    return detail::make_op(std::move(out), std::move(parents), [x, W, b, cols, spec](Node& n) {
        if (W->requires_grad)
            emap(W->grad_buffer()).noalias() += emap(n.grad).transpose() * emap(*cols);
        if (b && b->requires_grad)
            emap(b->grad_buffer()).row(0) += emap(n.grad).colwise().sum();
        if (x->requires_grad) {
            EMat dcols = emap(n.grad) * emap(W->value);
            auto& gx = x->grad_buffer();
            const int ot = spec.out_t(), oh = spec.out_h(), ow = spec.out_w();
            int row = 0;
            for (int t = 0; t < ot; ++t)
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j, ++row) {
                        int kk = 0;
                        for (int dt = 0; dt < spec.kt; ++dt) {
                            int it = t * spec.st - spec.pad_t + dt;
                            for (int di = 0; di < spec.kh; ++di) {
                                int ii = i * spec.sh - spec.pad_h + di;
                                for (int dj = 0; dj < spec.kw; ++dj) {
                                    int ij = j * spec.sw - spec.pad_w + dj;
                                    if (it >= 0 && it < spec.t && ii >= 0 && ii < spec.h &&
                                        ij >= 0 && ij < spec.w) {
                                        float* dst = &gx.data
                                            [(static_cast<std::size_t>(it) * spec.h * spec.w +
                                              static_cast<std::size_t>(ii) * spec.w + ij) *
                                             spec.c_in];
                                        for (int c = 0; c < spec.c_in; ++c)
                                            dst[c] += dcols(row, kk + c);
                                    }
                                    kk += spec.c_in;
                                }
                            }
                        }
                    }
        }
    });
}

// ---- Parameters and optimizer ----------------------------------------------

struct Param {
    std::string name;
    Tensor value;
    Tensor adam_m, adam_v;
    bool trainable = true;
};

class ParamStore {
public:
    Param& create(const std::string& name, Tensor init, bool trainable = true) {
        if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
        auto p = std::make_unique<Param>();
        p->name = name;
        p->value = std::move(init);
        p->trainable = trainable;
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: missing " + name);
        return *params_[it->second];
    }
    const Param& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: missing " + name);
        return *params_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param*> all() {
        std::vector<Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::vector<const Param*> all() const {
        std::vector<const Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& p : params_) p->trainable = trainable;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (const auto& p : params_) {
            h = fnv1a64_bytes(p->name.data(), p->name.size(), h);
            h = fnv1a64_bytes(p->value.data.data(), p->value.data.size() * sizeof(float), h);
        }
        return h;
    }

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::map<std::string, std::size_t> index_;
};

// Binds params to graph leaves once per step so weight sharing accumulates
// into a single gradient buffer.
class GraphBinding {
public:
    Var bind(Param& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return it->second;
        Var v = leaf(p.value, p.trainable);
        bound_.emplace(&p, v);
        return v;
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& [param, var] : bound_) fn(*param, var);
    }

private:
    std::unordered_map<Param*, Var> bound_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global-norm clip; <= 0 disables
};

class Adam {
public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

    // Applies one update to every trainable bound param that received grads.
    void step(GraphBinding& binding) {
        ++t_;
        double norm_sq = 0.0;
        binding.for_each([&](Param& p, const Var& v) {
            if (!p.trainable || v->grad.numel() == 0) return;
            for (float g : v->grad.data) norm_sq += static_cast<double>(g) * g;
        });
        float clip = 1.0f;
        if (opts_.clip_norm > 0.0 && norm_sq > opts_.clip_norm * opts_.clip_norm)
            clip = static_cast<float>(opts_.clip_norm / std::sqrt(norm_sq));

        const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
        binding.for_each([&](Param& p, const Var& v) {
            if (!p.trainable || v->grad.numel() == 0) return;
            if (p.adam_m.numel() != p.value.numel()) {
                p.adam_m = Tensor::zeros(p.value.rows, p.value.cols);
                p.adam_v = Tensor::zeros(p.value.rows, p.value.cols);
            }
            for (std::size_t k = 0; k < p.value.data.size(); ++k) {
                double g = static_cast<double>(v->grad.data[k]) * clip;
                double m = opts_.beta1 * p.adam_m.data[k] + (1.0 - opts_.beta1) * g;
                double vv = opts_.beta2 * p.adam_v.data[k] + (1.0 - opts_.beta2) * g * g;
                p.adam_m.data[k] = static_cast<float>(m);
                p.adam_v.data[k] = static_cast<float>(vv);
                p.value.data[k] -= static_cast<float>(opts_.lr * (m / bc1) /
                                                      (std::sqrt(vv / bc2) + opts_.eps));
            }
        });
    }

    int steps_taken() const { return t_; }

private:
    AdamOptions opts_;
    int t_ = 0;
};

// ---- Checkpoint blobs -------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

inline void save_param_blob(const std::string& bin_path, const ParamStore& store,
                            nlohmann::json& sidecar) {
    std::ofstream f(bin_path, std::ios::binary);
    if (!f) throw std::runtime_error("save_param_blob: cannot open " + bin_path);
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto* p : store.all()) {
        tensors.push_back({{"name", p->name},
                           {"rows", p->value.rows},
                           {"cols", p->value.cols},
                           {"offset", offset}});
        f.write(reinterpret_cast<const char*>(p->value.data.data()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(float)));
        offset += p->value.data.size() * sizeof(float);
    }
    if (!f) throw std::runtime_error("save_param_blob: write failed");
    sidecar["tensors"] = tensors;
    sidecar["blob_bytes"] = offset;
    sidecar["content_hash"] = store.checksum();
}

inline void load_param_blob(const std::string& bin_path, const nlohmann::json& sidecar,
                            ParamStore& store) {
    std::ifstream f(bin_path, std::ios::binary);
    if (!f) throw std::runtime_error("load_param_blob: cannot open " + bin_path);
    for (const auto& tj : sidecar.at("tensors")) {
        Param& p = store.at(tj.at("name").get<std::string>());
        int rows = tj.at("rows").get<int>(), cols = tj.at("cols").get<int>();
        if (rows != p.value.rows || cols != p.value.cols)
            throw std::runtime_error("load_param_blob: shape mismatch for " + p.name);
        f.seekg(static_cast<std::streamoff>(tj.at("offset").get<std::uint64_t>()));
        f.read(reinterpret_cast<char*>(p.value.data.data()),
               static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
        if (!f) throw std::runtime_error("load_param_blob: short read for " + p.name);
    }
}

}  // namespace camdiff::nn
