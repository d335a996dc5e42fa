#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cmr/errors.hpp"

namespace cmr {

// Dense row-major 2-D tensor. Scalars are [1,1], vectors [1,n].
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;

    Tensor() = default;
    Tensor(int r, int c, T fill = T(0)) : shape{r, c}, data(static_cast<size_t>(r) * c, fill) {
        if (r < 1 || c < 1) throw ShapeError("tensor dims must be >= 1, got [" + std::to_string(r) + "," + std::to_string(c) + "]");
    }

    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
    int64_t size() const { return static_cast<int64_t>(data.size()); }

    T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    void set_requires_grad() {
        requires_grad = true;
        grad.assign(data.size(), T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

    std::string shape_str() const {
        return "[" + std::to_string(shape[0]) + "," + std::to_string(shape[1]) + "]";
    }
};

template <typename T>
Tensor<T> uniform_tensor(int r, int c, T bound, std::mt19937_64& rng) {
    Tensor<T> t(r, c);
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

namespace detail {
inline void check_same_shape(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
    if (a != b) {
        throw ShapeError(std::string(op) + ": shape mismatch [" + std::to_string(a[0]) + "," +
                         std::to_string(a[1]) + "] vs [" + std::to_string(b[0]) + "," + std::to_string(b[1]) + "]");
    }
}
}  // namespace detail

// Reverse-mode tape. Single-threaded; node creation order is topological order.
template <typename T>
class Tape {
  public:
    using NodeId = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeId constant(Tensor<T> v) { return push(std::move(v), nullptr); }

    // Leaf referencing an external parameter; backward accumulates into param.grad.
    NodeId leaf(Tensor<T>& param) {
        if (!param.requires_grad) throw ShapeError("leaf: parameter does not require grad");
        return push(param, &param);
    }

    const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
    const std::vector<T>& grad(NodeId id) const { return nodes_[id].grad; }
    size_t num_nodes() const { return nodes_.size(); }

    // ---- ops ----

    NodeId matmul(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        if (A.cols() != B.rows())
            throw ShapeError("matmul: inner dims " + A.shape_str() + " vs " + B.shape_str());
        int m = A.rows(), k = A.cols(), n = B.cols();
        Tensor<T> out(m, n);
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                T av = A.at(i, p);
                if (av == T(0)) continue;
                for (int j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
            }
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, b, id, m, k, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& A2 = t.nodes_[a].value;
            const auto& B2 = t.nodes_[b].value;
            auto& ga = t.nodes_[a].grad;
            auto& gb = t.nodes_[b].grad;
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    T acc = T(0);
                    for (int j = 0; j < n; ++j) acc += g[static_cast<size_t>(i) * n + j] * B2.at(p, j);
                    ga[static_cast<size_t>(i) * k + p] += acc;
                }
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int i = 0; i < m; ++i) acc += A2.at(i, p) * g[static_cast<size_t>(i) * n + j];
                    gb[static_cast<size_t>(p) * n + j] += acc;
                }
        };
        return id;
    }

    // Same-shape add, or row-broadcast bias add a[m,n] + b[1,n].
    NodeId add(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        bool bias = (B.rows() == 1 && A.cols() == B.cols() && A.rows() != 1);
        if (!bias) detail::check_same_shape(A.shape, B.shape, "add");
        Tensor<T> out(A.rows(), A.cols());
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j)
                out.at(i, j) = A.at(i, j) + (bias ? B.at(0, j) : B.at(i, j));
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, b, id, bias](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            auto& gb = t.nodes_[b].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (bias) {
                int n = t.nodes_[b].value.cols();
                for (size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
            } else {
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
        return id;
    }

    NodeId mul(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        detail::check_same_shape(A.shape, B.shape, "mul");
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = A.data[i] * B.data[i];
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, b, id](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& A2 = t.nodes_[a].value;
            const auto& B2 = t.nodes_[b].value;
            auto& ga = t.nodes_[a].grad;
            auto& gb = t.nodes_[b].grad;
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * B2.data[i];
                gb[i] += g[i] * A2.data[i];
            }
        };
        return id;
    }

    NodeId scale(NodeId a, T s) {
        const auto& A = nodes_[a].value;
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = A.data[i] * s;
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, s](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        };
        return id;
    }

    NodeId add_scalar(NodeId a, T s) {
        const auto& A = nodes_[a].value;
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = A.data[i] + s;
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
        return id;
    }

    NodeId relu(NodeId a) {
        const auto& A = nodes_[a].value;
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = A.data[i] > T(0) ? A.data[i] : T(0);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& A2 = t.nodes_[a].value;
            auto& ga = t.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i)
                if (A2.data[i] > T(0)) ga[i] += g[i];
        };
        return id;
    }

    NodeId exp(NodeId a) {
        const auto& A = nodes_[a].value;
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = std::exp(A.data[i]);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& Y = t.nodes_[id].value;
            auto& ga = t.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Y.data[i];
        };
        return id;
    }

    NodeId log(NodeId a) {
        const auto& A = nodes_[a].value;
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = std::log(A.data[i]);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& A2 = t.nodes_[a].value;
            auto& ga = t.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / A2.data[i];
        };
        return id;
    }

    NodeId sum(NodeId a) {
        const auto& A = nodes_[a].value;
        Tensor<T> out(1, 1);
        T acc = T(0);
        for (auto v : A.data) acc += v;
        out.data[0] = acc;
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id](Tape& t) {
            T g = t.nodes_[id].grad[0];
            auto& ga = t.nodes_[a].grad;
            for (auto& v : ga) v += g;
        };
        return id;
    }

    NodeId transpose(NodeId a) {
        const auto& A = nodes_[a].value;
        int m = A.rows(), n = A.cols();
        Tensor<T> out(n, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, m, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
        };
        return id;
    }

    NodeId concat_rows(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ShapeError("concat_rows: empty input");
        int n = nodes_[parts[0]].value.cols();
        int m = 0;
        for (NodeId p : parts) {
            if (nodes_[p].value.cols() != n)
                throw ShapeError("concat_rows: column mismatch " + nodes_[parts[0]].value.shape_str() + " vs " + nodes_[p].value.shape_str());
            m += nodes_[p].value.rows();
        }
        Tensor<T> out(m, n);
        int r = 0;
        for (NodeId p : parts) {
            const auto& P = nodes_[p].value;
            std::copy(P.data.begin(), P.data.end(), out.data.begin() + static_cast<size_t>(r) * n);
            r += P.rows();
        }
        NodeId id = push(std::move(out), nullptr);
        std::vector<NodeId> ps = parts;
        nodes_[id].back = [ps, id, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            size_t off = 0;
            for (NodeId p : ps) {
                auto& gp = t.nodes_[p].grad;
                for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                off += gp.size();
            }
        };
        return id;
    }

    NodeId slice_rows(NodeId a, int start, int len) {
        const auto& A = nodes_[a].value;
        if (start < 0 || len < 1 || start + len > A.rows())
            throw ShapeError("slice_rows: range [" + std::to_string(start) + ",+" + std::to_string(len) + ") out of " + A.shape_str());
        int n = A.cols();
        Tensor<T> out(len, n);
        std::copy(A.data.begin() + static_cast<size_t>(start) * n,
                  A.data.begin() + static_cast<size_t>(start + len) * n, out.data.begin());
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, start, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(start) * n + i] += g[i];
        };
        return id;
    }

    NodeId slice_cols(NodeId a, int start, int len) {
        const auto& A = nodes_[a].value;
        if (start < 0 || len < 1 || start + len > A.cols())
            throw ShapeError("slice_cols: range [" + std::to_string(start) + ",+" + std::to_string(len) + ") out of " + A.shape_str());
        int m = A.rows(), n = A.cols();
        Tensor<T> out(m, len);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j) out.at(i, j) = A.at(i, start + j);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, start, len, m, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j)
                    ga[static_cast<size_t>(i) * n + start + j] += g[static_cast<size_t>(i) * len + j];
        };
        return id;
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols: empty input");
        int m = nodes_[parts[0]].value.rows();
        int n = 0;
        for (NodeId p : parts) {
            if (nodes_[p].value.rows() != m)
                throw ShapeError("concat_cols: row mismatch " + nodes_[parts[0]].value.shape_str() + " vs " + nodes_[p].value.shape_str());
            n += nodes_[p].value.cols();
        }
        Tensor<T> out(m, n);
        int c = 0;
        for (NodeId p : parts) {
            const auto& P = nodes_[p].value;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < P.cols(); ++j) out.at(i, c + j) = P.at(i, j);
            c += P.cols();
        }
        NodeId id = push(std::move(out), nullptr);
        std::vector<NodeId> ps = parts;
        nodes_[id].back = [ps, id, m, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            int c = 0;
            for (NodeId p : ps) {
                auto& gp = t.nodes_[p].grad;
                int pc = t.nodes_[p].value.cols();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pc; ++j)
                        gp[static_cast<size_t>(i) * pc + j] += g[static_cast<size_t>(i) * n + c + j];
                c += pc;
            }
        };
        return id;
    }

    NodeId embedding(NodeId table, const std::vector<int>& ids) {
        const auto& Tb = nodes_[table].value;
        if (ids.empty()) throw ShapeError("embedding: empty id list");
        int v = Tb.rows(), d = Tb.cols();
        for (int i : ids)
            if (i < 0 || i >= v)
                throw ShapeError("embedding: id " + std::to_string(i) + " out of vocab " + std::to_string(v));
        Tensor<T> out(static_cast<int>(ids.size()), d);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = Tb.at(ids[i], j);
        NodeId id = push(std::move(out), nullptr);
        std::vector<int> idv = ids;
        nodes_[id].back = [table, id, idv, d](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& gt = t.nodes_[table].grad;
            for (size_t i = 0; i < idv.size(); ++i)
                for (int j = 0; j < d; ++j)
                    gt[static_cast<size_t>(idv[i]) * d + j] += g[i * d + j];
        };
        return id;
    }

    // Per-row layer norm, then affine with gain [1,n] and bias [1,n].
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps = T(1e-5)) {
        const auto& X = nodes_[x].value;
        const auto& G = nodes_[gain].value;
        const auto& B = nodes_[bias].value;
        int m = X.rows(), n = X.cols();
        if (G.rows() != 1 || G.cols() != n || B.rows() != 1 || B.cols() != n)
            throw ShapeError("layer_norm: affine shape " + G.shape_str() + " vs input " + X.shape_str());
        Tensor<T> out(m, n);
        auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * n);
        auto rstd = std::make_shared<std::vector<T>>(m);
        for (int i = 0; i < m; ++i) {
            T mean = T(0);
            for (int j = 0; j < n; ++j) mean += X.at(i, j);
            mean /= T(n);
            T var = T(0);
            for (int j = 0; j < n; ++j) {
                T d = X.at(i, j) - mean;
                var += d * d;
            }
            var /= T(n);
            T rs = T(1) / std::sqrt(var + eps);
            (*rstd)[i] = rs;
            for (int j = 0; j < n; ++j) {
                T xh = (X.at(i, j) - mean) * rs;
                (*xhat)[static_cast<size_t>(i) * n + j] = xh;
                out.at(i, j) = xh * G.at(0, j) + B.at(0, j);
            }
        }
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [x, gain, bias, id, m, n, xhat, rstd](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& G2 = t.nodes_[gain].value;
            auto& gx = t.nodes_[x].grad;
            auto& gg = t.nodes_[gain].grad;
            auto& gb = t.nodes_[bias].grad;
            for (int i = 0; i < m; ++i) {
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int j = 0; j < n; ++j) {
                    size_t k = static_cast<size_t>(i) * n + j;
                    T go = g[k];
                    gg[j] += go * (*xhat)[k];
                    gb[j] += go;
                    T dxh = go * G2.at(0, j);
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * (*xhat)[k];
                }
                for (int j = 0; j < n; ++j) {
                    size_t k = static_cast<size_t>(i) * n + j;
                    T dxh = g[k] * G2.at(0, j);
                    gx[k] += (*rstd)[i] * (dxh - sum_dxhat / T(n) - (*xhat)[k] * sum_dxhat_xhat / T(n));
                }
            }
        };
        return id;
    }

    NodeId softmax_rows(NodeId a) {
        const auto& A = nodes_[a].value;
        int m = A.rows(), n = A.cols();
        Tensor<T> out(m, n);
        for (int i = 0; i < m; ++i) {
            T mx = A.at(i, 0);
            for (int j = 1; j < n; ++j) mx = std::max(mx, A.at(i, j));
            T z = T(0);
            for (int j = 0; j < n; ++j) {
                T e = std::exp(A.at(i, j) - mx);
                out.at(i, j) = e;
                z += e;
            }
            for (int j = 0; j < n; ++j) out.at(i, j) /= z;
        }
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, m, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& Y = t.nodes_[id].value;
            auto& ga = t.nodes_[a].grad;
            for (int i = 0; i < m; ++i) {
                T dot = T(0);
                for (int j = 0; j < n; ++j) dot += g[static_cast<size_t>(i) * n + j] * Y.at(i, j);
                for (int j = 0; j < n; ++j) {
                    size_t k = static_cast<size_t>(i) * n + j;
                    ga[k] += Y.at(i, j) * (g[k] - dot);
                }
            }
        };
        return id;
    }

    NodeId log_softmax_rows(NodeId a) {
        const auto& A = nodes_[a].value;
        int m = A.rows(), n = A.cols();
        Tensor<T> out(m, n);
        for (int i = 0; i < m; ++i) {
            T mx = A.at(i, 0);
            for (int j = 1; j < n; ++j) mx = std::max(mx, A.at(i, j));
            T z = T(0);
            for (int j = 0; j < n; ++j) z += std::exp(A.at(i, j) - mx);
            T lz = std::log(z) + mx;
            for (int j = 0; j < n; ++j) out.at(i, j) = A.at(i, j) - lz;
        }
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, m, n](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& Y = t.nodes_[id].value;
            auto& ga = t.nodes_[a].grad;
            for (int i = 0; i < m; ++i) {
                T gsum = T(0);
                for (int j = 0; j < n; ++j) gsum += g[static_cast<size_t>(i) * n + j];
                for (int j = 0; j < n; ++j) {
                    size_t k = static_cast<size_t>(i) * n + j;
                    ga[k] += g[k] - std::exp(Y.at(i, j)) * gsum;
                }
            }
        };
        return id;
    }

    // Mean over a subset of rows -> [1,n]. Empty subset is a shape error.
    NodeId mean_rows(NodeId a, const std::vector<int>& rows) {
        const auto& A = nodes_[a].value;
        if (rows.empty()) throw ShapeError("mean_rows: empty row selection");
        int n = A.cols();
        Tensor<T> out(1, n);
        for (int r : rows) {
            if (r < 0 || r >= A.rows()) throw ShapeError("mean_rows: row " + std::to_string(r) + " out of " + A.shape_str());
            for (int j = 0; j < n; ++j) out.at(0, j) += A.at(r, j);
        }
        T inv = T(1) / T(rows.size());
        for (int j = 0; j < n; ++j) out.at(0, j) *= inv;
        NodeId id = push(std::move(out), nullptr);
        std::vector<int> rs = rows;
        nodes_[id].back = [a, id, rs, n, inv](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            auto& ga = t.nodes_[a].grad;
            for (int r : rs)
                for (int j = 0; j < n; ++j) ga[static_cast<size_t>(r) * n + j] += g[j] * inv;
        };
        return id;
    }

    NodeId mean_rows(NodeId a) {
        std::vector<int> rows(nodes_[a].value.rows());
        for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
        return mean_rows(a, rows);
    }

    // x / (||x|| + 1e-12) over the whole tensor (used on [1,n] vectors).
    NodeId l2_normalize(NodeId a) {
        const auto& A = nodes_[a].value;
        T nrm = T(0);
        for (auto v : A.data) nrm += v * v;
        nrm = std::sqrt(nrm);
        T s = nrm + T(1e-12);
        Tensor<T> out(A.rows(), A.cols());
        for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = A.data[i] / s;
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, id, nrm, s](Tape& t) {
            const auto& g = t.nodes_[id].grad;
            const auto& X = t.nodes_[a].value;
            auto& ga = t.nodes_[a].grad;
            T gdotx = T(0);
            for (size_t i = 0; i < g.size(); ++i) gdotx += g[i] * X.data[i];
            T c = (nrm > T(0)) ? gdotx / (s * s * nrm) : T(0);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / s - c * X.data[i];
        };
        return id;
    }

    NodeId dot(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        detail::check_same_shape(A.shape, B.shape, "dot");
        Tensor<T> out(1, 1);
        T acc = T(0);
        for (size_t i = 0; i < A.data.size(); ++i) acc += A.data[i] * B.data[i];
        out.data[0] = acc;
        NodeId id = push(std::move(out), nullptr);
        nodes_[id].back = [a, b, id](Tape& t) {
            T g = t.nodes_[id].grad[0];
            const auto& A2 = t.nodes_[a].value;
            const auto& B2 = t.nodes_[b].value;
            auto& ga = t.nodes_[a].grad;
            auto& gb = t.nodes_[b].grad;
            for (size_t i = 0; i < ga.size(); ++i) {
                ga[i] += g * B2.data[i];
                gb[i] += g * A2.data[i];
            }
        };
        return id;
    }

    // Mean of picked (row, col) entries -> scalar.
    NodeId mean_picked(NodeId a, const std::vector<std::pair<int, int>>& picks) {
        const auto& A = nodes_[a].value;
        if (picks.empty()) throw ShapeError("mean_picked: empty pick list");
        Tensor<T> out(1, 1);
        for (auto [r, c] : picks) {
            if (r < 0 || r >= A.rows() || c < 0 || c >= A.cols())
                throw ShapeError("mean_picked: (" + std::to_string(r) + "," + std::to_string(c) + ") out of " + A.shape_str());
            out.data[0] += A.at(r, c);
        }
        T inv = T(1) / T(picks.size());
        out.data[0] *= inv;
        NodeId id = push(std::move(out), nullptr);
        std::vector<std::pair<int, int>> ps = picks;
        nodes_[id].back = [a, id, ps, inv](Tape& t) {
            T g = t.nodes_[id].grad[0];
            int n = t.nodes_[a].value.cols();
            auto& ga = t.nodes_[a].grad;
            for (auto [r, c] : ps) ga[static_cast<size_t>(r) * n + c] += g * inv;
        };
        return id;
    }

    NodeId dropout(NodeId a, T rate, std::mt19937_64& rng) {
        if (rate <= T(0)) return a;
        const auto& A = nodes_[a].value;
        Tensor<T> mask(A.rows(), A.cols());
        std::uniform_real_distribution<double> u(0.0, 1.0);
        T keep_scale = T(1) / (T(1) - rate);
        for (auto& v : mask.data) v = (u(rng) < static_cast<double>(rate)) ? T(0) : keep_scale;
        return mul(a, constant(std::move(mask)));
    }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse creation order.
    // Gradients accumulate; calling twice without reset doubles them.
    void backward(NodeId loss) {
        const auto& L = nodes_[loss].value;
        if (L.rows() != 1 || L.cols() != 1)
            throw ShapeError("backward: loss must be scalar, got " + L.shape_str());
        nodes_[loss].grad[0] += T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(*this);
        for (auto& nd : nodes_) {
            if (nd.external) {
                for (size_t i = 0; i < nd.grad.size(); ++i) nd.external->grad[i] += nd.grad[i];
            }
            std::fill(nd.grad.begin(), nd.grad.end(), T(0));
        }
    }

  private:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        std::function<void(Tape&)> back;
        Tensor<T>* external = nullptr;
    };

    NodeId push(Tensor<T> v, Tensor<T>* ext) {
        Node n;
        n.grad.assign(v.data.size(), T(0));
        n.value = std::move(v);
        n.external = ext;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
};

// ---- gradient checking ----

struct GradCheckRow {
    std::string name;
    double max_rel_error = 0.0;
};

// Compares analytic gradients against central finite differences.
// loss_fn must rebuild its tape, run backward, and accumulate grads into
// the listed parameters; it is re-run (forward value only used) for each
// perturbed element.
template <typename F>
GradCheckRow grad_check(F&& loss_fn, const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                        double eps = 1e-5) {
    for (auto& [name, p] : params) p->zero_grad();
    loss_fn();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) analytic.push_back(p->grad);

    GradCheckRow worst;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>* p = params[pi].second;
        for (size_t i = 0; i < p->data.size(); ++i) {
            double orig = p->data[i];
            p->data[i] = orig + eps;
            double fp = loss_fn();
            p->data[i] = orig - eps;
            double fm = loss_fn();
            p->data[i] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[pi][i];
            double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > worst.max_rel_error) {
                worst.max_rel_error = rel;
                worst.name = params[pi].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    for (auto& [name, p] : params) p->zero_grad();
    return worst;
}

}  // namespace cmr
