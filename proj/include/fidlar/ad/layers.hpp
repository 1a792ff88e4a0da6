#pragma once

#include "../rng.hpp"
#include "ops.hpp"

#include <map>
#include <string>
#include <utility>

namespace fidlar::ad {

/**
 * Named trainable tensors.
 *
 * A frozen set still participates in backward passes (gradients flow through
 * it to upstream inputs) but its own tensors stop accumulating gradients and
 * optimizers refuse to update it.
 */
class ParamSet {
public:
    Tensor add(const std::string& name, Array init) {
        if (params_.count(name)) throw ConfigurationError("duplicate parameter '" + name + "'");
        Tensor t = Tensor::leaf(std::move(init));
        params_.emplace(name, t);
        return t;
    }

    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigurationError("no parameter named '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t.size();
        return n;
    }

    bool frozen() const { return frozen_; }
    void freeze() {
        frozen_ = true;
        for (auto& [_, t] : params_) {
            t.node()->requires_grad = false;
            t.node()->grad.clear();
        }
    }

    void zero_grad() {
        for (auto& [_, t] : params_) {
            Tensor h = t;
            h.zero_grad();
        }
    }

    /// Deep copy with fresh graph leaves; the frozen flag carries over.
    ParamSet clone() const {
        ParamSet out;
        for (const auto& [name, t] : params_) out.add(name, t.value());
        if (frozen_) out.freeze();
        return out;
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    void load_values(const ParamSet& other) {
        for (auto& [name, t] : params_) {
            const Tensor& src = other.at(name);
            if (src.shape() != t.shape())
                throw StructuralError("parameter '" + name + "' has shape " + shape_str(t.shape()) +
                                      ", source has " + shape_str(src.shape()));
            Tensor h = t;
            h.mutable_value().data = src.value().data;
        }
    }

private:
    std::map<std::string, Tensor> params_;
    bool frozen_ = false;
};

/// Uniform Glorot: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
inline Array glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Array a(std::move(shape));
    const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : a.data) v = uniform(rng, -lim, lim);
    return a;
}

inline Tensor constant(Array a) { return Tensor::constant(std::move(a)); }

// ---------------------------------------------------------------------------

/// y = x W + b over the last dimension.
struct Dense {
    Tensor weight; // [in, out]
    Tensor bias;   // [out]

    static Dense create(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
        return Dense{ps.add(prefix + ".w", glorot({in, out}, in, out, rng)), ps.add(prefix + ".b", Array({out}))};
    }
    static Dense bind(const ParamSet& ps, const std::string& prefix) {
        return Dense{ps.at(prefix + ".w"), ps.at(prefix + ".b")};
    }

    std::size_t in() const { return weight.dim(0); }
    std::size_t out() const { return weight.dim(1); }

    Tensor operator()(const Tensor& x) const {
        if (x.shape().back() != in())
            throw StructuralError("dense layer expects last dim " + std::to_string(in()) + ", got " +
                                  shape_str(x.shape()));
        return add(matmul(x, weight), bias);
    }
};

/**
 * Gated recurrent unit, one step, fused into a single graph node.
 *
 *   r = s(x Wr + br + h Ur + cr)     z = s(x Wz + bz + h Uz + cz)
 *   n = tanh(x Wn + bn + r * (h Un + cn))
 *   h' = (1 - z) * n + z * h
 *
 * With |h| < 1 the new state stays inside (-1, 1).
 */
struct GruCell {
    Tensor wx; // [in, 3H]  (r | z | n)
    Tensor wh; // [H, 3H]
    Tensor bx; // [3H]
    Tensor bh; // [3H]

    static GruCell create(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
        return GruCell{ps.add(prefix + ".wx", glorot({in, 3 * hidden}, in, hidden, rng)),
                       ps.add(prefix + ".wh", glorot({hidden, 3 * hidden}, hidden, hidden, rng)),
                       ps.add(prefix + ".bx", Array({3 * hidden})), ps.add(prefix + ".bh", Array({3 * hidden}))};
    }
    static GruCell bind(const ParamSet& ps, const std::string& prefix) {
        return GruCell{ps.at(prefix + ".wx"), ps.at(prefix + ".wh"), ps.at(prefix + ".bx"), ps.at(prefix + ".bh")};
    }

    std::size_t in() const { return wx.dim(0); }
    std::size_t hidden() const { return wh.dim(0); }

    Tensor initial_state(std::size_t rows) const { return constant(Array({rows, hidden()})); }

    Tensor operator()(const Tensor& x, const Tensor& h) const {
        using namespace detail;
        const std::size_t H = hidden(), I = in();
        if (x.rank() != 2 || x.dim(1) != I || h.rank() != 2 || h.dim(1) != H || x.dim(0) != h.dim(0))
            throw StructuralError("gru_cell expects x [R," + std::to_string(I) + "] and h [R," + std::to_string(H) +
                                  "], got " + shape_str(x.shape()) + " and " + shape_str(h.shape()));
        const std::size_t R = x.dim(0);
        RowMat gx = CMapM(x.data(), Idx(R), Idx(I)) * CMapM(wx.data(), Idx(I), Idx(3 * H));
        RowMat gh = CMapM(h.data(), Idx(R), Idx(H)) * CMapM(wh.data(), Idx(H), Idx(3 * H));
        const double* bxv = bx.data();
        const double* bhv = bh.data();
        // cache: r, z, n, (h Un + cn)
        auto cache = std::make_shared<std::vector<double>>(4 * R * H);
        double* r = cache->data();
        double* z = r + R * H;
        double* n = z + R * H;
        double* hn = n + R * H;
        Array out({R, H});
        const double* hv = h.data();
        for (std::size_t i = 0; i < R; ++i) {
            for (std::size_t j = 0; j < H; ++j) {
                const std::size_t o = i * H + j;
                r[o] = sigmoid_scalar(gx(Idx(i), Idx(j)) + bxv[j] + gh(Idx(i), Idx(j)) + bhv[j]);
                z[o] = sigmoid_scalar(gx(Idx(i), Idx(H + j)) + bxv[H + j] + gh(Idx(i), Idx(H + j)) + bhv[H + j]);
                hn[o] = gh(Idx(i), Idx(2 * H + j)) + bhv[2 * H + j];
                n[o] = std::tanh(gx(Idx(i), Idx(2 * H + j)) + bxv[2 * H + j] + r[o] * hn[o]);
                out.data[o] = (1.0 - z[o]) * n[o] + z[o] * hv[o];
            }
        }
        return make_result(std::move(out), {&x, &h, &wx, &wh, &bx, &bh}, [cache, R, H, I](Node& self) {
            const double* r = cache->data();
            const double* z = r + R * H;
            const double* n = z + R * H;
            const double* hn = n + R * H;
            const double* g = self.grad.data();
            const double* hv = value_of(self, 1).data.data();
            RowMat dgx(Idx(R), Idx(3 * H)), dgh(Idx(R), Idx(3 * H));
            double* gh_direct = grad_of(self, 1);
            for (std::size_t i = 0; i < R; ++i) {
                for (std::size_t j = 0; j < H; ++j) {
                    const std::size_t o = i * H + j;
                    const double dz = g[o] * (hv[o] - n[o]);
                    const double dn = g[o] * (1.0 - z[o]);
                    if (gh_direct) gh_direct[o] += g[o] * z[o];
                    const double dan = dn * (1.0 - n[o] * n[o]);
                    const double dr = dan * hn[o];
                    const double dar = dr * r[o] * (1.0 - r[o]);
                    const double daz = dz * z[o] * (1.0 - z[o]);
                    dgx(Idx(i), Idx(j)) = dar;
                    dgx(Idx(i), Idx(H + j)) = daz;
                    dgx(Idx(i), Idx(2 * H + j)) = dan;
                    dgh(Idx(i), Idx(j)) = dar;
                    dgh(Idx(i), Idx(H + j)) = daz;
                    dgh(Idx(i), Idx(2 * H + j)) = dan * r[o];
                }
            }
            const double* xv = value_of(self, 0).data.data();
            if (double* gx = grad_of(self, 0))
                MapM(gx, Idx(R), Idx(I)).noalias() += dgx * CMapM(value_of(self, 2).data.data(), Idx(I), Idx(3 * H)).transpose();
            if (gh_direct)
                MapM(gh_direct, Idx(R), Idx(H)).noalias() +=
                    dgh * CMapM(value_of(self, 3).data.data(), Idx(H), Idx(3 * H)).transpose();
            if (double* gwx = grad_of(self, 2))
                MapM(gwx, Idx(I), Idx(3 * H)).noalias() += CMapM(xv, Idx(R), Idx(I)).transpose() * dgx;
            if (double* gwh = grad_of(self, 3))
                MapM(gwh, Idx(H), Idx(3 * H)).noalias() += CMapM(hv, Idx(R), Idx(H)).transpose() * dgh;
            if (double* gbx = grad_of(self, 4))
                Eigen::Map<Eigen::RowVectorXd>(gbx, Idx(3 * H)) += dgx.colwise().sum();
            if (double* gbh = grad_of(self, 5))
                Eigen::Map<Eigen::RowVectorXd>(gbh, Idx(3 * H)) += dgh.colwise().sum();
        });
    }
};

/// Output of single-head scaled dot-product attention.
struct AttentionResult {
    Tensor output;  ///< [B, T, d_v]
    Tensor weights; ///< [B, T, T], rows sum to one
};

/// Self-attention across the token axis of [B, T, d_model].
struct Attention {
    Tensor wq, wk, wv; // [d_model, d_model]

    static Attention create(ParamSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng) {
        return Attention{ps.add(prefix + ".wq", glorot({d_model, d_model}, d_model, d_model, rng)),
                         ps.add(prefix + ".wk", glorot({d_model, d_model}, d_model, d_model, rng)),
                         ps.add(prefix + ".wv", glorot({d_model, d_model}, d_model, d_model, rng))};
    }
    static Attention bind(const ParamSet& ps, const std::string& prefix) {
        return Attention{ps.at(prefix + ".wq"), ps.at(prefix + ".wk"), ps.at(prefix + ".wv")};
    }

    std::size_t d_model() const { return wq.dim(0); }

    AttentionResult operator()(const Tensor& x) const {
        if (x.rank() != 3 || x.dim(2) != d_model())
            throw StructuralError("attention expects [B,T," + std::to_string(d_model()) + "], got " +
                                  shape_str(x.shape()));
        const Tensor q = matmul(x, wq);
        const Tensor k = matmul(x, wk);
        const Tensor v = matmul(x, wv);
        const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_model())));
        Tensor w = softmax(scores);
        return {matmul(w, v), w};
    }
};

/**
 * One round of mean-aggregated message passing over a fixed graph.
 *
 *   out = X Ws + (D^-1 A X) Wn + b
 *
 * With an all-zero adjacency this is a per-node dense transform.
 */
struct GraphMessagePass {
    Tensor w_self, w_nbr, bias;
    Array norm_adj; // [nodes, nodes], row-normalized

    static Array normalize_adjacency(const Array& adj) {
        if (adj.rank() != 2 || adj.dim(0) != adj.dim(1))
            throw StructuralError("adjacency must be square, got " + shape_str(adj.shape));
        Array a = adj;
        const std::size_t n = adj.dim(0);
        for (std::size_t i = 0; i < n; ++i) {
            double deg = 0.0;
            for (std::size_t j = 0; j < n; ++j) deg += a.data[i * n + j];
            if (deg > 0.0)
                for (std::size_t j = 0; j < n; ++j) a.data[i * n + j] /= deg;
        }
        return a;
    }

    static GraphMessagePass create(ParamSet& ps, const std::string& prefix, const Array& adjacency, std::size_t in,
                                   std::size_t out, Rng& rng) {
        return GraphMessagePass{ps.add(prefix + ".ws", glorot({in, out}, in, out, rng)),
                                ps.add(prefix + ".wn", glorot({in, out}, in, out, rng)),
                                ps.add(prefix + ".b", Array({out})), normalize_adjacency(adjacency)};
    }
    static GraphMessagePass bind(const ParamSet& ps, const std::string& prefix, const Array& adjacency) {
        return GraphMessagePass{ps.at(prefix + ".ws"), ps.at(prefix + ".wn"), ps.at(prefix + ".b"),
                                normalize_adjacency(adjacency)};
    }

    std::size_t nodes() const { return norm_adj.dim(0); }

    /// x: [B, nodes, in] or [nodes, in].
    Tensor operator()(const Tensor& x) const {
        const std::size_t node_axis = x.rank() - 2;
        if (x.rank() < 2 || x.rank() > 3 || x.dim(node_axis) != nodes())
            throw StructuralError("graph_message_pass over " + std::to_string(nodes()) + " nodes got input " +
                                  shape_str(x.shape()));
        const Tensor adj = constant(norm_adj);
        const Tensor msgs = matmul(adj, x);
        return add(add(matmul(x, w_self), matmul(msgs, w_nbr)), bias);
    }
};

} // namespace fidlar::ad
