#pragma once

#include "../ad/layers.hpp"
#include "layout.hpp"

#include <string>
#include <vector>

namespace fidlar::models {

using ad::Attention;
using ad::Dense;
using ad::GraphMessagePass;
using ad::GruCell;
using ad::ParamSet;

struct NetConfig {
    Architecture arch = Architecture::gtn_lite;
    std::size_t hidden = 32;     ///< decoder / rnn-encoder state size
    std::size_t var_hidden = 12; ///< gtn_lite per-variable state and attention width
    std::size_t future_dim = 16; ///< summary of the whole covariate forecast
    std::size_t mlp_hidden = 64;

    void validate() const {
        if (hidden == 0 || var_hidden == 0 || future_dim == 0 || mlp_hidden == 0)
            throw ConfigurationError("network sizes must be positive");
    }
};

inline json net_config_to_json(const NetConfig& c) {
    return {{"architecture", to_string(c.arch)},
            {"hidden", c.hidden},
            {"var_hidden", c.var_hidden},
            {"future_dim", c.future_dim},
            {"mlp_hidden", c.mlp_hidden}};
}

inline NetConfig net_config_from_json(const json& j) {
    NetConfig c;
    c.arch = parse_architecture(j.at("architecture").get<std::string>());
    c.hidden = j.value("hidden", c.hidden);
    c.var_hidden = j.value("var_hidden", c.var_hidden);
    c.future_dim = j.value("future_dim", c.future_dim);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.validate();
    return c;
}

namespace detail {

/// Creates layers into a fresh ParamSet, or binds them to an existing one.
class LayerFactory {
public:
    LayerFactory(ParamSet& ps, Rng* rng) : ps_(&ps), rng_(rng) {}

    bool creating() const { return rng_ != nullptr; }

    Dense dense(const std::string& name, std::size_t in, std::size_t out) {
        return creating() ? Dense::create(*ps_, name, in, out, *rng_) : Dense::bind(*ps_, name);
    }
    GruCell gru(const std::string& name, std::size_t in, std::size_t hidden) {
        return creating() ? GruCell::create(*ps_, name, in, hidden, *rng_) : GruCell::bind(*ps_, name);
    }
    Attention attention(const std::string& name, std::size_t d) {
        return creating() ? Attention::create(*ps_, name, d, *rng_) : Attention::bind(*ps_, name);
    }
    GraphMessagePass graph(const std::string& name, const Array& adj, std::size_t in, std::size_t out) {
        return creating() ? GraphMessagePass::create(*ps_, name, adj, in, out, *rng_) : GraphMessagePass::bind(*ps_, name, adj);
    }

private:
    ParamSet* ps_;
    Rng* rng_;
};

inline void fill(Tensor t, double v) {
    for (auto& x : t.mutable_value().data) x = v;
}

/// Row t of every sample: [B, T, F] -> [B, F].
inline Tensor step_of(const Tensor& x, std::size_t t) {
    return ad::reshape(ad::slice(x, 1, t, t + 1), {x.dim(0), x.dim(2)});
}

inline Tensor flatten(const Tensor& x) { return ad::reshape(x, {x.dim(0), x.size() / x.dim(0)}); }

} // namespace detail

/// Control-independent summary of one window.
struct Encoded {
    Tensor context;    ///< [B, D]
    Tensor last_level; ///< [B, N], model space
    Tensor attention;  ///< [B, V, V], gtn_lite only
};

/**
 * Encodes the past block and the covariate forecast.
 *
 *  mlp       flattened past and forecast, no parameters
 *  rnn       GRU over past rows, plus a forecast summary and the latest row
 *  gtn_lite  one shared GRU per variable sequence, forecast features added to
 *            covariate tokens, self-attention across variables, pooling to
 *            network cells and one message-passing round
 */
class Encoder {
public:
    Encoder() = default;

    Encoder(detail::LayerFactory& f, const std::string& prefix, const ModelLayout& L, const NetConfig& cfg)
        : L_(&L), cfg_(cfg) {
        const std::size_t kc = L.k() * L.C();
        switch (cfg.arch) {
        case Architecture::mlp:
            dim_ = L.w() * L.V() + kc;
            return;
        case Architecture::rnn:
            gru_ = f.gru(prefix + ".gru", L.V(), cfg.hidden);
            dim_ = cfg.hidden;
            break;
        case Architecture::gtn_lite:
            gru_ = f.gru(prefix + ".var_gru", 1 + L.V(), cfg.var_hidden);
            fut_tok_ = f.dense(prefix + ".fut_tok", L.k(), cfg.var_hidden);
            attn_ = f.attention(prefix + ".attn", cfg.var_hidden);
            graph_ = f.graph(prefix + ".graph", L.adjacency, cfg.var_hidden, cfg.var_hidden);
            dim_ = L.cells.size() * cfg.var_hidden;
            break;
        }
        fut_ = f.dense(prefix + ".fut", kc, cfg.future_dim);
        dim_ += cfg.future_dim + L.V();
    }

    std::size_t dim() const { return dim_; }

    Encoded operator()(const Tensor& past, const Tensor& cov) const {
        const auto& L = *L_;
        const std::size_t B = past.dim(0);
        if (past.rank() != 3 || past.dim(1) != L.w() || past.dim(2) != L.V())
            throw StructuralError("encoder expects past " + ad::shape_str({B, L.w(), L.V()}) + ", got " +
                                  ad::shape_str(past.shape()));
        if (cov.rank() != 3 || cov.dim(0) != B || cov.dim(1) != L.k() || cov.dim(2) != L.C())
            throw StructuralError("encoder expects future covariates " + ad::shape_str({B, L.k(), L.C()}) +
                                  ", got " + ad::shape_str(cov.shape()));
        Encoded e;
        const Tensor last_row = detail::step_of(past, L.w() - 1);
        {
            std::vector<Tensor> lv;
            for (auto c : L.level_cols) lv.push_back(ad::slice(last_row, 1, c, c + 1));
            e.last_level = ad::concat(lv, 1);
        }
        if (cfg_.arch == Architecture::mlp) {
            e.context = ad::concat({detail::flatten(past), detail::flatten(cov)}, 1);
            return e;
        }
        Tensor body;
        if (cfg_.arch == Architecture::rnn) {
            Tensor h = gru_.initial_state(B);
            for (std::size_t t = 0; t < L.w(); ++t) h = gru_(detail::step_of(past, t), h);
            body = h;
        } else {
            const std::size_t V = L.V(), d = cfg_.var_hidden;
            Array onehot({B * V, V});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t v = 0; v < V; ++v) onehot.data[(b * V + v) * V + v] = 1.0;
            const Tensor ids = Tensor::constant(std::move(onehot));
            Tensor h = gru_.initial_state(B * V);
            for (std::size_t t = 0; t < L.w(); ++t) {
                const Tensor x = ad::reshape(ad::slice(past, 1, t, t + 1), {B * V, 1});
                h = gru_(ad::concat({x, ids}, 1), h);
            }
            Tensor tokens = ad::reshape(h, {B, V, d});
            const Tensor fut = ad::tanh(fut_tok_(ad::transpose(cov))); // [B, C, d]
            tokens = tokens + ad::matmul(Tensor::constant(L.cov_scatter), fut);
            auto att = attn_(tokens);
            e.attention = att.weights;
            tokens = tokens + att.output;
            const Tensor cells = ad::matmul(Tensor::constant(L.pool), tokens); // [B, cells, d]
            body = detail::flatten(ad::tanh(graph_(cells)));
        }
        const Tensor fsum = ad::tanh(fut_(detail::flatten(cov)));
        e.context = ad::concat({body, fsum, last_row}, 1);
        return e;
    }

private:
    const ModelLayout* L_ = nullptr;
    NetConfig cfg_;
    std::size_t dim_ = 0;
    GruCell gru_;
    Dense fut_, fut_tok_;
    Attention attn_;
    GraphMessagePass graph_;
};

/// Evaluator head: (encoded window, covariates, schedule) -> levels in model space [B, k, N].
class EvaluatorDecoder {
public:
    EvaluatorDecoder() = default;

    EvaluatorDecoder(detail::LayerFactory& f, const std::string& prefix, const ModelLayout& L, const NetConfig& cfg,
                     std::size_t context_dim)
        : L_(&L), cfg_(cfg) {
        if (cfg.arch == Architecture::mlp) {
            l1_ = f.dense(prefix + ".l1", context_dim + L.k() * L.S(), cfg.mlp_hidden);
            l2_ = f.dense(prefix + ".l2", cfg.mlp_hidden, cfg.mlp_hidden);
            out_ = f.dense(prefix + ".out", cfg.mlp_hidden, L.k() * L.N());
        } else {
            init_ = f.dense(prefix + ".init", context_dim, cfg.hidden);
            gru_ = f.gru(prefix + ".gru", L.C() + L.S(), cfg.hidden);
            out_ = f.dense(prefix + ".out", cfg.hidden, L.N());
        }
        if (f.creating()) detail::fill(out_.weight, 0.0); // start from persistence
    }

    Tensor operator()(const Encoded& e, const Tensor& cov, const Tensor& ctrl) const {
        const auto& L = *L_;
        const std::size_t B = cov.dim(0);
        if (ctrl.rank() != 3 || ctrl.dim(0) != B || ctrl.dim(1) != L.k() || ctrl.dim(2) != L.S())
            throw StructuralError("evaluator expects schedule " + ad::shape_str({B, L.k(), L.S()}) + ", got " +
                                  ad::shape_str(ctrl.shape()));
        if (cfg_.arch == Architecture::mlp) {
            Tensor h = ad::relu(l1_(ad::concat({e.context, detail::flatten(ctrl)}, 1)));
            h = ad::relu(l2_(h));
            const Tensor delta = ad::reshape(out_(h), {B, L.k(), L.N()});
            std::vector<Tensor> rows;
            for (std::size_t j = 0; j < L.k(); ++j) rows.push_back(detail::step_of(delta, j) + e.last_level);
            return stack(rows, B);
        }
        const Tensor inp = ad::concat({cov, ctrl}, 2);
        Tensor h = ad::tanh(init_(e.context));
        std::vector<Tensor> rows;
        for (std::size_t j = 0; j < L.k(); ++j) {
            h = gru_(detail::step_of(inp, j), h);
            rows.push_back(out_(h) + e.last_level);
        }
        return stack(rows, B);
    }

private:
    Tensor stack(const std::vector<Tensor>& rows, std::size_t B) const {
        std::vector<Tensor> r3;
        for (const auto& r : rows) r3.push_back(ad::reshape(r, {B, 1, L_->N()}));
        return ad::concat(r3, 1);
    }

    const ModelLayout* L_ = nullptr;
    NetConfig cfg_;
    Dense l1_, l2_, out_, init_;
    GruCell gru_;
};

/// Manager head: encoded window and covariates -> schedule in [0,1], [B, k, S].
class ManagerDecoder {
public:
    ManagerDecoder() = default;

    ManagerDecoder(detail::LayerFactory& f, const std::string& prefix, const ModelLayout& L, const NetConfig& cfg,
                   std::size_t context_dim, double initial_bias)
        : L_(&L), cfg_(cfg) {
        if (cfg.arch == Architecture::mlp) {
            l1_ = f.dense(prefix + ".l1", context_dim, cfg.mlp_hidden);
            l2_ = f.dense(prefix + ".l2", cfg.mlp_hidden, cfg.mlp_hidden);
            out_ = f.dense(prefix + ".out", cfg.mlp_hidden, L.k() * L.S());
        } else {
            init_ = f.dense(prefix + ".init", context_dim, cfg.hidden);
            gru_ = f.gru(prefix + ".gru", L.C(), cfg.hidden);
            out_ = f.dense(prefix + ".out", cfg.hidden, L.S());
        }
        if (f.creating()) detail::fill(out_.bias, initial_bias);
    }

    Tensor operator()(const Encoded& e, const Tensor& cov) const {
        const auto& L = *L_;
        const std::size_t B = cov.dim(0);
        if (cfg_.arch == Architecture::mlp) {
            Tensor h = ad::relu(l1_(e.context));
            h = ad::relu(l2_(h));
            return ad::sigmoid(ad::reshape(out_(h), {B, L.k(), L.S()}));
        }
        Tensor h = ad::tanh(init_(e.context));
        std::vector<Tensor> rows;
        for (std::size_t j = 0; j < L.k(); ++j) {
            h = gru_(detail::step_of(cov, j), h);
            rows.push_back(ad::reshape(out_(h), {B, 1, L.S()}));
        }
        return ad::sigmoid(ad::concat(rows, 1));
    }

private:
    const ModelLayout* L_ = nullptr;
    NetConfig cfg_;
    Dense l1_, l2_, out_, init_;
    GruCell gru_;
};

} // namespace fidlar::models
