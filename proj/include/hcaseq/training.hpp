#pragma once

// BPR-framework learning of the HCA-GRU parameters: triple construction,
// the pairwise preference and loss, exact hand-derived BPTT gradients
// (including the paths through both attention softmaxes and through
// context-buffer membership), and SGD with L2 regularization. One user
// sequence forms one mini-batch.

#include <chrono>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "hcaseq/corpus.hpp"
#include "hcaseq/model.hpp"
#include "hcaseq/numerics.hpp"

namespace hcaseq {

struct TrainConfig {
    double lr = 0.01;          // alpha
    double l2 = 0.001;         // lambda_Theta, applied to all of Theta once per sgd_step
    int epochs = 10;
    double init_range = 0.5;   // uniform init on [-init_range, +init_range]
    uint64_t seed = 1;
    bool average_gradients = false;  // divide the per-sequence gradient sum by its triple count
    double clip_norm = 0.0;          // max global gradient norm, 0 disables

    void validate() const {
        if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (l2 < 0.0) throw std::invalid_argument("TrainConfig: l2 must be >= 0");
        if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
        if (init_range < 0.0) throw std::invalid_argument("TrainConfig: init_range must be >= 0");
        if (clip_norm < 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be >= 0");
    }
};

struct Triple {
    int u = 0;  // user index
    int p = 0;  // positive item (the observed next item)
    int q = 0;  // sampled negative item
    int t = 0;  // position of the scoring step inside the training prefix
};

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams g;
    g.X = Mat(p.X.rows, p.X.cols);
    auto like = [](const Mat& m) { return Mat(m.rows, m.cols); };
    g.Uz = like(p.Uz); g.Ur = like(p.Ur); g.Uc = like(p.Uc);
    g.Wz = like(p.Wz); g.Wr = like(p.Wr); g.Wc = like(p.Wc);
    g.Vz = like(p.Vz); g.Vr = like(p.Vr); g.Vc = like(p.Vc);
    g.bz = zeros(static_cast<int>(p.bz.size()));
    g.br = zeros(static_cast<int>(p.br.size()));
    g.bc = zeros(static_cast<int>(p.bc.size()));
    g.rx = zeros(static_cast<int>(p.rx.size()));
    g.Qx = like(p.Qx);
    g.rh = zeros(static_cast<int>(p.rh.size()));
    g.Qh = like(p.Qh);
    g.E = like(p.E); g.F = like(p.F);
    return g;
}

// Every Theta entry i.i.d. uniform on [-init_range, +init_range], drawn in
// the canonical field order of for_each_param. Fields outside Theta for the
// chosen kind are left at zero and draw nothing.
inline ModelParams init_params(const HyperParams& hp, const TrainConfig& cfg, ModelKind kind = ModelKind::hca) {
    hp.validate();
    ModelParams p(hp);
    Rng rng(cfg.seed);
    for_each_param(p, [&](const char* name, auto& field) {
        if (!param_in_theta(kind, name)) return;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, Mat>) {
            for (double& x : field.a) x = rng.uniform(-cfg.init_range, cfg.init_range);
        } else {
            for (double& x : field) x = rng.uniform(-cfg.init_range, cfg.init_range);
        }
    });
    return p;
}

inline double theta_squared_norm(const ModelParams& p, ModelKind kind = ModelKind::hca) {
    double s = 0.0;
    for_each_param(p, [&](const char* name, const auto& field) {
        if (!param_in_theta(kind, name)) return;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, Mat>) {
            for (double x : field.a) s += x * x;
        } else {
            for (double x : field) s += x * x;
        }
    });
    return s;
}

// Uniform draw over the items the user has never interacted with (full
// history, train and test). `owned` is a 0/1 mask over the vocabulary.
inline int sample_negative(const std::vector<uint8_t>& owned, int owned_count, Rng& rng) {
    const int n_items = static_cast<int>(owned.size());
    if (owned_count >= n_items) throw std::runtime_error("sample_negative: user owns every item");
    for (;;) {
        const int candidate = static_cast<int>(rng.below(static_cast<uint64_t>(n_items)));
        if (!owned[static_cast<size_t>(candidate)]) return candidate;
    }
}

// xhat = h_o . (x_p - x_q)
inline double preference(const Vec& h_o, const Vec& x_p, const Vec& x_q) {
    return dot(h_o, sub(x_p, x_q));
}

// -ln sigma(x), computed in the overflow-safe log1p form.
inline double neg_log_sigmoid(double x) {
    return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double bpr_loss(double xhat, double l2, const ModelParams& params, ModelKind kind = ModelKind::hca) {
    if (!std::isfinite(xhat)) throw std::invalid_argument("bpr_loss: non-finite preference");
    return neg_log_sigmoid(xhat) + 0.5 * l2 * theta_squared_norm(params, kind);
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

namespace detail {

// d softmax / d e applied to an upstream weight gradient:
// ge[j] = a[j] * (ga[j] - sum_k a[k] ga[k])
inline Vec softmax_backward(const Vec& a, const Vec& ga) {
    double s = 0.0;
    for (size_t k = 0; k < a.size(); ++k) s += a[k] * ga[k];
    Vec ge(a.size());
    for (size_t j = 0; j < a.size(); ++j) ge[j] = a[j] * (ga[j] - s);
    return ge;
}

// Backward of attend(): context = sum_j a_j c_j with e_j = r_w . tanh(Q c_j).
// Accumulates into grad_r and grad_Q; returns the gradient w.r.t. each
// context row (the caller scatters those onto real time steps and drops the
// zero-padding rows, which are constants).
inline std::vector<Vec> attention_backward(const Mat& C, const Vec& a, const Vec& r_w, const Mat& Q,
                                           const Vec& g_context, Vec& grad_r, Mat& grad_Q) {
    const int w = C.rows;
    const int d = C.cols;
    Vec ga(static_cast<size_t>(w));
    std::vector<Vec> row_grads(static_cast<size_t>(w));
    for (int j = 0; j < w; ++j) {
        const Vec cj = C.row(j);
        ga[static_cast<size_t>(j)] = dot(g_context, cj);
        row_grads[static_cast<size_t>(j)] = scaled(a[static_cast<size_t>(j)], g_context);
    }
    const Vec ge = softmax_backward(a, ga);
    for (int j = 0; j < w; ++j) {
        const Vec cj = C.row(j);
        const Vec s = tanh_vec(matvec(Q, cj));
        axpy(ge[static_cast<size_t>(j)], s, grad_r);
        Vec g_pre(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i)
            g_pre[static_cast<size_t>(i)] =
                ge[static_cast<size_t>(j)] * r_w[static_cast<size_t>(i)] * (1.0 - s[static_cast<size_t>(i)] * s[static_cast<size_t>(i)]);
        add_outer(grad_Q, g_pre, cj);
        axpy(1.0, matvec_t(Q, g_pre), row_grads[static_cast<size_t>(j)]);
    }
    return row_grads;
}

// Backward of one hca_cell application. g_h is the total gradient arriving
// at h^t; outputs the gradients w.r.t. the step's input embedding, its
// contextual input and the previous hidden state.
inline void cell_backward(const StepTrace& tr, const Vec& h_prev, const Vec& g_h, const ModelParams& p,
                          ModelParams& g, Vec& g_x, Vec& g_xc, Vec& g_hprev) {
    const size_t d = g_h.size();
    Vec g_z(d), g_htilde(d);
    g_hprev.assign(d, 0.0);
    for (size_t i = 0; i < d; ++i) {
        g_z[i] = g_h[i] * (tr.h_tilde[i] - h_prev[i]);
        g_htilde[i] = g_h[i] * tr.z[i];
        g_hprev[i] = g_h[i] * (1.0 - tr.z[i]);
    }

    // candidate state: h~ = tanh(Uc x + Vc xc + Wc (r . h_prev) + bc)
    Vec g_cp(d);
    for (size_t i = 0; i < d; ++i) g_cp[i] = g_htilde[i] * (1.0 - tr.h_tilde[i] * tr.h_tilde[i]);
    add_outer(g.Uc, g_cp, tr.x);
    add_outer(g.Vc, g_cp, tr.xc);
    add_outer(g.Wc, g_cp, hadamard(tr.r, h_prev));
    axpy(1.0, g_cp, g.bc);
    g_x = matvec_t(p.Uc, g_cp);
    g_xc = matvec_t(p.Vc, g_cp);
    const Vec g_rh = matvec_t(p.Wc, g_cp);
    Vec g_r(d);
    for (size_t i = 0; i < d; ++i) {
        g_r[i] = g_rh[i] * h_prev[i];
        g_hprev[i] += g_rh[i] * tr.r[i];
    }

    // reset gate
    Vec g_rp(d);
    for (size_t i = 0; i < d; ++i) g_rp[i] = g_r[i] * tr.r[i] * (1.0 - tr.r[i]);
    add_outer(g.Ur, g_rp, tr.x);
    add_outer(g.Vr, g_rp, tr.xc);
    add_outer(g.Wr, g_rp, h_prev);
    axpy(1.0, g_rp, g.br);
    axpy(1.0, matvec_t(p.Ur, g_rp), g_x);
    axpy(1.0, matvec_t(p.Vr, g_rp), g_xc);
    axpy(1.0, matvec_t(p.Wr, g_rp), g_hprev);

    // update gate
    Vec g_zp(d);
    for (size_t i = 0; i < d; ++i) g_zp[i] = g_z[i] * tr.z[i] * (1.0 - tr.z[i]);
    add_outer(g.Uz, g_zp, tr.x);
    add_outer(g.Vz, g_zp, tr.xc);
    add_outer(g.Wz, g_zp, h_prev);
    axpy(1.0, g_zp, g.bz);
    axpy(1.0, matvec_t(p.Uz, g_zp), g_x);
    axpy(1.0, matvec_t(p.Vz, g_zp), g_xc);
    axpy(1.0, matvec_t(p.Wz, g_zp), g_hprev);
}

}  // namespace detail

struct BackpropResult {
    ModelParams grads;   // gradient of the summed data loss, no regularization term
    double data_loss = 0.0;
    int n_triples = 0;
};

// Exact gradient of sum_t -ln sigma(xhat^t) over one user sequence.
// Pair i of (positives, negatives) scores step i of the traces; the caller
// supplies one pair per step whose successor lies inside the training
// prefix, so pairs.size() <= traces.size() - 1.
//
// The gradient covers every path: the fusion head, the hidden attention
// (h^t participates in up to w_h later contexts), the gates, the input
// attention (x^t participates in up to w_x later contexts), the recurrence,
// and the embedding rows of both the inputs and the p/q targets. For the
// plain-GRU kind the score is h^t . (x_p - x_q) and the fusion/attention
// paths carry no gradient.
inline BackpropResult backprop_sequence(const std::vector<StepTrace>& traces, const std::vector<int>& positives,
                                        const std::vector<int>& negatives, const ModelParams& p,
                                        const HyperParams& hp, ModelKind kind = ModelKind::hca) {
    const int n = static_cast<int>(traces.size());
    if (positives.size() != negatives.size())
        throw std::invalid_argument("backprop_sequence: positives/negatives length mismatch");
    const int n_triples = static_cast<int>(positives.size());
    if (n_triples > n - 1 && !(n_triples == 0 && n >= 1))
        throw std::invalid_argument("backprop_sequence: more pairs than steps with a successor");

    BackpropResult out;
    out.grads = zeros_like(p);
    out.n_triples = n_triples;
    ModelParams& g = out.grads;
    const size_t d = static_cast<size_t>(hp.dim);

    // Gradient arriving at each h^t from scoring heads and from hidden
    // attention contexts of later steps. The recurrence part is carried
    // separately in the reverse sweep below.
    std::vector<Vec> gh_buf(static_cast<size_t>(n), zeros(hp.dim));

    for (int t = 0; t < n_triples; ++t) {
        const StepTrace& tr = traces[static_cast<size_t>(t)];
        const int pi = positives[static_cast<size_t>(t)];
        const int qi = negatives[static_cast<size_t>(t)];
        if (pi < 0 || pi >= p.n_items() || qi < 0 || qi >= p.n_items())
            throw std::out_of_range("backprop_sequence: target item index out of range at step " + std::to_string(t));
        const Vec xp = p.X.row(pi);
        const Vec xq = p.X.row(qi);
        const Vec& score_vec = kind == ModelKind::hca ? tr.ho : tr.h;
        const double xhat = preference(score_vec, xp, xq);
        out.data_loss += neg_log_sigmoid(xhat);
        const double gs = sigmoid(xhat) - 1.0;  // d(-ln sigma)/dxhat

        for (size_t i = 0; i < d; ++i) {
            g.X(pi, static_cast<int>(i)) += gs * score_vec[i];
            g.X(qi, static_cast<int>(i)) -= gs * score_vec[i];
        }

        if (kind == ModelKind::hca) {
            Vec g_u(d);
            for (size_t i = 0; i < d; ++i) {
                const double g_ho = gs * (xp[i] - xq[i]);
                g_u[i] = g_ho * (1.0 - tr.ho[i] * tr.ho[i]);
            }
            add_outer(g.E, g_u, tr.h);
            add_outer(g.F, g_u, tr.hc);
            axpy(1.0, matvec_t(p.E, g_u), gh_buf[static_cast<size_t>(t)]);
            const Vec g_hc = matvec_t(p.F, g_u);
            const auto row_grads = detail::attention_backward(tr.ch, tr.ah, p.rh, p.Qh, g_hc, g.rh, g.Qh);
            for (int j = 0; j < hp.window_h; ++j) {
                const int tau = t - hp.window_h + 1 + j;
                if (tau >= 0) axpy(1.0, row_grads[static_cast<size_t>(j)], gh_buf[static_cast<size_t>(tau)]);
            }
        } else {
            for (size_t i = 0; i < d; ++i) gh_buf[static_cast<size_t>(t)][i] += gs * (xp[i] - xq[i]);
        }
    }

    // Reverse sweep through the recurrence and the input-side modeling.
    Vec g_rec = zeros(hp.dim);
    Vec g_x, g_xc, g_hprev;
    for (int t = n - 1; t >= 0; --t) {
        const StepTrace& tr = traces[static_cast<size_t>(t)];
        Vec g_h = gh_buf[static_cast<size_t>(t)];
        axpy(1.0, g_rec, g_h);
        const Vec h_prev = t > 0 ? traces[static_cast<size_t>(t - 1)].h : zeros(hp.dim);
        detail::cell_backward(tr, h_prev, g_h, p, g, g_x, g_xc, g_hprev);

        const auto row_grads = detail::attention_backward(tr.cx, tr.ax, p.rx, p.Qx, g_xc, g.rx, g.Qx);
        for (int j = 0; j < hp.window_x; ++j) {
            const int tau = t - hp.window_x + 1 + j;
            if (tau < 0) continue;  // zero-padding rows are constants
            const int item = traces[static_cast<size_t>(tau)].item;
            const Vec& rg = row_grads[static_cast<size_t>(j)];
            for (size_t i = 0; i < d; ++i) g.X(item, static_cast<int>(i)) += rg[i];
        }
        for (size_t i = 0; i < d; ++i) g.X(tr.item, static_cast<int>(i)) += g_x[i];
        g_rec = g_hprev;
    }

    for_each_param(g, [](const char* name, const auto& field) {
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, Mat>) {
            for (double x : field.a)
                if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite gradient in ") + name);
        } else {
            for (double x : field)
                if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite gradient in ") + name);
        }
    });
    return out;
}

// theta <- theta - lr * (grad + l2 * theta) over every Theta field of the
// given kind. Regularization is applied once per call (per mini-batch).
inline void sgd_step(ModelParams& params, const ModelParams& grads, const TrainConfig& cfg,
                     ModelKind kind = ModelKind::hca) {
    double scale = 1.0;
    if (cfg.clip_norm > 0.0) {
        const double norm = std::sqrt(theta_squared_norm(grads, kind));
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    auto update = [&](auto& theta, const auto& grad) {
        theta -= cfg.lr * (scale * grad + cfg.l2 * theta);
    };
    for_each_param(params, [&](const char* name, auto& field) {
        if (!param_in_theta(kind, name)) return;
        using T = std::decay_t<decltype(field)>;
        const ModelParams& gc = grads;
        // Locate the matching gradient field by name via a second walk.
        for_each_param(gc, [&](const char* gname, const auto& gfield) {
            if (std::string_view(gname) != name) return;
            using G = std::decay_t<decltype(gfield)>;
            if constexpr (std::is_same_v<T, Mat> && std::is_same_v<G, Mat>) {
                for (size_t i = 0; i < field.a.size(); ++i) update(field.a[i], gfield.a[i]);
            } else if constexpr (std::is_same_v<T, Vec> && std::is_same_v<G, Vec>) {
                for (size_t i = 0; i < field.size(); ++i) update(field[i], gfield[i]);
            }
        });
    });
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;  // mean per-triple -ln sigma(xhat), data term only
    double seconds = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

// One pass: for each user in seeded shuffled order, forward the training
// prefix, draw one fresh negative per step, backprop, and apply one SGD
// update for the whole sequence. Fully sequential and bit-reproducible
// under a fixed (seed, corpus, config).
inline TrainResult train(const Corpus& corpus, const HyperParams& hp, const TrainConfig& cfg,
                         ModelKind kind = ModelKind::hca) {
    hp.validate();
    cfg.validate();
    if (hp.n_items != corpus.n_items())
        throw std::invalid_argument("train: HyperParams.n_items does not match the corpus vocabulary");

    TrainResult result;
    result.params = init_params(hp, cfg, kind);
    // Separate stream from init_params so the two uses never alias.
    Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

    const int n_users = corpus.n_users();
    std::vector<std::vector<uint8_t>> owned(static_cast<size_t>(n_users));
    std::vector<int> owned_count(static_cast<size_t>(n_users), 0);
    for (int u = 0; u < n_users; ++u) {
        auto& mask = owned[static_cast<size_t>(u)];
        mask.assign(static_cast<size_t>(corpus.n_items()), 0);
        for (int it : corpus.users[static_cast<size_t>(u)].train) mask[static_cast<size_t>(it)] = 1;
        for (int it : corpus.users[static_cast<size_t>(u)].test) mask[static_cast<size_t>(it)] = 1;
        for (uint8_t b : mask) owned_count[static_cast<size_t>(u)] += b;
    }

    std::vector<int> order(static_cast<size_t>(n_users));
    for (int u = 0; u < n_users; ++u) order[static_cast<size_t>(u)] = u;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double loss_sum = 0.0;
        long long triples = 0;
        for (int u : order) {
            const std::vector<int>& prefix = corpus.users[static_cast<size_t>(u)].train;
            if (prefix.size() < 2) continue;  // the last prefix item has no in-prefix successor
            const auto traces = forward_sequence(prefix, result.params, hp);
            const int k = static_cast<int>(prefix.size()) - 1;
            std::vector<int> positives(prefix.begin() + 1, prefix.end());
            std::vector<int> negatives(static_cast<size_t>(k));
            for (int t = 0; t < k; ++t)
                negatives[static_cast<size_t>(t)] =
                    sample_negative(owned[static_cast<size_t>(u)], owned_count[static_cast<size_t>(u)], rng);
            BackpropResult bp = backprop_sequence(traces, positives, negatives, result.params, hp, kind);
            if (cfg.average_gradients && bp.n_triples > 0) {
                const double inv = 1.0 / bp.n_triples;
                for_each_param(bp.grads, [&](const char*, auto& field) {
                    using T = std::decay_t<decltype(field)>;
                    if constexpr (std::is_same_v<T, Mat>) {
                        for (double& x : field.a) x *= inv;
                    } else {
                        for (double& x : field) x *= inv;
                    }
                });
            }
            sgd_step(result.params, bp.grads, cfg, kind);
            loss_sum += bp.data_loss;
            triples += bp.n_triples;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(EpochLog{epoch, triples > 0 ? loss_sum / static_cast<double>(triples) : 0.0, secs});
    }
    return result;
}

// ---------------------------------------------------------------------------
// flattened parameter view (finite-difference harness)
// ---------------------------------------------------------------------------

inline Vec flatten_params(const ModelParams& p, ModelKind kind = ModelKind::hca) {
    Vec out;
    for_each_param(p, [&](const char* name, const auto& field) {
        if (!param_in_theta(kind, name)) return;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, Mat>) {
            out.insert(out.end(), field.a.begin(), field.a.end());
        } else {
            out.insert(out.end(), field.begin(), field.end());
        }
    });
    return out;
}

inline void unflatten_params(ModelParams& p, const Vec& flat, ModelKind kind = ModelKind::hca) {
    size_t pos = 0;
    for_each_param(p, [&](const char* name, auto& field) {
        if (!param_in_theta(kind, name)) return;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, Mat>) {
            std::copy(flat.begin() + pos, flat.begin() + pos + field.a.size(), field.a.begin());
            pos += field.a.size();
        } else {
            std::copy(flat.begin() + pos, flat.begin() + pos + field.size(), field.begin());
            pos += field.size();
        }
    });
    if (pos != flat.size()) throw std::invalid_argument("unflatten_params: length mismatch");
}

}  // namespace hcaseq
