#pragma once

// HCA-GRU forward pass: a GRU cell augmented with attention-weighted context
// over the last w_x input embeddings and the last w_h hidden states. Each
// step keeps a full trace of intermediates so training can backpropagate
// through time without recomputing the forward pass.

#include <string>
#include <vector>

#include "hcaseq/numerics.hpp"

namespace hcaseq {

struct HyperParams {
    int dim = 20;       // latent dimensionality d
    int window_x = 1;   // input context width
    int window_h = 1;   // hidden context width
    int n_items = 0;

    void validate() const {
        if (dim < 1) throw std::invalid_argument("HyperParams: dim must be >= 1");
        if (window_x < 1 || window_x > 16) throw std::invalid_argument("HyperParams: window_x must be in [1,16]");
        if (window_h < 1 || window_h > 16) throw std::invalid_argument("HyperParams: window_h must be in [1,16]");
        if (n_items < 2) throw std::invalid_argument("HyperParams: n_items must be >= 2");
    }
};

// Which parameters are trained and how sequences are scored.
//   hca: full model, scores with the fused overall interest h_o.
//   gru: plain GRU baseline, scores with the hidden state h directly;
//        V_*, r_x, Q_x, r_h, Q_h stay frozen at zero and outside Theta.
enum class ModelKind { hca, gru };

inline const char* to_string(ModelKind k) { return k == ModelKind::hca ? "hca" : "gru"; }

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "hca") return ModelKind::hca;
    if (s == "gru") return ModelKind::gru;
    throw std::invalid_argument("unknown model kind: " + s);
}

// The full parameter set Theta. Item embeddings X are shared between the
// network input and the scoring head.
struct ModelParams {
    Mat X;                  // n_items x d
    Mat Uz, Ur, Uc;         // d x d, input transitions
    Mat Wz, Wr, Wc;         // d x d, recurrent transitions
    Mat Vz, Vr, Vc;         // d x d, contextual-input transitions
    Vec bz, br, bc;         // gate biases
    Vec rx;                 // input attention weight vector
    Mat Qx;                 // input attention matrix
    Vec rh;                 // hidden attention weight vector
    Mat Qh;                 // hidden attention matrix
    Mat E, F;               // fusion of h and h_c into the overall interest

    ModelParams() = default;
    explicit ModelParams(const HyperParams& hp)
        : X(hp.n_items, hp.dim),
          Uz(hp.dim, hp.dim), Ur(hp.dim, hp.dim), Uc(hp.dim, hp.dim),
          Wz(hp.dim, hp.dim), Wr(hp.dim, hp.dim), Wc(hp.dim, hp.dim),
          Vz(hp.dim, hp.dim), Vr(hp.dim, hp.dim), Vc(hp.dim, hp.dim),
          bz(zeros(hp.dim)), br(zeros(hp.dim)), bc(zeros(hp.dim)),
          rx(zeros(hp.dim)), Qx(hp.dim, hp.dim),
          rh(zeros(hp.dim)), Qh(hp.dim, hp.dim),
          E(hp.dim, hp.dim), F(hp.dim, hp.dim) {}

    int dim() const { return Uz.rows; }
    int n_items() const { return X.rows; }
};

// Visits every parameter field in the canonical order
// X, Uz, Ur, Uc, Wz, Wr, Wc, Vz, Vr, Vc, bz, br, bc, rx, Qx, rh, Qh, E, F.
// This order defines both the initialization draw sequence and the
// flattened layout used by the gradient checker.
template <typename P, typename Fn>
void for_each_param(P& p, Fn&& fn) {
    fn("X", p.X);
    fn("Uz", p.Uz); fn("Ur", p.Ur); fn("Uc", p.Uc);
    fn("Wz", p.Wz); fn("Wr", p.Wr); fn("Wc", p.Wc);
    fn("Vz", p.Vz); fn("Vr", p.Vr); fn("Vc", p.Vc);
    fn("bz", p.bz); fn("br", p.br); fn("bc", p.bc);
    fn("rx", p.rx); fn("Qx", p.Qx);
    fn("rh", p.rh); fn("Qh", p.Qh);
    fn("E", p.E); fn("F", p.F);
}

// Theta membership per model kind. The plain-GRU baseline keeps E and F as
// free (if inert) parameters but freezes the contextual and attention ones.
inline bool param_in_theta(ModelKind kind, const std::string& name) {
    if (kind == ModelKind::hca) return true;
    return !(name == "Vz" || name == "Vr" || name == "Vc" ||
             name == "rx" || name == "Qx" || name == "rh" || name == "Qh");
}

// ---------------------------------------------------------------------------
// context buffers
// ---------------------------------------------------------------------------

// Fixed-size ring of the most recent `width` vectors. Slots that precede the
// start of the sequence hold exact zero vectors, so a snapshot is always a
// full width x dim context matrix (oldest row first, newest row last).
class ContextBuffer {
public:
    ContextBuffer(int width, int dim)
        : width_(width), slots_(static_cast<size_t>(width), zeros(dim)) {
        if (width < 1) throw std::invalid_argument("ContextBuffer: width must be >= 1");
    }

    void push(const Vec& v) {
        slots_[head_] = v;
        head_ = (head_ + 1) % static_cast<size_t>(width_);
    }

    Mat snapshot() const {
        Mat m(width_, static_cast<int>(slots_[0].size()));
        for (int j = 0; j < width_; ++j) {
            const size_t idx = (head_ + static_cast<size_t>(j)) % static_cast<size_t>(width_);
            m.set_row(j, slots_[idx]);
        }
        return m;
    }

    int width() const { return width_; }

private:
    int width_;
    std::vector<Vec> slots_;
    size_t head_ = 0;
};

// ---------------------------------------------------------------------------
// cells and attention
// ---------------------------------------------------------------------------

struct CellOutput {
    Vec z, r, h_tilde, h;
};

namespace detail {
inline void check_gate(const Vec& v, const char* gate) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite value in ") + gate);
}
}  // namespace detail

// Basic GRU cell:
//   z = sigma(Uz x + Wz h_prev + bz)
//   r = sigma(Ur x + Wr h_prev + br)
//   h~ = tanh(Uc x + Wc (r . h_prev) + bc)
//   h = (1 - z) . h_prev + z . h~
inline CellOutput gru_cell(const Vec& x, const Vec& h_prev, const ModelParams& p) {
    CellOutput out;
    Vec zp = matvec(p.Uz, x);
    axpy(1.0, matvec(p.Wz, h_prev), zp);
    axpy(1.0, p.bz, zp);
    out.z = sigmoid(zp);
    detail::check_gate(out.z, "update gate z");

    Vec rp = matvec(p.Ur, x);
    axpy(1.0, matvec(p.Wr, h_prev), rp);
    axpy(1.0, p.br, rp);
    out.r = sigmoid(rp);
    detail::check_gate(out.r, "reset gate r");

    Vec cp = matvec(p.Uc, x);
    axpy(1.0, matvec(p.Wc, hadamard(out.r, h_prev)), cp);
    axpy(1.0, p.bc, cp);
    out.h_tilde = tanh_vec(cp);
    detail::check_gate(out.h_tilde, "candidate state h_tilde");

    out.h = Vec(x.size());
    for (size_t i = 0; i < out.h.size(); ++i)
        out.h[i] = (1.0 - out.z[i]) * h_prev[i] + out.z[i] * out.h_tilde[i];
    detail::check_gate(out.h, "hidden state h");
    return out;
}

// Context-augmented cell: identical to gru_cell with V_* x_c added to each
// of the three pre-activations.
inline CellOutput hca_cell(const Vec& x, const Vec& x_c, const Vec& h_prev, const ModelParams& p) {
    CellOutput out;
    Vec zp = matvec(p.Uz, x);
    axpy(1.0, matvec(p.Vz, x_c), zp);
    axpy(1.0, matvec(p.Wz, h_prev), zp);
    axpy(1.0, p.bz, zp);
    out.z = sigmoid(zp);
    detail::check_gate(out.z, "update gate z");

    Vec rp = matvec(p.Ur, x);
    axpy(1.0, matvec(p.Vr, x_c), rp);
    axpy(1.0, matvec(p.Wr, h_prev), rp);
    axpy(1.0, p.br, rp);
    out.r = sigmoid(rp);
    detail::check_gate(out.r, "reset gate r");

    Vec cp = matvec(p.Uc, x);
    axpy(1.0, matvec(p.Vc, x_c), cp);
    axpy(1.0, matvec(p.Wc, hadamard(out.r, h_prev)), cp);
    axpy(1.0, p.bc, cp);
    out.h_tilde = tanh_vec(cp);
    detail::check_gate(out.h_tilde, "candidate state h_tilde");

    out.h = Vec(x.size());
    for (size_t i = 0; i < out.h.size(); ++i)
        out.h[i] = (1.0 - out.z[i]) * h_prev[i] + out.z[i] * out.h_tilde[i];
    detail::check_gate(out.h, "hidden state h");
    return out;
}

struct AttentionOutput {
    Vec e;        // raw scores, one per context row
    Vec a;        // softmax weights
    Vec context;  // weighted sum of the rows, a convex combination
};

// Shared attention kernel over a context matrix C (w rows of dimension d):
//   e[j] = r_w . tanh(Q c_j),  a = softmax(e),  context = sum_j a[j] c_j.
inline AttentionOutput attend(const Mat& C, const Vec& r_w, const Mat& Q) {
    const int w = C.rows;
    const int d = C.cols;
    if (static_cast<int>(r_w.size()) != d || Q.rows != d || Q.cols != d)
        throw std::invalid_argument("attend: shape mismatch");
    AttentionOutput out;
    out.e.resize(static_cast<size_t>(w));
    for (int j = 0; j < w; ++j)
        out.e[j] = dot(r_w, tanh_vec(matvec(Q, C.row(j))));
    out.a = softmax(out.e);
    out.context = zeros(d);
    for (int j = 0; j < w; ++j) {
        const double* row = C.row_ptr(j);
        for (int i = 0; i < d; ++i) out.context[i] += out.a[j] * row[i];
    }
    return out;
}

inline AttentionOutput input_attention(const Mat& C_x, const ModelParams& p) {
    return attend(C_x, p.rx, p.Qx);
}

inline AttentionOutput hidden_attention(const Mat& C_h, const ModelParams& p) {
    return attend(C_h, p.rh, p.Qh);
}

// h_o = tanh(E h + F h_c)
inline Vec overall_interest(const Vec& h, const Vec& h_c, const Mat& E, const Mat& F) {
    Vec pre = matvec(E, h);
    axpy(1.0, matvec(F, h_c), pre);
    return tanh_vec(pre);
}

// ---------------------------------------------------------------------------
// sequence forward pass
// ---------------------------------------------------------------------------

// Every intermediate of one time step, retained for BPTT.
struct StepTrace {
    int item = -1;   // input item index at this step
    Vec x;           // its embedding row
    Mat cx;          // input context, window_x rows
    Vec ex, ax;      // input attention scores and weights
    Vec xc;          // contextual input
    Vec z, r, h_tilde, h;
    Mat ch;          // hidden context, window_h rows
    Vec eh, ah;      // hidden attention scores and weights
    Vec hc;          // contextual hidden state
    Vec ho;          // overall interest
};

// Runs the full per-step pipeline (Eq. 2 -> Eq. 3 -> Eq. 4 -> Eq. 5) over an
// item sequence. h^0 is the zero vector; only h^t feeds the recurrence, h_o^t
// never re-enters it.
inline std::vector<StepTrace> forward_sequence(const std::vector<int>& items, const ModelParams& p,
                                               const HyperParams& hp) {
    hp.validate();
    if (items.empty()) throw std::invalid_argument("forward_sequence: empty sequence");
    for (size_t t = 0; t < items.size(); ++t)
        if (items[t] < 0 || items[t] >= p.n_items())
            throw std::out_of_range("forward_sequence: item index " + std::to_string(items[t]) +
                                    " out of range at position " + std::to_string(t));

    std::vector<StepTrace> traces;
    traces.reserve(items.size());
    ContextBuffer buf_x(hp.window_x, hp.dim);
    ContextBuffer buf_h(hp.window_h, hp.dim);
    Vec h = zeros(hp.dim);

    for (size_t t = 0; t < items.size(); ++t) {
        StepTrace tr;
        tr.item = items[t];
        tr.x = p.X.row(tr.item);

        buf_x.push(tr.x);
        tr.cx = buf_x.snapshot();
        AttentionOutput att_x = input_attention(tr.cx, p);
        tr.ex = att_x.e;
        tr.ax = att_x.a;
        tr.xc = att_x.context;

        CellOutput cell = hca_cell(tr.x, tr.xc, h, p);
        tr.z = cell.z;
        tr.r = cell.r;
        tr.h_tilde = cell.h_tilde;
        tr.h = cell.h;
        h = cell.h;

        buf_h.push(h);
        tr.ch = buf_h.snapshot();
        AttentionOutput att_h = hidden_attention(tr.ch, p);
        tr.eh = att_h.e;
        tr.ah = att_h.a;
        tr.hc = att_h.context;

        tr.ho = overall_interest(tr.h, tr.hc, p.E, p.F);
        traces.push_back(std::move(tr));
    }
    return traces;
}

// Test-time recomputation of the final overall interest h_o^n: input-level
// modeling is replayed at every step, the hidden-level modeling only at the
// last one. Bit-equal to the last StepTrace.ho of forward_sequence.
inline Vec final_interest(const std::vector<int>& items, const ModelParams& p, const HyperParams& hp) {
    hp.validate();
    if (items.empty()) throw std::invalid_argument("final_interest: empty training prefix");
    ContextBuffer buf_x(hp.window_x, hp.dim);
    ContextBuffer buf_h(hp.window_h, hp.dim);
    Vec h = zeros(hp.dim);
    for (size_t t = 0; t < items.size(); ++t) {
        const int item = items[t];
        if (item < 0 || item >= p.n_items())
            throw std::out_of_range("final_interest: item index out of range at position " + std::to_string(t));
        const Vec x = p.X.row(item);
        buf_x.push(x);
        AttentionOutput att_x = input_attention(buf_x.snapshot(), p);
        h = hca_cell(x, att_x.context, h, p).h;
        buf_h.push(h);
    }
    AttentionOutput att_h = hidden_attention(buf_h.snapshot(), p);
    return overall_interest(h, att_h.context, p.E, p.F);
}

// Final hidden state h^n, the plain-GRU baseline's sequence representation.
inline Vec final_hidden(const std::vector<int>& items, const ModelParams& p, const HyperParams& hp) {
    hp.validate();
    if (items.empty()) throw std::invalid_argument("final_hidden: empty training prefix");
    ContextBuffer buf_x(hp.window_x, hp.dim);
    Vec h = zeros(hp.dim);
    for (size_t t = 0; t < items.size(); ++t) {
        const int item = items[t];
        if (item < 0 || item >= p.n_items())
            throw std::out_of_range("final_hidden: item index out of range at position " + std::to_string(t));
        const Vec x = p.X.row(item);
        buf_x.push(x);
        AttentionOutput att_x = input_attention(buf_x.snapshot(), p);
        h = hca_cell(x, att_x.context, h, p).h;
    }
    return h;
}

// Scoring vector for a trained user prefix: h_o^n for the full model, h^n for
// the plain-GRU baseline.
inline Vec user_representation(const std::vector<int>& items, const ModelParams& p, const HyperParams& hp,
                               ModelKind kind) {
    return kind == ModelKind::hca ? final_interest(items, p, hp) : final_hidden(items, p, hp);
}

}  // namespace hcaseq
