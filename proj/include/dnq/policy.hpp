// Bidirectional gated recurrent sequence policy. Each step sees a projected
// layer embedding; the forward cell additionally sees the previous step's
// action as a one-hot, so the categorical at step t conditions on b_{1:t-1}
// while the backward cell runs over embeddings only and stays causally
// legal. A linear head over both hidden states yields 7 action logits
// (bit-widths 2..8). Backprop through time is hand-written; gradients are
// accumulated into a parameter-shaped mirror struct.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "dnq/common.hpp"

namespace dnq::ctrl {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 8;
inline constexpr size_t kNumActions = 7;  // bits 2..8
inline constexpr size_t kEmbedDim = 7;

inline int action_to_bits(size_t a) { return kMinBits + static_cast<int>(a); }
inline size_t bits_to_action(int b) {
    require(b >= kMinBits && b <= kMaxBits, "bits outside action space");
    return static_cast<size_t>(b - kMinBits);
}

struct GruCell {
    size_t in = 0, hidden = 0;
    std::vector<double> Wz, Wr, Wh;  // hidden x in
    std::vector<double> Uz, Ur, Uh;  // hidden x hidden
    std::vector<double> bz, br, bh;  // hidden
};

struct PolicyModel {
    size_t proj = 8, hidden = 32;
    std::vector<double> Wproj;  // proj x kEmbedDim
    GruCell fwd;                // input: proj + one-hot previous action
    GruCell bwd;                // input: proj
    std::vector<double> Whead;  // kNumActions x 2*hidden
    std::vector<double> bhead;  // kNumActions
};

namespace detail {

inline void matvec(const std::vector<double>& W, size_t rows, size_t cols,
                   const std::vector<double>& x, std::vector<double>& y, bool accumulate) {
    for (size_t i = 0; i < rows; ++i) {
        double s = accumulate ? y[i] : 0.0;
        const double* row = W.data() + i * cols;
        for (size_t j = 0; j < cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
}

// y += W^T x  (x has `rows` entries, y has `cols`)
inline void matvec_t(const std::vector<double>& W, size_t rows, size_t cols,
                     const std::vector<double>& x, std::vector<double>& y) {
    for (size_t i = 0; i < rows; ++i) {
        const double* row = W.data() + i * cols;
        for (size_t j = 0; j < cols; ++j) y[j] += row[j] * x[i];
    }
}

// W += a (outer) b
inline void outer_acc(std::vector<double>& W, const std::vector<double>& a,
                      const std::vector<double>& b) {
    for (size_t i = 0; i < a.size(); ++i) {
        double* row = W.data() + i * b.size();
        for (size_t j = 0; j < b.size(); ++j) row[j] += a[i] * b[j];
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void init_matrix(std::vector<double>& W, size_t rows, size_t cols, Rng& rng) {
    W.resize(rows * cols);
    double limit = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : W) v = rng.uniform(-limit, limit);
}

inline void init_cell(GruCell& c, size_t in, size_t hidden, Rng& rng) {
    c.in = in;
    c.hidden = hidden;
    init_matrix(c.Wz, hidden, in, rng);
    init_matrix(c.Wr, hidden, in, rng);
    init_matrix(c.Wh, hidden, in, rng);
    init_matrix(c.Uz, hidden, hidden, rng);
    init_matrix(c.Ur, hidden, hidden, rng);
    init_matrix(c.Uh, hidden, hidden, rng);
    c.bz.assign(hidden, 0.0);
    c.br.assign(hidden, 0.0);
    c.bh.assign(hidden, 0.0);
}

struct CellStep {
    std::vector<double> x, h_prev, z, r, hh, h;
};

inline CellStep cell_forward(const GruCell& c, std::vector<double> x, std::vector<double> h_prev) {
    CellStep s;
    s.z.assign(c.hidden, 0.0);
    s.r.assign(c.hidden, 0.0);
    s.hh.assign(c.hidden, 0.0);
    matvec(c.Wz, c.hidden, c.in, x, s.z, false);
    matvec(c.Uz, c.hidden, c.hidden, h_prev, s.z, true);
    matvec(c.Wr, c.hidden, c.in, x, s.r, false);
    matvec(c.Ur, c.hidden, c.hidden, h_prev, s.r, true);
    for (size_t i = 0; i < c.hidden; ++i) {
        s.z[i] = sigmoid(s.z[i] + c.bz[i]);
        s.r[i] = sigmoid(s.r[i] + c.br[i]);
    }
    std::vector<double> gated(c.hidden);
    for (size_t i = 0; i < c.hidden; ++i) gated[i] = s.r[i] * h_prev[i];
    matvec(c.Wh, c.hidden, c.in, x, s.hh, false);
    matvec(c.Uh, c.hidden, c.hidden, gated, s.hh, true);
    s.h.resize(c.hidden);
    for (size_t i = 0; i < c.hidden; ++i) {
        s.hh[i] = std::tanh(s.hh[i] + c.bh[i]);
        s.h[i] = (1.0 - s.z[i]) * h_prev[i] + s.z[i] * s.hh[i];
    }
    s.x = std::move(x);
    s.h_prev = std::move(h_prev);
    return s;
}

// Given dL/dh for this step, accumulates parameter gradients into `g` and
// returns via out-params the gradients w.r.t. the step input and previous
// hidden state.
inline void cell_backward(const GruCell& c, GruCell& g, const CellStep& s,
                          const std::vector<double>& dh, std::vector<double>& dx,
                          std::vector<double>& dh_prev) {
    size_t H = c.hidden;
    std::vector<double> dz_pre(H), dr_pre(H), dhh_pre(H), ds(H, 0.0);
    dh_prev.assign(H, 0.0);
    dx.assign(c.in, 0.0);

    for (size_t i = 0; i < H; ++i) {
        double dz = dh[i] * (s.hh[i] - s.h_prev[i]);
        double dhh = dh[i] * s.z[i];
        dh_prev[i] = dh[i] * (1.0 - s.z[i]);
        dz_pre[i] = dz * s.z[i] * (1.0 - s.z[i]);
        dhh_pre[i] = dhh * (1.0 - s.hh[i] * s.hh[i]);
    }
    std::vector<double> gated(H);
    for (size_t i = 0; i < H; ++i) gated[i] = s.r[i] * s.h_prev[i];
    outer_acc(g.Wh, dhh_pre, s.x);
    outer_acc(g.Uh, dhh_pre, gated);
    matvec_t(c.Uh, H, H, dhh_pre, ds);
    for (size_t i = 0; i < H; ++i) {
        double dr = ds[i] * s.h_prev[i];
        dh_prev[i] += ds[i] * s.r[i];
        dr_pre[i] = dr * s.r[i] * (1.0 - s.r[i]);
        g.bh[i] += dhh_pre[i];
        g.bz[i] += dz_pre[i];
        g.br[i] += dr_pre[i];
    }
    outer_acc(g.Wz, dz_pre, s.x);
    outer_acc(g.Uz, dz_pre, s.h_prev);
    outer_acc(g.Wr, dr_pre, s.x);
    outer_acc(g.Ur, dr_pre, s.h_prev);
    matvec_t(c.Uz, H, H, dz_pre, dh_prev);
    matvec_t(c.Ur, H, H, dr_pre, dh_prev);
    matvec_t(c.Wz, H, c.in, dz_pre, dx);
    matvec_t(c.Wr, H, c.in, dr_pre, dx);
    matvec_t(c.Wh, H, c.in, dhh_pre, dx);
}

}  // namespace detail

inline PolicyModel make_policy(size_t proj, size_t hidden, uint64_t seed) {
    require(proj >= 1 && hidden >= 1, "make_policy: sizes must be positive");
    PolicyModel p;
    p.proj = proj;
    p.hidden = hidden;
    Rng rng(seed);
    detail::init_matrix(p.Wproj, proj, kEmbedDim, rng);
    detail::init_cell(p.fwd, proj + kNumActions, hidden, rng);
    detail::init_cell(p.bwd, proj, hidden, rng);
    detail::init_matrix(p.Whead, kNumActions, 2 * hidden, rng);
    p.bhead.assign(kNumActions, 0.0);
    return p;
}

inline PolicyModel make_policy_grad(const PolicyModel& like) {
    PolicyModel g = like;
    auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    zero(g.Wproj);
    for (GruCell* c : {&g.fwd, &g.bwd}) {
        zero(c->Wz), zero(c->Wr), zero(c->Wh);
        zero(c->Uz), zero(c->Ur), zero(c->Uh);
        zero(c->bz), zero(c->br), zero(c->bh);
    }
    zero(g.Whead);
    zero(g.bhead);
    return g;
}

// Every parameter coordinate in one stable order; works on models and on
// gradient mirrors alike.
inline std::vector<double*> param_refs(PolicyModel& p) {
    std::vector<double*> refs;
    auto add = [&](std::vector<double>& v) {
        for (double& x : v) refs.push_back(&x);
    };
    add(p.Wproj);
    for (GruCell* c : {&p.fwd, &p.bwd}) {
        add(c->Wz), add(c->Wr), add(c->Wh);
        add(c->Uz), add(c->Ur), add(c->Uh);
        add(c->bz), add(c->br), add(c->bh);
    }
    add(p.Whead);
    add(p.bhead);
    return refs;
}

struct PolicyTrace {
    std::vector<int> actions;                 // one per step, in [0, kNumActions)
    std::vector<double> logp;                 // log probability of the chosen action
    std::vector<std::vector<double>> probs;   // per-step categorical
    std::vector<detail::CellStep> fwd_steps;  // time order
    std::vector<detail::CellStep> bwd_steps;  // indexed by time, computed in reverse
};

// Runs the policy over the embedding sequence. Steps covered by `forced`
// take that action (teacher forcing, or a fixed prefix for rollouts); any
// remaining steps are sampled with `rng`.
inline PolicyTrace policy_forward(const PolicyModel& p,
                                  const std::vector<std::vector<double>>& embeddings,
                                  const std::vector<int>* forced = nullptr, Rng* rng = nullptr) {
    size_t L = embeddings.size();
    require(L > 0, "policy_forward: empty sequence");
    size_t nforced = forced ? std::min(forced->size(), L) : 0;
    require(nforced == L || rng, "policy_forward: need forced actions or an rng");

    std::vector<std::vector<double>> proj(L);
    for (size_t t = 0; t < L; ++t) {
        require(embeddings[t].size() == kEmbedDim, "policy_forward: bad embedding size");
        proj[t].assign(p.proj, 0.0);
        detail::matvec(p.Wproj, p.proj, kEmbedDim, embeddings[t], proj[t], false);
    }

    PolicyTrace tr;
    tr.bwd_steps.resize(L);
    std::vector<double> h(p.hidden, 0.0);
    for (size_t t = L; t-- > 0;) {
        tr.bwd_steps[t] = detail::cell_forward(p.bwd, proj[t], h);
        h = tr.bwd_steps[t].h;
    }

    h.assign(p.hidden, 0.0);
    for (size_t t = 0; t < L; ++t) {
        std::vector<double> x(p.proj + kNumActions, 0.0);
        std::copy(proj[t].begin(), proj[t].end(), x.begin());
        if (t > 0) x[p.proj + static_cast<size_t>(tr.actions[t - 1])] = 1.0;
        tr.fwd_steps.push_back(detail::cell_forward(p.fwd, std::move(x), h));
        h = tr.fwd_steps[t].h;

        std::vector<double> both(2 * p.hidden);
        std::copy(h.begin(), h.end(), both.begin());
        std::copy(tr.bwd_steps[t].h.begin(), tr.bwd_steps[t].h.end(), both.begin() + p.hidden);
        std::vector<double> logits(kNumActions, 0.0);
        detail::matvec(p.Whead, kNumActions, 2 * p.hidden, both, logits, false);
        for (size_t a = 0; a < kNumActions; ++a) logits[a] += p.bhead[a];

        double mx = *std::max_element(logits.begin(), logits.end());
        std::vector<double> prob(kNumActions);
        double sum = 0.0;
        for (size_t a = 0; a < kNumActions; ++a) sum += prob[a] = std::exp(logits[a] - mx);
        for (double& v : prob) v /= sum;

        int act;
        if (t < nforced) {
            act = (*forced)[t];
            require(act >= 0 && act < static_cast<int>(kNumActions),
                    "policy_forward: forced action out of range");
        } else {
            double u = rng->uniform();
            double cum = 0.0;
            act = static_cast<int>(kNumActions) - 1;
            for (size_t a = 0; a < kNumActions; ++a) {
                cum += prob[a];
                if (u < cum) {
                    act = static_cast<int>(a);
                    break;
                }
            }
        }
        tr.actions.push_back(act);
        tr.logp.push_back(std::log(prob[static_cast<size_t>(act)]));
        tr.probs.push_back(std::move(prob));
    }
    return tr;
}

// Accumulates the gradient of S = sum_t coeff[t] * log P(action_t | ...) into
// `grad` (same shape as the policy). Ascent direction: add lr * grad.
inline void policy_backward(const PolicyModel& p,
                            const std::vector<std::vector<double>>& embeddings,
                            const PolicyTrace& tr, const std::vector<double>& coeff,
                            PolicyModel& grad) {
    size_t L = embeddings.size();
    require(tr.actions.size() == L && coeff.size() == L, "policy_backward: length mismatch");
    size_t H = p.hidden;

    std::vector<std::vector<double>> dhf(L, std::vector<double>(H, 0.0));
    std::vector<std::vector<double>> dhb(L, std::vector<double>(H, 0.0));
    for (size_t t = 0; t < L; ++t) {
        std::vector<double> dlogits(kNumActions);
        for (size_t a = 0; a < kNumActions; ++a) {
            double onehot = (static_cast<int>(a) == tr.actions[t]) ? 1.0 : 0.0;
            dlogits[a] = coeff[t] * (onehot - tr.probs[t][a]);
        }
        std::vector<double> both(2 * H);
        std::copy(tr.fwd_steps[t].h.begin(), tr.fwd_steps[t].h.end(), both.begin());
        std::copy(tr.bwd_steps[t].h.begin(), tr.bwd_steps[t].h.end(), both.begin() + H);
        detail::outer_acc(grad.Whead, dlogits, both);
        for (size_t a = 0; a < kNumActions; ++a) grad.bhead[a] += dlogits[a];
        std::vector<double> dboth(2 * H, 0.0);
        detail::matvec_t(p.Whead, kNumActions, 2 * H, dlogits, dboth);
        for (size_t i = 0; i < H; ++i) {
            dhf[t][i] += dboth[i];
            dhb[t][i] += dboth[H + i];
        }
    }

    std::vector<std::vector<double>> dproj(L, std::vector<double>(p.proj, 0.0));
    std::vector<double> carry(H, 0.0), dx, dh_prev;
    for (size_t t = L; t-- > 0;) {  // forward cell unrolls 0..L-1
        std::vector<double> dh = dhf[t];
        for (size_t i = 0; i < H; ++i) dh[i] += carry[i];
        detail::cell_backward(p.fwd, grad.fwd, tr.fwd_steps[t], dh, dx, dh_prev);
        carry = dh_prev;
        for (size_t i = 0; i < p.proj; ++i) dproj[t][i] += dx[i];
        // gradient into the one-hot action feed has no parameter path
    }
    carry.assign(H, 0.0);
    for (size_t t = 0; t < L; ++t) {  // backward cell unrolls L-1..0
        std::vector<double> dh = dhb[t];
        for (size_t i = 0; i < H; ++i) dh[i] += carry[i];
        detail::cell_backward(p.bwd, grad.bwd, tr.bwd_steps[t], dh, dx, dh_prev);
        carry = dh_prev;
        for (size_t i = 0; i < p.proj; ++i) dproj[t][i] += dx[i];
    }
    for (size_t t = 0; t < L; ++t) detail::outer_acc(grad.Wproj, dproj[t], embeddings[t]);
}

inline void axpy_params(PolicyModel& p, const PolicyModel& g, double a) {
    auto pr = param_refs(p);
    auto gr = param_refs(const_cast<PolicyModel&>(g));
    require(pr.size() == gr.size(), "axpy_params: shape mismatch");
    for (size_t i = 0; i < pr.size(); ++i) *pr[i] += a * *gr[i];
}

}  // namespace dnq::ctrl
