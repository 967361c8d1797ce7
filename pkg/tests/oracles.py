"""Independent straight-line transcriptions used as test oracles.

Everything here works on Python floats with explicit loops so it shares no
code path with the vectorised package implementation.
"""

import math


def mv(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def add(*vs):
    return [sum(vals) for vals in zip(*vs)]


def mul(a, b):
    return [p * q for p, q in zip(a, b)]


def sig(v):
    return [1.0 / (1.0 + math.exp(-z)) for z in v]


def th(v):
    return [math.tanh(z) for z in v]


def L(a):
    return [list(map(float, row)) for row in a] if hasattr(a[0], "__len__") else [float(z) for z in a]


def rnn(P, x, h):
    return th(add(mv(P["W_xh"], x), mv(P["W_hh"], h), P["b_h"]))


def lstm(P, x, h, c):
    gate = lambda g: add(mv(P[f"W_x{g}"], x), mv(P[f"W_h{g}"], h), P[f"b_{g}"])
    i, f, o = sig(gate("i")), sig(gate("f")), sig(gate("o"))
    cand = th(gate("c"))
    c_new = add(mul(f, c), mul(i, cand))
    return mul(o, th(c_new)), c_new


def gru(P, x, h):
    r = sig(add(mv(P["W_xr"], x), mv(P["W_hr"], h), P["b_r"]))
    u = sig(add(mv(P["W_xu"], x), mv(P["W_hu"], h), P["b_u"]))
    cand = th(add(mv(P["W_xh"], x), mv(P["W_hh"], mul(r, h)), P["b_h"]))
    return [ui * ci + (1.0 - ui) * hi for ui, ci, hi in zip(u, cand, h)]


def remainder(P, x):
    return th(add(mv(P["r.W_xh"], x), P["r.b_h"]))


def sub(P, prefix):
    return {k[len(prefix):]: v for k, v in P.items() if k.startswith(prefix)}


def cru(P, xs, xt, hs, ht, lam):
    """Seasonal and trend updates of the CRU, written out term by term."""
    S, T = sub(P, "s."), sub(P, "t.")
    a_s = sig(add(mv(S["W_xa"], xs), mv(S["W_ha"], hs), S["b_a"]))
    a_t = sig(add(mv(T["W_xa"], xt), mv(T["W_ha"], ht), T["b_a"]))
    c_s = sig(add(mv(S["W_xc"], xs), mv(S["W_hc"], ht), S["b_c"]))
    c_t = sig(add(mv(T["W_xc"], xt), mv(T["W_hc"], hs), T["b_c"]))
    first_s = th(add(mv(S["W_x1"], xs), mv(S["W_h1"], mul(a_s, hs)), S["b_1"]))
    second_s = th(add(mv(S["W_x2"], xs), mv(S["W_h2"], mul(c_s, ht)), S["b_2"]))
    first_t = th(add(mv(T["W_x1"], xt), mv(T["W_h1"], mul(a_t, ht)), T["b_1"]))
    second_t = th(add(mv(T["W_x2"], xt), mv(T["W_h2"], mul(c_t, hs)), T["b_2"]))
    hs_new = [lam * p + (1.0 - lam) * q for p, q in zip(first_s, second_s)]
    ht_new = [lam * p + (1.0 - lam) * q for p, q in zip(first_t, second_t)]
    return hs_new, ht_new


def step(kind, P, x, s, lam=0.5):
    """Oracle step. ``x`` is a list, or (xs, xt, xr) for decomposed kinds."""
    P = {k: L(v.tolist()) for k, v in P.items()}
    s = {k: [float(z) for z in v] for k, v in s.items()}
    if kind == "RNN":
        return {"h": rnn(P, x, s["h"])}
    if kind == "LSTM":
        h, c = lstm(P, x, s["h"], s["c"])
        return {"h": h, "c": c}
    if kind == "GRU":
        return {"h": gru(P, x, s["h"])}
    xs, xt, xr = x
    out = {"h_r": remainder(P, xr)}
    if kind == "RNN_STLC":
        out["h_s"] = rnn(sub(P, "s."), xs, s["h_s"])
        out["h_t"] = rnn(sub(P, "t."), xt, s["h_t"])
    elif kind == "LSTM_STLC":
        out["h_s"], out["c_s"] = lstm(sub(P, "s."), xs, s["h_s"], s["c_s"])
        out["h_t"], out["c_t"] = lstm(sub(P, "t."), xt, s["h_t"], s["c_t"])
    elif kind == "GRU_STLC":
        out["h_s"] = gru(sub(P, "s."), xs, s["h_s"])
        out["h_t"] = gru(sub(P, "t."), xt, s["h_t"])
    elif kind == "CRU":
        out["h_s"], out["h_t"] = cru(P, xs, xt, s["h_s"], s["h_t"], lam)
    return out


def readout(kind, P, s):
    P = {k: L(v.tolist()) for k, v in P.items()}
    s = {k: [float(z) for z in v] for k, v in s.items()}
    if kind in ("RNN", "LSTM", "GRU"):
        return add(mv(P["W_hy"], s["h"]), P["b_y"])
    return add(mv(P["W_hsy"], s["h_s"]), mv(P["W_hty"], s["h_t"]),
               mv(P["W_hry"], s["h_r"]), P["b_y"])


def wls_loess(x, y, span, degree, weights=None):
    """Per-point brute force: pick neighbours by sorting, solve normal equations."""
    n = len(x)
    weights = weights if weights is not None else [1.0] * n
    out = []
    for x0 in x:
        order = sorted(range(n), key=lambda j: (abs(x[j] - x0), j))[:span]
        radius = max(abs(x[j] - x0) for j in order)
        w = {}
        for j in order:
            u = abs(x[j] - x0) / radius
            w[j] = ((1 - u**3) ** 3 if u < 1 else 0.0) * weights[j]
        sw = sum(w.values())
        if sw == 0:
            out.append(sum(y[j] for j in order) / len(order))
            continue
        if degree == 0:
            out.append(sum(w[j] * y[j] for j in order) / sw)
            continue
        # 2x2 normal equations for intercept and slope about x0
        s1 = sum(w[j] * (x[j] - x0) for j in order)
        s2 = sum(w[j] * (x[j] - x0) ** 2 for j in order)
        t0 = sum(w[j] * y[j] for j in order)
        t1 = sum(w[j] * (x[j] - x0) * y[j] for j in order)
        det = sw * s2 - s1 * s1
        positive = {x[j] for j in order if w[j] > 0}
        if len(positive) < 2:
            out.append(t0 / sw)
        else:
            out.append((t0 * s2 - s1 * t1) / det)
    return out
