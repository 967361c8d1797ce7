"""Recurrent cells: baselines, STL-cell variants and the CRU.

Every cell kind is a set of named parameter tensors plus a step function
``(params, x, state) -> state`` and a linear readout. STL-cell kinds take a
:class:`DecomposedInput` and keep one hidden state per component; the
remainder state is feed-forward and never reads its previous value.

Arrays may carry a leading batch axis: inputs are ``(..., m)`` and states
``(..., H)``. Weight matrices are stored ``(out, in)``.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from cru.linalg import ShapeError, sigmoid


class CellKind(str, enum.Enum):
    RNN = "RNN"
    LSTM = "LSTM"
    GRU = "GRU"
    RNN_STLC = "RNN_STLC"
    LSTM_STLC = "LSTM_STLC"
    GRU_STLC = "GRU_STLC"
    CRU = "CRU"

    @property
    def decomposed(self) -> bool:
        return self not in (CellKind.RNN, CellKind.LSTM, CellKind.GRU)

    @classmethod
    def parse(cls, name) -> "CellKind":
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown cell kind {name!r}") from None


# gate letters of each gated block
_GATES = {"RNN": "h", "LSTM": "ifoc", "GRU": "ruh", "CRU": "ac12"}
_STLC_BASE = {
    CellKind.RNN_STLC: "RNN",
    CellKind.LSTM_STLC: "LSTM",
    CellKind.GRU_STLC: "GRU",
    CellKind.CRU: "CRU",
}


def _block(prefix, gates, m, H):
    out = []
    for g in gates:
        out += [
            (f"{prefix}W_x{g}", (H, m)),
            (f"{prefix}W_h{g}", (H, H)),
            (f"{prefix}b_{g}", (H,)),
        ]
    return out


def param_layout(kind, m: int, H: int, o: int) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list for a cell kind; the checkpoint order."""
    kind = CellKind.parse(kind)
    if not kind.decomposed:
        return _block("", _GATES[kind.value], m, H) + [("W_hy", (o, H)), ("b_y", (o,))]
    gates = _GATES[_STLC_BASE[kind]]
    return (
        _block("s.", gates, m, H)
        + _block("t.", gates, m, H)
        + [("r.W_xh", (H, m)), ("r.b_h", (H,))]
        + [("W_hsy", (o, H)), ("W_hty", (o, H)), ("W_hry", (o, H)), ("b_y", (o,))]
    )


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b_")


@dataclass
class CellParams:
    kind: CellKind
    input_dim: int
    hidden_dim: int
    output_dim: int
    weights: dict = field(default_factory=dict)
    biases: dict = field(default_factory=dict)
    lam: float = 0.5

    def __post_init__(self):
        self.kind = CellKind.parse(self.kind)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        for name, shape in self.layout():
            table = self.biases if _is_bias(name) else self.weights
            if name not in table:
                raise ShapeError(f"{self.kind.value} parameters lack {name!r}")
            arr = np.asarray(table[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            table[name] = arr
        known = {name for name, _ in self.layout()}
        extra = (set(self.weights) | set(self.biases)) - known
        if extra:
            raise ShapeError(f"unexpected parameters for {self.kind.value}: {sorted(extra)}")

    def layout(self):
        return param_layout(self.kind, self.input_dim, self.hidden_dim, self.output_dim)

    def tensors(self) -> dict:
        """All learnable tensors in canonical order."""
        return {
            name: (self.biases if _is_bias(name) else self.weights)[name]
            for name, _ in self.layout()
        }

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def with_tensors(self, tensors: dict) -> "CellParams":
        return CellParams.from_tensors(
            self.kind, self.input_dim, self.hidden_dim, self.output_dim, tensors, self.lam
        )

    def with_flat(self, flat) -> "CellParams":
        flat = np.asarray(flat, dtype=np.float64)
        out, pos = {}, 0
        for name, shape in self.layout():
            size = int(np.prod(shape))
            out[name] = flat[pos : pos + size].reshape(shape).copy()
            pos += size
        if pos != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, expected {pos}")
        return self.with_tensors(out)

    @classmethod
    def zeros(cls, kind, m, H, o, lam=0.5) -> "CellParams":
        tensors = {name: np.zeros(shape) for name, shape in param_layout(kind, m, H, o)}
        return cls.from_tensors(kind, m, H, o, tensors, lam)

    @classmethod
    def from_tensors(cls, kind, m, H, o, tensors: dict, lam=0.5) -> "CellParams":
        weights = {k: v for k, v in tensors.items() if not _is_bias(k)}
        biases = {k: v for k, v in tensors.items() if _is_bias(k)}
        return cls(kind, m, H, o, weights, biases, lam)


@dataclass(frozen=True)
class DecomposedInput:
    x_s: np.ndarray
    x_t: np.ndarray
    x_r: np.ndarray

    def raw(self) -> np.ndarray:
        return self.x_s + self.x_t + self.x_r


def state_keys(kind) -> tuple[str, ...]:
    kind = CellKind.parse(kind)
    if kind is CellKind.LSTM:
        return ("h", "c")
    if not kind.decomposed:
        return ("h",)
    if kind is CellKind.LSTM_STLC:
        return ("h_s", "h_t", "h_r", "c_s", "c_t")
    return ("h_s", "h_t", "h_r")


def init_state(p: CellParams, batch: int | None = None) -> dict:
    shape = (p.hidden_dim,) if batch is None else (batch, p.hidden_dim)
    return {k: np.zeros(shape) for k in state_keys(p.kind)}


# ---------------------------------------------------------------- cores
# Each core returns the new state pieces and a cache for the backward pass.


def _view(tensors, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in tensors.items() if k.startswith(prefix)}


def _affine(P, g, x, h):
    return x @ P[f"W_x{g}"].T + h @ P[f"W_h{g}"].T + P[f"b_{g}"]


def rnn_core(P, x, h):
    h_new = np.tanh(_affine(P, "h", x, h))
    return h_new, (x, h, h_new)


def lstm_core(P, x, h, c):
    i = sigmoid(_affine(P, "i", x, h))
    f = sigmoid(_affine(P, "f", x, h))
    o = sigmoid(_affine(P, "o", x, h))
    g = np.tanh(_affine(P, "c", x, h))
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, o, g, tc)


def gru_core(P, x, h):
    r = sigmoid(_affine(P, "r", x, h))
    u = sigmoid(_affine(P, "u", x, h))
    rh = r * h
    cand = np.tanh(x @ P["W_xh"].T + rh @ P["W_hh"].T + P["b_h"])
    h_new = u * cand + (1.0 - u) * h
    return h_new, (x, h, r, u, rh, cand)


def remainder_core(P, x):
    h_new = np.tanh(x @ P["W_xh"].T + P["b_h"])
    return h_new, (x, h_new)


def cru_core(P, x, h_own, h_other, lam):
    """Half of a CRU update: the new state of one component.

    The autocorrelation gate couples the component input with its own
    previous state, the correlation gate with the other component's state.
    """
    a = sigmoid(_affine(P, "a", x, h_own))
    cg = sigmoid(_affine(P, "c", x, h_other))
    ah = a * h_own
    ch = cg * h_other
    auto = np.tanh(x @ P["W_x1"].T + ah @ P["W_h1"].T + P["b_1"])
    cross = np.tanh(x @ P["W_x2"].T + ch @ P["W_h2"].T + P["b_2"])
    h_new = lam * auto + (1.0 - lam) * cross
    return h_new, (x, h_own, h_other, a, cg, ah, ch, auto, cross)


# ---------------------------------------------------------------- steps


def _check(p: CellParams, x, s):
    arrays = (x.x_s, x.x_t, x.x_r) if isinstance(x, DecomposedInput) else (x,)
    if p.kind.decomposed != isinstance(x, DecomposedInput):
        need = "a DecomposedInput" if p.kind.decomposed else "a raw input vector"
        raise ShapeError(f"{p.kind.value} step needs {need}")
    for a in arrays:
        if np.shape(a)[-1:] != (p.input_dim,):
            raise ShapeError(f"input has shape {np.shape(a)}, expected (..., {p.input_dim})")
    for k in state_keys(p.kind):
        if k not in s:
            raise ShapeError(f"state lacks {k!r} for {p.kind.value}")
        if np.shape(s[k])[-1:] != (p.hidden_dim,):
            raise ShapeError(f"state {k} has shape {np.shape(s[k])}, expected (..., {p.hidden_dim})")


def step_with_cache(p: CellParams, x, s: dict):
    """Advance one timestep; returns ``(new_state, cache)``."""
    _check(p, x, s)
    T = p.tensors()
    kind = p.kind
    if kind is CellKind.RNN:
        h, cache = rnn_core(T, x, s["h"])
        return {"h": h}, cache
    if kind is CellKind.LSTM:
        h, c, cache = lstm_core(T, x, s["h"], s["c"])
        return {"h": h, "c": c}, cache
    if kind is CellKind.GRU:
        h, cache = gru_core(T, x, s["h"])
        return {"h": h}, cache

    Ps, Pt, Pr = _view(T, "s."), _view(T, "t."), _view(T, "r.")
    h_r, cache_r = remainder_core(Pr, x.x_r)
    if kind is CellKind.RNN_STLC:
        h_s, cs = rnn_core(Ps, x.x_s, s["h_s"])
        h_t, ct = rnn_core(Pt, x.x_t, s["h_t"])
        return {"h_s": h_s, "h_t": h_t, "h_r": h_r}, (cs, ct, cache_r)
    if kind is CellKind.LSTM_STLC:
        h_s, c_s, cs = lstm_core(Ps, x.x_s, s["h_s"], s["c_s"])
        h_t, c_t, ct = lstm_core(Pt, x.x_t, s["h_t"], s["c_t"])
        new = {"h_s": h_s, "h_t": h_t, "h_r": h_r, "c_s": c_s, "c_t": c_t}
        return new, (cs, ct, cache_r)
    if kind is CellKind.GRU_STLC:
        h_s, cs = gru_core(Ps, x.x_s, s["h_s"])
        h_t, ct = gru_core(Pt, x.x_t, s["h_t"])
        return {"h_s": h_s, "h_t": h_t, "h_r": h_r}, (cs, ct, cache_r)
    # CRU
    h_s, cs = cru_core(Ps, x.x_s, s["h_s"], s["h_t"], p.lam)
    h_t, ct = cru_core(Pt, x.x_t, s["h_t"], s["h_s"], p.lam)
    return {"h_s": h_s, "h_t": h_t, "h_r": h_r}, (cs, ct, cache_r)


def step(p: CellParams, x, s: dict) -> dict:
    return step_with_cache(p, x, s)[0]


def _kind_step(kind):
    def fn(p: CellParams, x, s: dict) -> dict:
        if p.kind is not kind:
            raise ValueError(f"{fn.__name__} called with {p.kind.value} parameters")
        return step(p, x, s)

    fn.__name__ = f"{kind.value.lower()}_step"
    return fn


rnn_step = _kind_step(CellKind.RNN)
lstm_step = _kind_step(CellKind.LSTM)
gru_step = _kind_step(CellKind.GRU)
rnn_stlc_step = _kind_step(CellKind.RNN_STLC)
lstm_stlc_step = _kind_step(CellKind.LSTM_STLC)
gru_stlc_step = _kind_step(CellKind.GRU_STLC)
cru_step = _kind_step(CellKind.CRU)


def readout(p: CellParams, s: dict) -> np.ndarray:
    """Identity-activated linear readout of the hidden state(s)."""
    T = p.tensors()
    if not p.kind.decomposed:
        return s["h"] @ T["W_hy"].T + T["b_y"]
    return (
        s["h_s"] @ T["W_hsy"].T
        + s["h_t"] @ T["W_hty"].T
        + s["h_r"] @ T["W_hry"].T
        + T["b_y"]
    )


# ---------------------------------------------------------------- sizes


def count_parameters(p: CellParams) -> int:
    """Number of learnable scalars. lambda is a fixed hyperparameter."""
    return int(sum(t.size for t in p.tensors().values()))


def closed_form_parameter_count(kind, m: int, H: int, o: int) -> int:
    """Parameter count from the per-kind algebraic formula."""
    kind = CellKind.parse(kind)
    unit = H * m + H * H + H  # one gate / candidate block
    gates = {"RNN": 1, "LSTM": 4, "GRU": 3, "CRU": 4}
    if not kind.decomposed:
        return gates[kind.value] * unit + o * H + o
    per_component = gates[_STLC_BASE[kind]] * unit
    return 2 * per_component + (H * m + H) + 3 * o * H + o


def stld_parameter_count(base, m: int, H: int, o: int) -> int:
    """Three independent baseline networks, one per STL component."""
    base = CellKind.parse(base)
    if base.decomposed:
        raise ValueError("STLD is built from a baseline kind (RNN, LSTM or GRU)")
    return 3 * closed_form_parameter_count(base, m, H, o)
