"""Sequence forward pass, BPTT gradients, optimisers and the training loop."""

import logging
from dataclasses import dataclass, field

import numpy as np

from cru import cells
from cru.cells import CellKind, CellParams, DecomposedInput, param_layout
from cru.linalg import ShapeError

log = logging.getLogger(__name__)

# order of the component axis in Sample.decomposed
COMPONENTS = ("seasonal", "trend", "remainder")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class Sample:
    """One lookback window and its target, or a stack of them.

    ``inputs`` is ``(L, m)`` (or ``(N, L, m)``), ``target`` is ``(o,)`` (or
    ``(N, o)``) and ``decomposed`` is ``(L, 3, m)`` (or ``(N, L, 3, m)``)
    with the component axis ordered seasonal, trend, remainder.
    """

    inputs: np.ndarray
    target: np.ndarray
    decomposed: np.ndarray | None = None

    @property
    def batched(self) -> bool:
        return np.ndim(self.inputs) == 3

    def __len__(self):
        return np.shape(self.inputs)[0] if self.batched else 1

    def as_batch(self) -> "Sample":
        if self.batched:
            return self
        dec = None if self.decomposed is None else self.decomposed[None]
        return Sample(self.inputs[None], np.atleast_1d(self.target)[None], dec)

    def subset(self, idx) -> "Sample":
        b = self.as_batch()
        dec = None if b.decomposed is None else b.decomposed[idx]
        return Sample(b.inputs[idx], b.target[idx], dec)


def stack_samples(samples) -> Sample:
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to stack")
    dec = None
    if samples[0].decomposed is not None:
        dec = np.stack([s.decomposed for s in samples])
    return Sample(
        np.stack([s.inputs for s in samples]),
        np.stack([np.atleast_1d(s.target) for s in samples]),
        dec,
    )


@dataclass
class Tape:
    kind: CellKind
    fingerprint: int
    batched: bool
    states: list
    caches: list
    prediction: np.ndarray
    initial_state_grad: dict | None = None
    carried_grads: list = field(default_factory=list)


def _fingerprint(p: CellParams, sample: Sample) -> int:
    return hash((p.kind, p.flat().tobytes(), np.asarray(sample.inputs).tobytes()))


def _step_input(p: CellParams, sample: Sample, t: int):
    if p.kind.decomposed:
        d = sample.decomposed[:, t]
        return DecomposedInput(d[:, 0], d[:, 1], d[:, 2])
    return sample.inputs[:, t]


def _validate_sample(p: CellParams, sample: Sample):
    b = sample.as_batch()
    if b.inputs.shape[-1] != p.input_dim:
        raise ShapeError(f"inputs have {b.inputs.shape[-1]} channels, cell expects {p.input_dim}")
    if b.target.shape[-1] != p.output_dim:
        raise ShapeError(f"target has {b.target.shape[-1]} entries, readout yields {p.output_dim}")
    if p.kind.decomposed:
        if b.decomposed is None:
            raise ShapeError(f"{p.kind.value} needs decomposed inputs")
        if b.decomposed.shape != b.inputs.shape[:2] + (3, p.input_dim):
            raise ShapeError(f"decomposed inputs have shape {b.decomposed.shape}")
    return b


def forward_sequence(p: CellParams, sample: Sample, state0: dict | None = None):
    """Run the cell over the lookback window; returns ``(prediction, tape)``."""
    b = _validate_sample(p, sample)
    n, L = b.inputs.shape[:2]
    s = cells.init_state(p, n) if state0 is None else {
        k: np.broadcast_to(np.asarray(v, dtype=np.float64), (n, p.hidden_dim)).copy()
        for k, v in state0.items()
    }
    states, caches = [s], []
    for t in range(L):
        s, cache = cells.step_with_cache(p, _step_input(p, b, t), s)
        states.append(s)
        caches.append(cache)
    pred = cells.readout(p, s)
    tape = Tape(p.kind, _fingerprint(p, sample), sample.batched, states, caches, pred)
    return (pred if sample.batched else pred[0]), tape


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow surfaces as inf and is reported by the caller
        return float(np.mean((pred - target) ** 2))


# ---------------------------------------------------------------- backward


def _acc(G, g, dz, x, h):
    G[f"W_x{g}"] += dz.T @ x
    G[f"W_h{g}"] += dz.T @ h
    G[f"b_{g}"] += dz.sum(axis=0)


def _rnn_back(P, G, cache, dh):
    x, h, h_new = cache
    dz = dh * (1.0 - h_new**2)
    _acc(G, "h", dz, x, h)
    return dz @ P["W_hh"]


def _lstm_back(P, G, cache, dh, dc):
    x, h, c, i, f, o, g, tc = cache
    dct = dc + dh * o * (1.0 - tc**2)
    dzs = {
        "i": dct * g * i * (1.0 - i),
        "f": dct * c * f * (1.0 - f),
        "o": dh * tc * o * (1.0 - o),
        "c": dct * i * (1.0 - g**2),
    }
    dh_prev = np.zeros_like(h)
    for gate, dz in dzs.items():
        _acc(G, gate, dz, x, h)
        dh_prev += dz @ P[f"W_h{gate}"]
    return dh_prev, dct * f


def _gru_back(P, G, cache, dh):
    x, h, r, u, rh, cand = cache
    dz_h = dh * u * (1.0 - cand**2)
    dz_u = dh * (cand - h) * u * (1.0 - u)
    G["W_xh"] += dz_h.T @ x
    G["W_hh"] += dz_h.T @ rh
    G["b_h"] += dz_h.sum(axis=0)
    drh = dz_h @ P["W_hh"]
    dz_r = drh * h * r * (1.0 - r)
    _acc(G, "r", dz_r, x, h)
    _acc(G, "u", dz_u, x, h)
    return dh * (1.0 - u) + drh * r + dz_r @ P["W_hr"] + dz_u @ P["W_hu"]


def _remainder_back(G, cache, dh):
    x, h_new = cache
    dz = dh * (1.0 - h_new**2)
    G["W_xh"] += dz.T @ x
    G["b_h"] += dz.sum(axis=0)


def _cru_back(P, G, cache, dh, lam):
    """Returns gradients w.r.t. (own previous state, other previous state)."""
    x, h_own, h_other, a, cg, ah, ch, auto, cross = cache
    dz1 = lam * dh * (1.0 - auto**2)
    G["W_x1"] += dz1.T @ x
    G["W_h1"] += dz1.T @ ah
    G["b_1"] += dz1.sum(axis=0)
    dah = dz1 @ P["W_h1"]
    dz_a = dah * h_own * a * (1.0 - a)
    _acc(G, "a", dz_a, x, h_own)
    d_own = dah * a + dz_a @ P["W_ha"]

    dz2 = (1.0 - lam) * dh * (1.0 - cross**2)
    G["W_x2"] += dz2.T @ x
    G["W_h2"] += dz2.T @ ch
    G["b_2"] += dz2.sum(axis=0)
    dch = dz2 @ P["W_h2"]
    dz_c = dch * h_other * cg * (1.0 - cg)
    _acc(G, "c", dz_c, x, h_other)
    d_other = dch * cg + dz_c @ P["W_hc"]
    return d_own, d_other


def backward(p: CellParams, sample: Sample, tape: Tape, dloss_dpred=None) -> dict:
    """Gradient of the loss w.r.t. every learnable tensor.

    ``dloss_dpred`` defaults to the MSE gradient. The gradient w.r.t. the
    initial state is left on ``tape.initial_state_grad``; the per-step
    carried state gradients on ``tape.carried_grads``.
    """
    if tape.kind is not p.kind or tape.fingerprint != _fingerprint(p, sample):
        raise ValueError("tape does not belong to these parameters and sample")
    b = sample.as_batch()
    pred = tape.prediction
    if dloss_dpred is None:
        dy = 2.0 * (pred - b.target) / pred.size
    else:
        dy = np.asarray(dloss_dpred, dtype=np.float64).reshape(pred.shape)

    T = p.tensors()
    grads = {k: np.zeros_like(v) for k, v in T.items()}
    last = tape.states[-1]
    grads["b_y"] += dy.sum(axis=0)
    if not p.kind.decomposed:
        grads["W_hy"] += dy.T @ last["h"]
        ds = {"h": dy @ T["W_hy"]}
        if p.kind is CellKind.LSTM:
            ds["c"] = np.zeros_like(last["c"])
    else:
        for key, w in (("h_s", "W_hsy"), ("h_t", "W_hty"), ("h_r", "W_hry")):
            grads[w] += dy.T @ last[key]
        ds = {key: dy @ T[w] for key, w in (("h_s", "W_hsy"), ("h_t", "W_hty"), ("h_r", "W_hry"))}
        if p.kind is CellKind.LSTM_STLC:
            ds["c_s"] = np.zeros_like(last["c_s"])
            ds["c_t"] = np.zeros_like(last["c_t"])

    kind = p.kind
    Ps, Pt = cells._view(T, "s."), cells._view(T, "t.")
    Gs, Gt, Gr = cells._view(grads, "s."), cells._view(grads, "t."), cells._view(grads, "r.")
    tape.carried_grads = []
    for cache in reversed(tape.caches):
        if kind is CellKind.RNN:
            ds = {"h": _rnn_back(T, grads, cache, ds["h"])}
        elif kind is CellKind.LSTM:
            dh, dc = _lstm_back(T, grads, cache, ds["h"], ds["c"])
            ds = {"h": dh, "c": dc}
        elif kind is CellKind.GRU:
            ds = {"h": _gru_back(T, grads, cache, ds["h"])}
        else:
            cs, ct, cr = cache
            _remainder_back(Gr, cr, ds["h_r"])
            # the remainder state has no recurrence: nothing flows back through it
            new = {"h_r": np.zeros_like(ds["h_r"])}
            if kind is CellKind.RNN_STLC:
                new["h_s"] = _rnn_back(Ps, Gs, cs, ds["h_s"])
                new["h_t"] = _rnn_back(Pt, Gt, ct, ds["h_t"])
            elif kind is CellKind.LSTM_STLC:
                new["h_s"], new["c_s"] = _lstm_back(Ps, Gs, cs, ds["h_s"], ds["c_s"])
                new["h_t"], new["c_t"] = _lstm_back(Pt, Gt, ct, ds["h_t"], ds["c_t"])
            elif kind is CellKind.GRU_STLC:
                new["h_s"] = _gru_back(Ps, Gs, cs, ds["h_s"])
                new["h_t"] = _gru_back(Pt, Gt, ct, ds["h_t"])
            else:
                ss, st = _cru_back(Ps, Gs, cs, ds["h_s"], p.lam)
                tt, ts = _cru_back(Pt, Gt, ct, ds["h_t"], p.lam)
                new["h_s"] = ss + ts
                new["h_t"] = tt + st
            ds = new
        tape.carried_grads.append(ds)
    tape.carried_grads.reverse()
    tape.initial_state_grad = {k: (v if tape.batched else v[0]) for k, v in ds.items()}
    return grads


def loss_and_grads(p: CellParams, sample: Sample):
    pred, tape = forward_sequence(p, sample)
    loss = mse_loss(pred, sample.target)
    return loss, backward(p, sample, tape)


# ---------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    max_rel_error: float
    worst: str
    n_checked: int

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: max relative error {self.max_rel_error:.3e} at {self.worst} "
            f"({self.n_checked} scalars, tolerance {self.tolerance:g})"
        )


def grad_check(
    p: CellParams,
    sample: Sample,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    grads: dict | None = None,
    max_checked: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    The relative error of each scalar is ``|analytic - numeric| /
    max(1, |numeric|)``. With ``max_checked`` set (>= 200) a seeded random
    subset is checked when the model is larger.
    """
    if grads is None:
        _, grads = loss_and_grads(p, sample)
    flat = p.flat()
    names = []
    for name, shape in p.layout():
        names += [f"{name}{list(ix)}" for ix in np.ndindex(*shape)]
    analytic = np.concatenate([grads[name].ravel() for name, _ in p.layout()])

    idx = np.arange(flat.size)
    if max_checked is not None and flat.size > max_checked:
        idx = np.sort(np.random.default_rng(seed).choice(flat.size, max(200, max_checked), replace=False))

    worst, worst_err = "", 0.0
    for k in idx:
        plus, minus = flat.copy(), flat.copy()
        plus[k] += step
        minus[k] -= step
        lp = mse_loss(forward_sequence(p.with_flat(plus), sample)[0], sample.target)
        lm = mse_loss(forward_sequence(p.with_flat(minus), sample)[0], sample.target)
        numeric = (lp - lm) / (2.0 * step)
        err = abs(analytic[k] - numeric) / max(1.0, abs(numeric))
        if err > worst_err or not worst:
            worst, worst_err = names[k], err
    return GradCheckReport(worst_err <= tolerance, tolerance, worst_err, worst, int(idx.size))


# ---------------------------------------------------------------- init/optim


def init_weights(kind, m: int, H: int, o: int, seed: int, lam: float = 0.5) -> CellParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, canonical draw order."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(H)
    tensors = {}
    for name, shape in param_layout(kind, m, H, o):
        if cells._is_bias(name):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return CellParams.from_tensors(kind, m, H, o, tensors, lam)


@dataclass
class OptimState:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ("adam", "sgd"):
            raise ValueError(f"unknown optimiser {self.algorithm!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def adam_update(opt: OptimState, p: CellParams, g: dict) -> CellParams:
    """Apply one optimiser step (Adam or plain SGD per ``opt.algorithm``)."""
    T = p.tensors()
    for name, value in T.items():
        if name not in g or g[name].shape != value.shape:
            raise ShapeError(f"gradient for {name} missing or misshapen")
    opt.step += 1
    new = {}
    if opt.algorithm == "sgd":
        for name, value in T.items():
            new[name] = value - opt.learning_rate * g[name]
        return p.with_tensors(new)

    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for name, value in T.items():
        grad = g[name]
        m = opt.m.get(name, np.zeros_like(value))
        v = opt.v.get(name, np.zeros_like(value))
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad
        opt.m[name], opt.v[name] = m, v
        new[name] = value - opt.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + opt.epsilon)
    return p.with_tensors(new)


def clip_by_global_norm(g: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
    if max_norm is None or norm <= max_norm:
        return g
    scale = max_norm / norm
    return {k: v * scale for k, v in g.items()}


@dataclass
class TrainResult:
    params: CellParams
    loss_curve: list


def train(
    kind,
    data: Sample,
    epochs: int,
    seed: int,
    hidden: int = 16,
    lam: float = 0.5,
    optimizer: str = "adam",
    learning_rate: float = 1e-3,
    batch_size: int | None = None,
    clip_norm: float | None = 5.0,
    init: CellParams | None = None,
) -> TrainResult:
    """Fit a cell to stacked training windows.

    The loss curve holds one entry per epoch: the mean mini-batch loss seen
    during that epoch, each measured before its update.
    """
    data = data.as_batch()
    n = len(data)
    if n == 0:
        raise ValueError("training set is empty")
    m = data.inputs.shape[-1]
    o = data.target.shape[-1]
    p = init if init is not None else init_weights(kind, m, hidden, o, seed, lam)
    opt = OptimState(optimizer, learning_rate)
    rng = np.random.default_rng(seed + 1_000_003)
    curve = []
    for epoch in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
        total = 0.0
        for idx in batches:
            batch = data if idx.size == n else data.subset(idx)
            pred, tape = forward_sequence(p, batch)
            loss = mse_loss(pred, batch.target)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            g = backward(p, batch, tape)
            total += loss * idx.size
            p = adam_update(opt, p, clip_by_global_norm(g, clip_norm))
        curve.append(total / n)
        if epoch % 50 == 0:
            log.debug("%s epoch %d loss %.6g", p.kind.value, epoch, curve[-1])
    return TrainResult(p, curve)
