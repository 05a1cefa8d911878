"""
A small fully-connected network trained with Adam, used as the projection
source for concept-drift monitoring.

The hidden recursion is f_1 = s_1(W_1 x + b_1), f_j = s_j(W_j f_{j-1} + b_j)
and the output is y = beta' f_H + b_out. The monitored projection is the
output-weight vector beta applied to the last-hidden-layer features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import BoundaryConfig, MonitorError, ProjectionVector, derive_seed
from .covest import spectral_norm
from .detector import PROJECTION, RESIDUAL, MonitorConfig, RunReport, run_monitor, start_monitor
from .lrv import LrvConfig

# (name, Lipschitz constant, value at 0)
_ACT_INFO = {"relu": (1.0, 0.0), "tanh": (1.0, 0.0), "sigmoid": (0.25, 0.5)}


@dataclass(frozen=True)
class Activation:
    name: str = "relu"
    k: float = 1.0  # sharpness of the softplus relu approximation

    def __post_init__(self) -> None:
        if self.name not in ("relu", "tanh", "sigmoid", "softplus"):
            raise MonitorError(f"unknown activation {self.name!r}")

    def __call__(self, a: np.ndarray) -> np.ndarray:
        if self.name == "relu":
            return np.maximum(a, 0.0)
        if self.name == "tanh":
            return np.tanh(a)
        if self.name == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * a))
        return np.logaddexp(0.0, 2 * self.k * a) / (2 * self.k)

    def grad(self, a: np.ndarray) -> np.ndarray:
        if self.name == "relu":
            return (a > 0).astype(np.float64)
        if self.name == "tanh":
            return 1.0 - np.tanh(a) ** 2
        if self.name == "sigmoid":
            s = 0.5 * (1.0 + np.tanh(0.5 * a))
            return s * (1.0 - s)
        return 0.5 * (1.0 + np.tanh(self.k * a))

    @property
    def lipschitz(self) -> float:
        return 1.0 if self.name == "softplus" else _ACT_INFO[self.name][0]

    @property
    def at_zero(self) -> float:
        return math.log(2.0) / (2 * self.k) if self.name == "softplus" else _ACT_INFO[self.name][1]

    def to_dict(self) -> dict:
        return {"name": self.name, "k": self.k}


@dataclass
class MlpModel:
    weights: list
    activations: list
    beta: np.ndarray
    biases: Optional[list] = None
    out_bias: float = 0.0

    def __post_init__(self) -> None:
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        self.activations = [a if isinstance(a, Activation) else Activation(a) for a in self.activations]
        if len(self.activations) != len(self.weights):
            raise MonitorError("one activation per hidden layer is required")
        for j in range(1, len(self.weights)):
            if self.weights[j].shape[1] != self.weights[j - 1].shape[0]:
                raise MonitorError(f"layer {j + 1} expects {self.weights[j].shape[1]} inputs, layer {j} has {self.weights[j - 1].shape[0]} outputs")
        if self.beta.size != self.weights[-1].shape[0]:
            raise MonitorError("beta length must equal the last hidden width")
        if self.biases is not None:
            self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
            for W, b in zip(self.weights, self.biases):
                if b.size != W.shape[0]:
                    raise MonitorError("bias length must equal the layer width")
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise MonitorError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def has_biases(self) -> bool:
        return self.biases is not None

    def parameters(self) -> list:
        """Trainable arrays in a fixed order: W_1, [b_1], ..., W_H, [b_H], beta, [b_out]."""
        out = []
        for j, W in enumerate(self.weights):
            out.append(W)
            if self.biases is not None:
                out.append(self.biases[j])
        out.append(self.beta)
        if self.biases is not None:
            out.append(np.array([self.out_bias]))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MlpModel":
        params = list(params)
        weights, biases = [], [] if self.biases is not None else None
        for _ in self.weights:
            weights.append(params.pop(0))
            if biases is not None:
                biases.append(params.pop(0))
        beta = params.pop(0)
        out_bias = float(params.pop(0)[0]) if biases is not None else 0.0
        return MlpModel(weights, list(self.activations), beta, biases, out_bias)

    def to_dict(self) -> dict:
        return {
            "shapes": [list(W.shape) for W in self.weights],
            "activations": [a.to_dict() for a in self.activations],
            "weights": [W.ravel().tolist() for W in self.weights],
            "beta": self.beta.tolist(),
            "biases": None if self.biases is None else [b.tolist() for b in self.biases],
            "out_bias": self.out_bias,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MlpModel":
        weights = [np.array(w, dtype=np.float64).reshape(s) for w, s in zip(obj["weights"], obj["shapes"])]
        acts = [Activation(**a) for a in obj["activations"]]
        return cls(weights, acts, np.array(obj["beta"]), obj.get("biases"), float(obj.get("out_bias", 0.0)))


def init_mlp(input_dim: int, widths: Sequence[int] = (4, 2), activation: str = "relu", biases: bool = True, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *widths]

    def glorot(fan_out, fan_in):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, (fan_out, fan_in))

    weights = [glorot(dims[j + 1], dims[j]) for j in range(len(widths))]
    beta = glorot(1, widths[-1])[0]
    b = [np.zeros(w) for w in widths] if biases else None
    return MlpModel(weights, [Activation(activation) for _ in widths], beta, b, 0.0)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _forward_batch(model: MlpModel, X: np.ndarray):
    pre, post = [], [X]
    h = X
    for j, (W, act) in enumerate(zip(model.weights, model.activations)):
        a = h @ W.T
        if model.biases is not None:
            a = a + model.biases[j]
        pre.append(a)
        h = act(a)
        post.append(h)
    y = h @ model.beta + model.out_bias
    return y, h, pre, post


def features(model: MlpModel, X) -> np.ndarray:
    """Last-hidden-layer features f_H for a batch of inputs, shape (n, n_H)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise MonitorError(f"input dimension {X.shape[1]} does not match the model ({model.input_dim})")
    return _forward_batch(model, X)[1]


def predict(model: MlpModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise MonitorError(f"input dimension {X.shape[1]} does not match the model ({model.input_dim})")
    return _forward_batch(model, X)[0]


def forward(model: MlpModel, x) -> tuple[float, np.ndarray]:
    """Output and last-hidden-layer features for one input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.input_dim:
        raise MonitorError(f"input dimension {x.size} does not match the model ({model.input_dim})")
    y, h, _, _ = _forward_batch(model, x[None, :])
    if not (np.isfinite(y).all() and np.isfinite(h).all()):
        raise MonitorError("non-finite value in the forward pass")
    return float(y[0]), h[0]


def loss_and_grads(model: MlpModel, X: np.ndarray, z: np.ndarray) -> tuple[float, list]:
    """Mean squared error and its gradient for every array of ``model.parameters()``."""
    n = X.shape[0]
    y, h, pre, post = _forward_batch(model, X)
    r = y - z
    loss = float(np.mean(r * r))
    dy = 2.0 * r / n
    g_beta = h.T @ dy
    g_out = np.array([dy.sum()])
    dh = np.outer(dy, model.beta)
    gW, gb = [None] * model.depth, [None] * model.depth
    for j in range(model.depth - 1, -1, -1):
        da = dh * model.activations[j].grad(pre[j])
        gW[j] = da.T @ post[j]
        gb[j] = da.sum(axis=0)
        if j:
            dh = da @ model.weights[j]
    grads = []
    for j in range(model.depth):
        grads.append(gW[j])
        if model.biases is not None:
            grads.append(gb[j])
    grads.append(g_beta)
    if model.biases is not None:
        grads.append(g_out)
    return loss, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch: int = 32
    val_split: float = 0.2
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.val_split < 1.0:
            raise MonitorError("val_split must lie in [0, 1)")
        if self.batch < 1:
            raise MonitorError("batch size must be positive")
        if self.epochs < 0:
            raise MonitorError("epochs must be nonnegative")


@dataclass
class TrainHistory:
    initial_loss: float
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params: Sequence[np.ndarray], cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list, grads: list) -> list:
        c = self.cfg
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * g * g
            m_hat = self.m[i] / (1 - c.beta1**self.t)
            v_hat = self.v[i] / (1 - c.beta2**self.t)
            out.append(p - c.lr * m_hat / (np.sqrt(v_hat) + c.eps))
        return out


def train(model: MlpModel, X, z, cfg: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainHistory]:
    """Least-squares fit with mini-batch Adam.

    The last ``val_split`` fraction of the (time-ordered) data is held out;
    the training part is reshuffled every epoch. The history records the
    full training-part loss and the validation loss after every epoch.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if X.shape[0] != z.size:
        raise MonitorError("inputs and responses differ in length")
    if X.shape[1] != model.input_dim:
        raise MonitorError(f"input dimension {X.shape[1]} does not match the model ({model.input_dim})")
    n_train = int(X.shape[0] * (1.0 - cfg.val_split))
    if n_train < cfg.batch:
        raise MonitorError(f"need at least {cfg.batch} training pairs after the validation split, have {n_train}")
    Xt, zt = X[:n_train], z[:n_train]
    Xv, zv = X[n_train:], z[n_train:]
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory(loss_and_grads(model, Xt, zt)[0])
    params = [p.copy() for p in model.parameters()]
    opt = Adam(params, cfg.adam)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        for s in range(0, n_train, cfg.batch):
            idx = perm[s : s + cfg.batch]
            _, grads = loss_and_grads(model, Xt[idx], zt[idx])
            params = opt.step(params, grads)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise MonitorError(f"training diverged in epoch {epoch + 1}")
            model = model.with_parameters(params)
        tl = loss_and_grads(model, Xt, zt)[0]
        if not math.isfinite(tl):
            raise MonitorError(f"training diverged in epoch {epoch + 1}")
        hist.train.append(tl)
        hist.val.append(loss_and_grads(model, Xv, zv)[0] if Xv.shape[0] else float("nan"))
    return model, hist


def refit_output_weights(model: MlpModel, X, z) -> MlpModel:
    """Solve the sample normal equations of the output layer for beta (and b_out)."""
    F = features(model, X)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if model.has_biases:
        F = np.column_stack([F, np.ones(F.shape[0])])
    coef, *_ = np.linalg.lstsq(F, z, rcond=None)
    if model.has_biases:
        return replace(model, beta=coef[:-1], out_bias=float(coef[-1]))
    return replace(model, beta=coef)


# ---------------------------------------------------------------------------
# Lipschitz oracle
# ---------------------------------------------------------------------------


@dataclass
class LipschitzCheck:
    lhs: float
    rhs: float
    holds: bool
    telescoped: float  # sum_k L_Hk ||W~_k - W_k||_op ||x||, never larger than rhs
    L_H: float


def lipschitz_constants(model: MlpModel, perturbed: Sequence[np.ndarray]) -> np.ndarray:
    """L_Hk = prod_{i<k} r_i ||W~_i|| * r_k * prod_{i>k} r_i ||W_i||, k = 1..H."""
    rho = np.array([a.lipschitz for a in model.activations])
    n_old = np.array([spectral_norm(W.T @ W) ** 0.5 for W in model.weights])
    n_new = np.array([spectral_norm(np.asarray(W).T @ np.asarray(W)) ** 0.5 for W in perturbed])
    H = model.depth
    out = np.empty(H)
    for k in range(H):
        out[k] = np.prod(rho[:k] * n_new[:k]) * rho[k] * np.prod(rho[k + 1 :] * n_old[k + 1 :])
    return out


def lipschitz_bound_check(model: MlpModel, theta_tilde: Sequence[np.ndarray], x) -> LipschitzCheck:
    """Compare ||f_H(x; theta~) - f_H(x; theta)|| with L_H sqrt(H) ||x|| ||theta~ - theta||_F.

    Only bias-free networks whose activations vanish at zero are covered.
    """
    if model.has_biases:
        raise MonitorError("the Lipschitz bound covers bias-free networks only")
    for a in model.activations:
        if a.at_zero != 0.0:
            raise MonitorError(f"activation {a.name} does not vanish at 0")
    theta_tilde = [np.asarray(W, dtype=np.float64) for W in theta_tilde]
    if [W.shape for W in theta_tilde] != [W.shape for W in model.weights]:
        raise MonitorError("perturbed weights must match the model's shapes")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    other = replace(model, weights=theta_tilde)
    lhs = float(np.linalg.norm(features(other, x)[0] - features(model, x)[0]))
    L = lipschitz_constants(model, theta_tilde)
    dW = [Wt - W for Wt, W in zip(theta_tilde, model.weights)]
    frob = math.sqrt(sum(float(np.sum(d * d)) for d in dW))
    xn = float(np.linalg.norm(x))
    rhs = float(L.max() * math.sqrt(model.depth) * xn * frob)
    tele = float(sum(Lk * spectral_norm(d.T @ d) ** 0.5 for Lk, d in zip(L, dW)) * xn)
    return LipschitzCheck(lhs, rhs, lhs <= rhs + 1e-9, tele, float(L.max()))


# ---------------------------------------------------------------------------
# rollover protocol
# ---------------------------------------------------------------------------


@dataclass
class Episode:
    index: int
    train_start: int  # 1-based times of the training window
    train_end: int
    signal_time: Optional[int]
    signal_kind: Optional[str]
    proj_signal: Optional[int]
    resid_signal: Optional[int]
    train_loss: float
    val_loss: float
    init_attempts: int = 1

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EpisodeLog:
    episodes: list = field(default_factory=list)
    reports: list = field(default_factory=list)  # (Episode, {"projection": RunReport, "residual": RunReport})
    models: list = field(default_factory=list)

    @property
    def signals(self) -> list:
        return [e.signal_time for e in self.episodes if e.signal_time is not None]

    @property
    def n_trainings(self) -> int:
        return len(self.episodes)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.episodes)

    def write_jsonl(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class RolloverConfig:
    m: int = 1000
    boundary: BoundaryConfig = field(default_factory=lambda: BoundaryConfig(0.25, 0.1))
    alpha: float = 0.05
    c: Optional[float] = None
    lrv: LrvConfig = field(default_factory=LrvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    widths: tuple = (4, 2)
    activation: str = "relu"
    retrain: bool = True
    max_init_attempts: int = 5
    seed: int = 0


def _fit_episode(X, z, cfg: RolloverConfig, episode: int):
    """Train and freeze both detectors; re-initialize when the features are degenerate."""
    last_err = None
    for attempt in range(cfg.max_init_attempts):
        init_seed = int(derive_seed(cfg.seed, "deepmon", "init", episode, attempt).generate_state(1)[0])
        train_seed = int(derive_seed(cfg.seed, "deepmon", "shuffle", episode, attempt).generate_state(1)[0])
        model0 = init_mlp(X.shape[1], cfg.widths, cfg.activation, True, init_seed)
        model, hist = train(model0, X, z, replace(cfg.train, seed=train_seed))
        F = features(model, X)
        mcfg = dict(boundary=cfg.boundary, alpha=cfg.alpha, c=cfg.c, lrv=cfg.lrv)
        try:
            proj = start_monitor(F, MonitorConfig(ProjectionVector(model.beta), kind=PROJECTION, **mcfg))
            Fr = np.column_stack([F, np.ones(F.shape[0])])
            v_res = ProjectionVector(np.append(model.beta, model.out_bias))
            resid = start_monitor(Fr, MonitorConfig(v_res, kind=RESIDUAL, **mcfg), train_z=z)
        except MonitorError as exc:
            last_err = exc
            continue
        return model, hist, proj, resid, attempt + 1
    raise MonitorError(f"episode {episode}: no usable network after {cfg.max_init_attempts} initializations ({last_err})")


def rollover_monitor(X, z, cfg: RolloverConfig = RolloverConfig()) -> EpisodeLog:
    """Train, monitor with the projection and residual detectors, retrain after each signal.

    After a signal at time t the observations t+1, ..., t+m form the next
    training window and monitoring restarts right after it. Runs stop at the
    end of the stream; a run without a signal ends the protocol.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    n, m = X.shape[0], cfg.m
    if m > n:
        raise MonitorError(f"insufficient training data: m={m} exceeds the stream length {n}")
    log = EpisodeLog()
    start = 0  # number of discarded observations before the training window
    episode = 0
    while start + m <= n:
        Xtr, ztr = X[start : start + m], z[start : start + m]
        model, hist, proj, resid, attempts = _fit_episode(Xtr, ztr, cfg, episode)
        Xmon, zmon = X[start + m :], z[start + m :]
        F = features(model, Xmon) if Xmon.shape[0] else np.zeros((0, model.beta.size))
        rep_p = run_monitor(proj, F)
        rep_r = run_monitor(resid, np.column_stack([F, np.ones(F.shape[0])]), zmon)
        times = {}
        if rep_p.event is not None:
            times[PROJECTION] = start + m + rep_p.event.k
        if rep_r.event is not None:
            times[RESIDUAL] = start + m + rep_r.event.k
        signal_time = min(times.values()) if times else None
        kind = None
        if signal_time is not None:
            kind = "+".join(k for k in (PROJECTION, RESIDUAL) if times.get(k) == signal_time)
        ep = Episode(
            episode, start + 1, start + m, signal_time, kind, times.get(PROJECTION), times.get(RESIDUAL),
            hist.train[-1] if hist.train else hist.initial_loss,
            hist.val[-1] if hist.val else float("nan"), attempts,
        )
        log.episodes.append(ep)
        log.reports.append((ep, {PROJECTION: rep_p, RESIDUAL: rep_r}))
        log.models.append(model)
        if signal_time is None or not cfg.retrain:
            break
        start = signal_time
        episode += 1
    return log
