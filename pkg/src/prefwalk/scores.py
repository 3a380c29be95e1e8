"""Nuisance score estimation by penalized maximum likelihood."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse

from ._fallback import logistic
from .errors import OptimizationError, ParameterError
from .simulate import Dataset, ScoreFunction

C_CLAMP = 30.0
KINDS = ("constant", "linear", "mlp")
DEFAULT_RIDGE = {"constant": 1e-6, "linear": 1e-6, "mlp": 1e-3}


@dataclass(frozen=True)
class ModelSpec:
    """Function class for the item scores.

    ``feature_map`` is ``identity`` (x), ``affine`` (1, x) or ``poly``
    (1, x, ..., x**degree coordinatewise). ``mlp`` shares hidden layers across
    items and emits one output per item. ``ridge`` defaults to ``1e-3`` for
    ``mlp`` (weight decay) and ``1e-6`` otherwise.
    """

    kind: str = "linear"
    feature_map: str = "identity"
    degree: int = 1
    hidden: tuple = (32, 32)
    activation: str = "relu"
    ridge: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.feature_map not in ("identity", "affine", "poly"):
            raise ParameterError(f"unknown feature map {self.feature_map!r}")
        if self.ridge is None:
            object.__setattr__(self, "ridge", DEFAULT_RIDGE[self.kind])
        if self.ridge < 0:
            raise ParameterError("ridge penalty must be nonnegative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind == "mlp" and (not self.hidden or min(self.hidden) <= 0):
            raise ParameterError("mlp hidden widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ParameterError(f"unknown activation {self.activation!r}")

    def features(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.feature_map == "identity":
            return X
        if self.feature_map == "affine":
            return np.hstack([np.ones((X.shape[0], 1)), X])
        return np.hstack([np.ones((X.shape[0], 1))] + [X ** k for k in range(1, self.degree + 1)])

    def feature_dim(self, d):
        if self.feature_map == "identity":
            return d
        if self.feature_map == "affine":
            return d + 1
        return 1 + d * self.degree

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, obj):
        return cls(**{k: (tuple(v) if k == "hidden" else v) for k, v in obj.items()})


@dataclass(frozen=True)
class OptimizerConfig:
    """``method='auto'`` picks full-batch L-BFGS for constant/linear and Adam for mlp."""

    method: str = "auto"
    tol: float = 1e-6
    max_iter: int = 2000
    batch_size: int = 16
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0

    def resolve(self, kind):
        if self.method == "auto":
            return "adam" if kind == "mlp" else "lbfgs"
        if self.method not in ("lbfgs", "adam"):
            raise ParameterError(f"unknown optimizer {self.method!r}")
        return self.method

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


# ---------------------------------------------------------------- parameter layout

def _layer_shapes(spec, n, f):
    if spec.kind == "constant":
        return [(n,)]
    if spec.kind == "linear":
        return [(n, f)]
    shapes = []
    prev = f
    for h in spec.hidden:
        shapes += [(prev, h), (h,)]
        prev = h
    return shapes + [(prev, n), (n,)]


def _unpack(params, shapes):
    out, k = [], 0
    for s in shapes:
        size = math.prod(s)
        out.append(params[k:k + size].reshape(s))
        k += size
    return out


def n_params(spec, n, d):
    return sum(math.prod(s) for s in _layer_shapes(spec, n, spec.feature_dim(d)))


def _activate(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z, h, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - h * h


def _forward(params, spec, Phi, n):
    """Raw (uncentered) scores ``(m, n)`` plus the cache for backprop."""
    shapes = _layer_shapes(spec, n, Phi.shape[1])
    blocks = _unpack(params, shapes)
    if spec.kind == "constant":
        return np.broadcast_to(blocks[0], (Phi.shape[0], n)), None
    if spec.kind == "linear":
        return Phi @ blocks[0].T, None
    cache = [(None, Phi)]
    h = Phi
    for k in range(0, len(blocks) - 2, 2):
        z = h @ blocks[k] + blocks[k + 1]
        h = _activate(z, spec.activation)
        cache.append((z, h))
    return h @ blocks[-2] + blocks[-1], (blocks, cache)


class _Objective:
    """Penalized mean negative log-likelihood over a fixed set of records."""

    def __init__(self, dataset: Dataset, spec: ModelSpec, rows=None):
        if rows is None:
            rows = np.arange(dataset.size)
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise ParameterError("empty dataset")
        self.spec = spec
        self.n = dataset.graph.n
        self.Phi = spec.features(dataset.X[rows])
        self.i = dataset.item_i[rows]
        self.j = dataset.item_j[rows]
        self.y = np.asarray(dataset.y[rows], dtype=np.float64)
        self.m = rows.size
        self.shapes = _layer_shapes(spec, self.n, self.Phi.shape[1])
        self.size = sum(math.prod(s) for s in self.shapes)
        ones = np.ones(self.m)
        self.incidence = scipy.sparse.csr_matrix(
            (np.concatenate([ones, -ones]),
             (np.concatenate([np.arange(self.m)] * 2), np.concatenate([self.i, self.j]))),
            shape=(self.m, self.n),
        )

    def _penalty(self, params):
        lam = self.spec.ridge
        if lam == 0:
            return 0.0, np.zeros_like(params)
        if self.spec.kind == "mlp":
            return lam * float(params @ params), 2.0 * lam * params
        block = params.reshape(self.shapes[0])
        centered = block - block.mean(axis=0, keepdims=True)
        return lam * float(np.sum(centered * centered)), (2.0 * lam * centered).reshape(-1)

    def diffs(self, params, rows=slice(None)):
        spec = self.spec
        if spec.kind == "constant":
            return params[self.i[rows]] - params[self.j[rows]], None
        if spec.kind == "linear":
            W = params.reshape(self.shapes[0])
            return np.einsum("rf,rf->r", self.Phi[rows], W[self.i[rows]] - W[self.j[rows]]), None
        out, cache = _forward(params, spec, self.Phi[rows], self.n)
        idx = np.arange(out.shape[0])
        return out[idx, self.i[rows]] - out[idx, self.j[rows]], cache

    def value(self, params):
        d, _ = self.diffs(params)
        nll = float(np.mean(np.logaddexp(0.0, d) - self.y * d))
        return nll + self._penalty(params)[0]

    def value_and_grad(self, params, rows=None):
        sel = slice(None) if rows is None else rows
        d, cache = self.diffs(params, sel)
        y = self.y[sel]
        m = d.shape[0]
        nll = float(np.mean(np.logaddexp(0.0, d) - y * d))
        g = (logistic(d) - y) / m
        spec = self.spec
        if spec.kind == "constant":
            inc = self.incidence if rows is None else self.incidence[rows]
            grad = inc.T @ g
        elif spec.kind == "linear":
            inc = self.incidence if rows is None else self.incidence[rows]
            grad = (inc.T @ (g[:, None] * self.Phi[sel])).reshape(-1)
        else:
            blocks, layers = cache
            i, j = self.i[sel], self.j[sel]
            dout = np.zeros((m, self.n))
            idx = np.arange(m)
            dout[idx, i] += g
            dout[idx, j] -= g
            grads = [None] * len(blocks)
            h_last = layers[-1][1]
            grads[-2] = h_last.T @ dout
            grads[-1] = dout.sum(axis=0)
            delta = dout @ blocks[-2].T
            for k in range(len(layers) - 1, 0, -1):
                z, h = layers[k]
                delta = delta * _activate_grad(z, h, spec.activation)
                h_prev = layers[k - 1][1]
                grads[2 * (k - 1)] = h_prev.T @ delta
                grads[2 * (k - 1) + 1] = delta.sum(axis=0)
                if k > 1:
                    delta = delta @ blocks[2 * (k - 1)].T
            grad = np.concatenate([gr.reshape(-1) for gr in grads])
        pen, pen_grad = self._penalty(params)
        return nll + pen, np.asarray(grad).reshape(-1) + pen_grad


def negative_log_likelihood(params, dataset: Dataset, spec: ModelSpec, rows=None) -> float:
    """Penalized NLL normalized by the number of records used."""
    if dataset.size == 0:
        raise ParameterError("empty dataset")
    return _Objective(dataset, spec, rows).value(np.asarray(params, dtype=np.float64))


def nll_gradient(params, dataset: Dataset, spec: ModelSpec, rows=None) -> np.ndarray:
    return _Objective(dataset, spec, rows).value_and_grad(np.asarray(params, dtype=np.float64))[1]


def init_params(spec, n, d, seed=0):
    shapes = _layer_shapes(spec, n, spec.feature_dim(d))
    if spec.kind != "mlp":
        return np.zeros(sum(math.prod(s) for s in shapes))
    rng = np.random.default_rng(seed)
    parts = []
    for k in range(0, len(shapes), 2):
        fan_in = shapes[k][0]
        scale = math.sqrt(2.0 / fan_in) if k < len(shapes) - 2 else 0.1 / math.sqrt(fan_in)
        parts.append(rng.normal(0.0, scale, size=shapes[k]).reshape(-1))
        parts.append(np.zeros(shapes[k + 1]))
    return np.concatenate(parts)


@dataclass
class FittedScores:
    """Fitted parameters with an evaluation view centered across items and clamped."""

    spec: ModelSpec
    params: np.ndarray
    n: int
    d: int
    diagnostics: dict = field(default_factory=dict)
    trained_on: tuple | None = None

    def scores(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        raw, _ = _forward(self.params, self.spec, self.spec.features(X), self.n)
        s = raw - raw.mean(axis=1, keepdims=True)
        return np.clip(s, -C_CLAMP, C_CLAMP)

    def score_function(self) -> ScoreFunction:
        f = ScoreFunction(self.n, self.d, self.scores, name=f"fitted-{self.spec.kind}")
        return f

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "n": self.n,
            "d": self.d,
            "params": [float(v) for v in self.params],
            "diagnostics": self.diagnostics,
            "trained_on": None if self.trained_on is None else list(self.trained_on),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj):
        spec = ModelSpec.from_dict(obj["spec"])
        trained = obj.get("trained_on")
        return cls(spec, np.asarray(obj["params"], dtype=np.float64), int(obj["n"]), int(obj["d"]),
                   obj.get("diagnostics", {}), None if trained is None else tuple(trained))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _adam(obj, x0, opt):
    rng = np.random.default_rng(opt.seed)
    x = x0.copy()
    m1 = np.zeros_like(x)
    m2 = np.zeros_like(x)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    bs = max(1, int(opt.batch_size))
    for _ in range(int(opt.epochs)):
        order = rng.permutation(obj.m)
        for lo in range(0, obj.m, bs):
            t += 1
            _, g = obj.value_and_grad(x, order[lo:lo + bs])
            m1 = b1 * m1 + (1 - b1) * g
            m2 = b2 * m2 + (1 - b2) * g * g
            with np.errstate(invalid="ignore", over="ignore"):
                x -= opt.learning_rate * (m1 / (1 - b1 ** t)) / (np.sqrt(m2 / (1 - b2 ** t)) + eps)
            if not np.all(np.isfinite(x)):
                raise OptimizationError("Adam diverged (non-finite parameters)", {"steps": t})
    return x, t


def fit_mle(dataset: Dataset, spec: ModelSpec, opt: OptimizerConfig | None = None,
            replicates=None, x0=None) -> FittedScores:
    """Minimize the penalized NLL on the records whose replicate index is in ``replicates``."""
    opt = opt or OptimizerConfig()
    if not dataset.graph.connected:
        warnings.warn("comparison graph is disconnected; scores are identified only within components",
                      stacklevel=2)
    if replicates is None:
        replicates = np.arange(dataset.L)
    replicates = np.unique(np.asarray(replicates, dtype=np.int64))
    obj = _Objective(dataset, spec, dataset.rows_for(replicates))
    x = init_params(spec, dataset.graph.n, dataset.d, opt.seed) if x0 is None else np.array(x0, float)
    method = opt.resolve(spec.kind)
    if method == "lbfgs":
        res = scipy.optimize.minimize(
            obj.value_and_grad, x, jac=True, method="L-BFGS-B",
            options={"maxiter": int(opt.max_iter), "gtol": opt.tol, "ftol": 1e-15, "maxcor": 20},
        )
        x, iters = res.x, int(res.nit)
    else:
        x, iters = _adam(obj, x, opt)
    loss, grad = obj.value_and_grad(x)
    if not math.isfinite(loss):
        raise OptimizationError("score fit diverged (loss is not finite)",
                                {"iterations": iters, "loss": loss})
    gmax = float(np.max(np.abs(grad))) if grad.size else 0.0
    diag = {"loss": loss, "grad_max": gmax, "iterations": iters, "method": method,
            "converged": bool(gmax <= opt.tol)}
    return FittedScores(spec, x, dataset.graph.n, dataset.d, diag, tuple(replicates.tolist()))


def split_indices(L: int, S: int, seed=0):
    """Random partition of ``range(L)`` into ``S`` sorted folds with sizes differing by at most one."""
    if int(S) != S or S < 1:
        raise ParameterError(f"fold count must be a positive integer, got {S}")
    if S > L:
        raise ParameterError(f"cannot split {L} replicates into {S} folds")
    perm = np.random.default_rng(seed).permutation(int(L))
    return [np.sort(part) for part in np.array_split(perm, int(S))]
