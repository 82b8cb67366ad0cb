"""Dense feed-forward regressor with exact reverse-mode gradients and Adam.

All parameters of a model live in one flat float64 vector (the canonical
parameter order is ``W0, b0, [U0], W1, b1, [U1], ...``); per-layer weights are
views into it, so optimizers and regularizers act on the flat vector directly.
``U`` blocks are optional lateral adapters used by progressive networks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when activations, losses or gradients stop being finite."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


def _layout(sizes, lateral):
    """Return list of (slice W, shape W, slice b, slice U or None, shape U)."""
    blocks = []
    offset = 0
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = slice(offset, offset + fan_in * fan_out)
        offset = w.stop
        b = slice(offset, offset + fan_out)
        offset = b.stop
        u = None
        if lateral[l]:
            u = slice(offset, offset + lateral[l] * fan_out)
            offset = u.stop
        blocks.append((w, (fan_in, fan_out), b, u, (lateral[l], fan_out)))
    return blocks, offset


def parameter_count(sizes, lateral=None) -> int:
    """Closed-form count: sum of (fan_in + 1) * fan_out plus adapter weights."""
    lateral = lateral or [0] * (len(sizes) - 1)
    return sum((i + 1) * o + lat * o for i, o, lat in zip(sizes[:-1], sizes[1:], lateral))


class MLP:
    """Rectifier MLP with a linear head.

    ``lateral[l]`` is the width of an extra input block fed into layer ``l``
    through an adapter matrix (zero means no adapter).
    """

    def __init__(self, sizes, params=None, lateral=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.lateral = [int(v) for v in (lateral or [0] * (len(self.sizes) - 1))]
        if len(self.lateral) != len(self.sizes) - 1:
            raise ValueError("lateral widths must match number of layers")
        self._blocks, self.n_params = _layout(self.sizes, self.lateral)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self._bind()

    @classmethod
    def init(cls, sizes, rng, lateral=None):
        """Glorot-uniform weights, zero biases, zero adapters."""
        model = cls(sizes, lateral=lateral)
        for (fan_in, fan_out), W in zip(zip(model.sizes[:-1], model.sizes[1:]), model.W):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        return model

    def _bind(self):
        p = self.params
        self.W = [p[w].reshape(shape) for w, shape, _, _, _ in self._blocks]
        self.b = [p[b] for _, _, b, _, _ in self._blocks]
        self.U = [None if u is None else p[u].reshape(ushape) for _, _, _, u, ushape in self._blocks]

    def set_params(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params[...] = params

    def copy(self) -> "MLP":
        return MLP(self.sizes, self.params.copy(), self.lateral)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward_trace(self, x, laterals=None):
        """Forward pass keeping every layer input for the backward pass.

        Returns ``(inputs, pre, out)`` where ``inputs[l]`` feeds layer ``l``
        and ``pre[l]`` is its pre-activation.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input must have {self.sizes[0]} features, got shape {x.shape}")
        inputs, pre = [], []
        a = x
        for l in range(self.n_layers):
            inputs.append(a)
            with np.errstate(over="ignore", invalid="ignore"):
                z = a @ self.W[l] + self.b[l]
                if self.U[l] is not None:
                    z = z + laterals[l] @ self.U[l]
            if not np.all(np.isfinite(z)):
                raise NonFiniteError(f"non-finite activation in layer {l}", layer=l)
            pre.append(z)
            a = np.maximum(z, 0.0) if l < self.n_layers - 1 else z
        return inputs, pre, a

    def forward(self, x, laterals=None):
        out = self.forward_trace(x, laterals)[2]
        return out[0] if np.ndim(x) == 1 else out

    __call__ = forward

    def backward(self, trace, dout, laterals=None):
        """Gradient of a loss w.r.t. all parameters given dloss/doutput."""
        inputs, pre, _ = trace
        grad = np.empty(self.n_params)
        delta = np.asarray(dout, dtype=np.float64)
        # overflow shows up as non-finite entries, refused by the optimizer
        with np.errstate(over="ignore", invalid="ignore"):
            for l in reversed(range(self.n_layers)):
                w, shape, b, u, ushape = self._blocks[l]
                grad[w] = (inputs[l].T @ delta).ravel()
                grad[b] = delta.sum(axis=0)
                if u is not None:
                    grad[u] = (laterals[l].T @ delta).ravel()
                if l > 0:
                    delta = (delta @ self.W[l].T) * (pre[l - 1] > 0)
        return grad

    def loss_and_grad(self, x, y):
        trace = self.forward_trace(x)
        loss = mse_loss(trace[2], y)
        return loss, self.backward(trace, mse_grad(trace[2], y))

    def per_sample_sq_grad(self, x, y):
        """Mean over samples of the squared per-sample MSE gradient.

        Per-sample weight gradients are outer products ``a_s d_s^T`` so their
        squares average to ``(a**2).T @ (d**2) / n`` without materialising them.
        """
        inputs, pre, out = self.forward_trace(x)
        y = np.asarray(y, dtype=np.float64).reshape(out.shape)
        n = out.shape[0]
        # single-sample MSE averages over the 2 outputs only
        delta = 2.0 * (out - y) / out.shape[1]
        sq = np.empty(self.n_params)
        for l in reversed(range(self.n_layers)):
            w, shape, b, u, _ = self._blocks[l]
            d2 = delta**2
            sq[w] = ((inputs[l] ** 2).T @ d2 / n).ravel()
            sq[b] = d2.mean(axis=0)
            if u is not None:
                raise NotImplementedError("Fisher estimate for lateral adapters")
            if l > 0:
                delta = (delta @ self.W[l].T) * (pre[l - 1] > 0)
        return sq


def mse_loss(pred, target) -> float:
    """Mean over batch and output components of squared residuals."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    with np.errstate(over="ignore"):
        return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - np.asarray(target, dtype=np.float64)) / pred.size


@dataclass
class AdamState:
    """Adam moments plus a multi-step learning-rate schedule (per epoch)."""

    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    milestones: tuple = ()
    gamma: float = 0.1
    step: int = 0
    epoch: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    _buf: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    @property
    def current_lr(self) -> float:
        passed = sum(1 for ms in self.milestones if self.epoch >= ms)
        return self.lr * self.gamma**passed

    def end_epoch(self):
        self.epoch += 1


def adam_step(state: AdamState, params, grad):
    """In-place bias-corrected Adam update; returns ``params``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and state lengths differ")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient, step refused")
    if state._buf is None or state._buf.shape != grad.shape:
        state._buf = np.empty_like(grad)
    buf = state._buf
    state.step += 1
    state.m *= state.beta1
    np.multiply(grad, 1.0 - state.beta1, out=buf)
    state.m += buf
    state.v *= state.beta2
    np.multiply(grad, grad, out=buf)
    buf *= 1.0 - state.beta2
    state.v += buf
    # buf <- sqrt(v_hat) + eps, then params -= lr * m_hat / buf
    np.divide(state.v, 1.0 - state.beta2**state.step, out=buf)
    np.sqrt(buf, out=buf)
    buf += state.eps
    np.divide(state.m, buf, out=buf)
    buf *= state.current_lr / (1.0 - state.beta1**state.step)
    params -= buf
    return params


def save_checkpoint(path, model: MLP, opt: AdamState | None = None, seed=None, epoch=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "sizes": model.sizes,
        "lateral": model.lateral,
        "seed": seed,
        "epoch": epoch,
    }
    arrays = {"params": model.params}
    if opt is not None:
        meta["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "milestones": list(opt.milestones), "gamma": opt.gamma,
            "step": opt.step, "epoch": opt.epoch,
        }
        arrays["adam_m"] = opt.m
        arrays["adam_v"] = opt.v
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Return ``(model, optimizer_state_or_None, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        model = MLP(meta["sizes"], data["params"].copy(), meta["lateral"])
        opt = None
        if "optimizer" in meta:
            o = dict(meta["optimizer"])
            o["milestones"] = tuple(o["milestones"])
            opt = AdamState(model.n_params, m=data["adam_m"].copy(), v=data["adam_v"].copy(), **o)
    return model, opt, meta
