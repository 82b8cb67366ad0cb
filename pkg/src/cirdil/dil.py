"""Domain-incremental training loop: finetune, EWC, LwF, SI and progressive nets.

A task is learned by minimising MSE plus a method penalty with Adam. After
each task the method's carry-over (Fisher diagonal, SI importances, teacher
snapshot, frozen PNN column) is refreshed and a checkpoint is stored; with
weight averaging on, the freshly adapted parameters are first replaced by the
uniform mean of all task checkpoints.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import TaskDataset
from .nn import MLP, AdamState, NonFiniteError, adam_step, mse_grad, mse_loss, parameter_count
from .sampling import ExemplarSet, empty_set

log = logging.getLogger(__name__)

METHODS = ("finetune", "ewc", "lwf", "si", "pnn")
DEFAULT_LAMBDA = {"ewc": 1e5, "lwf": 10.0, "si": 5.0}

# rng stream tags, combined with (seed, stage)
_INIT, _SHUFFLE, _COLUMN = 0, 1, 2


class ConfigError(ValueError):
    pass


class TrainingDiverged(NonFiniteError):
    pass


def rng_for(seed, stage, purpose):
    return np.random.default_rng([int(seed), int(stage), int(purpose)])


@dataclass
class DilConfig:
    method: str = "finetune"
    lam: float | None = None
    weight_averaging: bool = False
    epochs_initial: int = 50
    epochs_adapt: int = 5
    batch_size: int = 16
    lr: float = 1e-3
    milestones: tuple = (30, 40)
    gamma: float = 0.1
    hidden: tuple = (256, 128, 64)
    si_xi: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.lam is None:
            self.lam = DEFAULT_LAMBDA.get(self.method, 0.0)
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.epochs_initial < 1 or self.epochs_adapt < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("batch size and learning rate must be positive")
        self.milestones = tuple(self.milestones)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.method == "pnn" and self.weight_averaging:
            log.info("weight averaging is not defined for pnn; disabled")
            self.weight_averaging = False


# --- progressive network -------------------------------------------------------

class ProgressiveNet:
    """One MLP column per task; hidden layers of column k also read the
    previous layer's activations of columns 0..k-1 through linear adapters.
    Only the newest column is ever trained."""

    def __init__(self, sizes):
        self.sizes = list(sizes)
        self.columns: list[MLP] = []

    def lateral_widths(self, k):
        return [0] + [k * self.sizes[l] for l in range(1, len(self.sizes) - 1)]

    def add_column(self, rng) -> MLP:
        col = MLP.init(self.sizes, rng, lateral=self.lateral_widths(len(self.columns)))
        self.columns.append(col)
        return col

    def expected_params(self) -> int:
        return sum(parameter_count(self.sizes, self.lateral_widths(k)) for k in range(len(self.columns)))

    @property
    def params(self):
        return self.columns[-1].params

    def _traces(self, X, upto):
        traces, lats = [], []
        for j in range(upto + 1):
            lat = None
            if j:
                lat = [None] + [np.concatenate([traces[i][0][l] for i in range(j)], axis=1)
                                for l in range(1, len(self.sizes) - 1)]
            traces.append(self.columns[j].forward_trace(X, lat))
            lats.append(lat)
        return traces, lats

    def predict(self, X, column=None):
        column = len(self.columns) - 1 if column is None else min(column, len(self.columns) - 1)
        single = np.ndim(X) == 1
        out = self._traces(np.atleast_2d(X), column)[0][-1][2]
        return out[0] if single else out

    __call__ = predict

    def newest_trace(self, X):
        traces, lats = self._traces(X, len(self.columns) - 1)
        return traces[-1], lats[-1]

    def copy(self) -> "ProgressiveNet":
        net = ProgressiveNet(self.sizes)
        net.columns = [c.copy() for c in self.columns]
        return net


def pnn_add_column(model: ProgressiveNet, rng) -> MLP:
    if not model.columns:
        raise ValueError("progressive net needs a trained first column")
    return model.add_column(rng)


# --- state and penalties ---------------------------------------------------------

@dataclass
class DilState:
    method: str
    checkpoints: list = field(default_factory=list)
    anchor: np.ndarray | None = None
    fisher: np.ndarray | None = None
    teacher: MLP | None = None
    importance: np.ndarray | None = None   # SI Omega
    path: np.ndarray | None = None         # SI omega, running
    task_start: np.ndarray | None = None

    @property
    def tasks_done(self) -> int:
        return len(self.checkpoints)

    def copy(self) -> "DilState":
        def c(a):
            return None if a is None else a.copy()
        return DilState(self.method, [p.copy() for p in self.checkpoints], c(self.anchor), c(self.fisher),
                        c(self.teacher), c(self.importance), c(self.path), c(self.task_start))


def penalty_ewc(theta, anchor, fisher, lam) -> float:
    d = theta - anchor
    return float(lam * np.sum(fisher * d * d))


def penalty_ewc_grad(theta, anchor, fisher, lam):
    return 2.0 * lam * fisher * (theta - anchor)


# SI uses the same quadratic form with importances in place of the Fisher diagonal
penalty_si = penalty_ewc
penalty_si_grad = penalty_ewc_grad


def penalty_lwf(student_pred, teacher_pred, lam) -> float:
    return float(lam * mse_loss(student_pred, teacher_pred))


def estimate_fisher(model: MLP, X, Y):
    """Diagonal empirical Fisher: mean squared per-sample MSE gradient."""
    if len(X) == 0:
        raise ValueError("Fisher estimate needs data")
    return model.per_sample_sq_grad(X, Y)


def si_accumulate(path, grad, delta):
    """omega += -grad * delta_theta (in place)."""
    path -= grad * delta
    return path


def si_consolidate(importance, path, task_delta, xi):
    importance += np.maximum(path, 0.0) / (task_delta**2 + xi)
    return importance


def average_weights(checkpoints, current):
    stack = list(checkpoints) + [current]
    return np.mean(np.stack(stack), axis=0)


# --- training loop ----------------------------------------------------------------

@dataclass
class FitLog:
    losses: list = field(default_factory=list)
    steps: int = 0


def _fit(params, grad_fn, n, cfg: DilConfig, epochs, opt, rng, penalty=None, path=None):
    """Shuffled mini-batch Adam over ``n`` stream positions."""
    fl = FitLog()
    if n == 0:
        return fl
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            try:
                loss, grad = grad_fn(idx)
                if not np.isfinite(loss):
                    raise NonFiniteError("non-finite loss")
                full = grad if penalty is None else grad + penalty(params)
                adam_step(opt, params, full)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}, step {fl.steps}") from exc
            if path is not None:
                # applied update is params_new - params_old == -opt._buf
                path += grad * opt._buf
            total += loss * len(idx)
            fl.steps += 1
        fl.losses.append(total / n)
        opt.end_epoch()
    return fl


def _mlp_grad_fn(model: MLP, X, Y, teacher_out=None, lam=0.0):
    def grad_fn(idx):
        trace = model.forward_trace(X[idx])
        pred = trace[2]
        loss = mse_loss(pred, Y[idx])
        dout = mse_grad(pred, Y[idx])
        if teacher_out is not None:
            t = teacher_out[idx]
            loss += penalty_lwf(pred, t, lam)
            dout = dout + lam * mse_grad(pred, t)
        return loss, model.backward(trace, dout)
    return grad_fn


def _pnn_grad_fn(net: ProgressiveNet, X, Y):
    col = net.columns[-1]

    def grad_fn(idx):
        trace, lat = net.newest_trace(X[idx])
        loss = mse_loss(trace[2], Y[idx])
        return loss, col.backward(trace, mse_grad(trace[2], Y[idx]), lat)
    return grad_fn


_initial_cache: dict = {}


def clear_cache():
    _initial_cache.clear()


def _data_key(X, Y):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(Y).tobytes())
    return h.hexdigest()


def _finish_task(model, state: DilState, X, Y, cfg: DilConfig):
    params = model.params
    if cfg.method == "ewc" and len(X):
        f = estimate_fisher(model, X, Y)
        state.fisher = f if state.fisher is None else state.fisher + f
        state.anchor = params.copy()
    elif cfg.method == "si":
        si_consolidate(state.importance, state.path, params - state.task_start, cfg.si_xi)
        state.path[...] = 0.0
        state.anchor = params.copy()
        state.task_start = params.copy()
    elif cfg.method == "lwf":
        state.teacher = model.copy()
    state.checkpoints.append(params.copy())


def train_initial(dataset: TaskDataset, cfg: DilConfig, use_cache=True):
    """Full training on the first task's train split; returns ``(model, state, log)``.

    Runs with identical seeds and hyper-parameters share one training run.
    """
    idx = dataset.train_idx
    X, Y = dataset.features[idx], dataset.positions[idx]
    sizes = [X.shape[1], *cfg.hidden, 2]
    track = cfg.method == "si"
    key = (_data_key(X, Y), cfg.seed, tuple(sizes), cfg.epochs_initial, cfg.batch_size, cfg.lr,
           cfg.milestones, cfg.gamma)
    cached = _initial_cache.get(key) if use_cache else None
    if cached is not None and (not track or cached[1] is not None):
        params, path, fl = cached
        model = MLP(sizes, params.copy())
        path = None if path is None else path.copy()
    else:
        model = MLP.init(sizes, rng_for(cfg.seed, 0, _INIT))
        path = np.zeros(model.n_params) if track else None
        opt = AdamState(model.n_params, lr=cfg.lr, milestones=cfg.milestones, gamma=cfg.gamma)
        fl = _fit(model.params, _mlp_grad_fn(model, X, Y), len(X), cfg, cfg.epochs_initial,
                  opt, rng_for(cfg.seed, 0, _SHUFFLE), path=path)
        if use_cache:
            _initial_cache[key] = (model.params.copy(), None if path is None else path.copy(), fl)
    state = DilState(cfg.method)
    if cfg.method == "si":
        state.importance = np.zeros(model.n_params)
        state.path = path
        state.task_start = np.zeros(model.n_params)
        # SI's first-task displacement is measured from the initialisation
        state.task_start[...] = MLP.init(sizes, rng_for(cfg.seed, 0, _INIT)).params
    if cfg.method == "pnn":
        net = ProgressiveNet(sizes)
        net.columns.append(model)
        model = net
    _finish_task(model, state, X, Y, cfg)
    return model, state, fl


@dataclass
class AdaptLog:
    stream_ids: np.ndarray
    fit: FitLog


def adapt(model, state: DilState, task: TaskDataset, exemplars: ExemplarSet | None, cfg: DilConfig, stage=1):
    """Train on the task's modified-region train samples plus exemplars.

    Mutates and returns ``(model, state, log)``.
    """
    if state.method != cfg.method:
        raise ConfigError(f"state is for {state.method}, config asks for {cfg.method}")
    exemplars = exemplars if exemplars is not None else empty_set()
    ex_ids = np.asarray(exemplars.ids, dtype=np.int64)
    if len(ex_ids) and (ex_ids.min() < 0 or ex_ids.max() >= len(task)):
        raise ValueError("exemplar ids out of range for this task")
    stream = np.concatenate([task.modified_train(), ex_ids])
    X, Y = task.features[stream], task.positions[stream]
    expected = model.sizes[0] if isinstance(model, (MLP, ProgressiveNet)) else None
    if X.shape[1] != expected:
        raise ValueError(f"feature length {X.shape[1]} does not match model input {expected}")
    shuffle = rng_for(cfg.seed, stage, _SHUFFLE)
    penalty = path = None
    lam = cfg.lam
    if cfg.method == "pnn":
        pnn_add_column(model, rng_for(cfg.seed, stage, _COLUMN))
        params = model.params
        grad_fn = _pnn_grad_fn(model, X, Y)
    else:
        params = model.params
        teacher_out = None
        if cfg.method == "lwf" and lam > 0 and len(X):
            teacher_out = state.teacher.forward(X)
        grad_fn = _mlp_grad_fn(model, X, Y, teacher_out, lam)
        if cfg.method == "ewc" and lam > 0 and state.fisher is not None:
            anchor, fisher = state.anchor, state.fisher
            penalty = lambda p: penalty_ewc_grad(p, anchor, fisher, lam)  # noqa: E731
        elif cfg.method == "si":
            path = state.path
            if lam > 0:
                anchor, omega = state.anchor, state.importance
                penalty = lambda p: penalty_si_grad(p, anchor, omega, lam)  # noqa: E731
    opt = AdamState(len(params), lr=cfg.lr)
    fl = _fit(params, grad_fn, len(X), cfg, cfg.epochs_adapt, opt, shuffle, penalty, path)
    if cfg.weight_averaging and cfg.method != "pnn":
        params[...] = average_weights(state.checkpoints, params)
    if cfg.method == "pnn":
        state.checkpoints.append(params.copy())
    else:
        _finish_task(model, state, X, Y, cfg)
    return model, state, AdaptLog(stream, fl)


# --- evaluation -------------------------------------------------------------------

def predict(model, X, domain_index=None):
    if isinstance(model, ProgressiveNet):
        return model.predict(X, domain_index)
    return model.forward(X)


def mean_position_error(pred, Y) -> float:
    return float(np.mean(np.hypot(*(np.asarray(pred) - np.asarray(Y)).T)))


def evaluate(model, datasets, split="test"):
    """MAE (mean Euclidean error, metres) per domain, keyed like ``datasets``.

    ``datasets`` is an ordered mapping name -> TaskDataset; a progressive net
    answers domain ``i`` with column ``i`` (its newest column for later ones).
    """
    out = {}
    for i, (name, ds) in enumerate(datasets.items()):
        idx = ds.test_idx if split == "test" else ds.train_idx
        if len(idx) == 0:
            raise ValueError(f"{name}: empty {split} split")
        out[name] = mean_position_error(predict(model, ds.features[idx], i), ds.positions[idx])
    return out


# --- persistence --------------------------------------------------------------------

STATE_VERSION = 1


def save_state(path, model, state: DilState, cfg: DilConfig):
    """Model, method state and config in one npz (arrays plus a JSON header)."""
    from dataclasses import asdict
    import json

    arrays = {}
    if isinstance(model, ProgressiveNet):
        for i, c in enumerate(model.columns):
            arrays[f"column_{i}"] = c.params
        sizes, n_cols = model.sizes, len(model.columns)
    else:
        arrays["params"] = model.params
        sizes, n_cols = model.sizes, 0
    for i, p in enumerate(state.checkpoints):
        arrays[f"checkpoint_{i}"] = p
    for name in ("anchor", "fisher", "importance", "path", "task_start"):
        if getattr(state, name) is not None:
            arrays[name] = getattr(state, name)
    if state.teacher is not None:
        arrays["teacher"] = state.teacher.params
    meta = {"version": STATE_VERSION, "sizes": sizes, "columns": n_cols, "config": asdict(cfg),
            "checkpoints": len(state.checkpoints)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_state(path):
    """Return ``(model, state, cfg)`` saved by :func:`save_state`."""
    import json

    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported state file version {meta.get('version')}")
        cfg = DilConfig(**meta["config"])
        sizes = meta["sizes"]
        if meta["columns"]:
            model = ProgressiveNet(sizes)
            for i in range(meta["columns"]):
                model.columns.append(MLP(sizes, data[f"column_{i}"].copy(), model.lateral_widths(i)))
        else:
            model = MLP(sizes, data["params"].copy())
        state = DilState(cfg.method, [data[f"checkpoint_{i}"].copy() for i in range(meta["checkpoints"])])
        for name in ("anchor", "fisher", "importance", "path", "task_start"):
            if name in data:
                setattr(state, name, data[name].copy())
        if "teacher" in data:
            state.teacher = MLP(sizes, data["teacher"].copy())
    return model, state, cfg
