"""Synthetic multipath CIR fingerprints over 2D scenes with movable obstacles.

Propagation model per base station: a direct path with amplitude ``1/d``
attenuated by every obstacle the segment crosses, plus four first-order wall
images scaled by the reflection coefficient. Each path lands on tap
``floor(d / c * bandwidth + 0.5)`` with a phase given by its fractional delay.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 3e8
STATIC, MODIFIED = 0, 1
DATASET_MAGIC = b"CIRDS"
DATASET_VERSION = 1


class SceneError(ValueError):
    """Invalid or under-resolved scene."""


@dataclass(frozen=True)
class Obstacle:
    id: str
    x0: float
    y0: float
    x1: float
    y1: float
    attenuation: float = 0.3

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise SceneError(f"obstacle {self.id}: degenerate rectangle")
        if not 0.0 < self.attenuation <= 1.0:
            raise SceneError(f"obstacle {self.id}: attenuation must be in (0, 1]")

    @property
    def rect(self):
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class Scene:
    width: float = 20.0
    height: float = 20.0
    stations: tuple = ((0.5, 0.5), (19.5, 0.5), (0.5, 19.5), (19.5, 19.5), (10.0, 0.5), (10.0, 19.5))
    obstacles: tuple = ()
    reflection: float = 0.4
    bandwidth: float = 100e6
    n_taps: int = 64
    noise_std: float = 0.01
    min_distance: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(tuple(float(v) for v in s) for s in self.stations))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.width <= 0 or self.height <= 0:
            raise SceneError("room dimensions must be positive")
        if not self.stations:
            raise SceneError("scene needs at least one base station")
        for x, y in self.stations:
            if not (0 <= x <= self.width and 0 <= y <= self.height):
                raise SceneError(f"base station ({x}, {y}) outside room")
        if not 0.0 <= self.reflection < 1.0:
            raise SceneError("reflection coefficient must be in [0, 1)")
        if self.n_taps < 1:
            raise SceneError("n_taps must be >= 1")
        if self.noise_std < 0:
            raise SceneError("noise_std must be >= 0")
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate obstacle ids")
        # longest possible direct path must still fit in the tap window
        diag = math.hypot(self.width, self.height)
        if tap_index(diag, self.bandwidth) >= self.n_taps:
            raise SceneError(
                f"under-resolved scene: direct path of {diag:.1f} m needs more than {self.n_taps} taps"
            )

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_features(self) -> int:
        return 2 * self.n_stations * self.n_taps

    def obstacle(self, oid):
        for o in self.obstacles:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def contains(self, pos) -> bool:
        return 0.0 <= pos[0] <= self.width and 0.0 <= pos[1] <= self.height

    def to_dict(self):
        return {
            "width": self.width, "height": self.height,
            "stations": [list(s) for s in self.stations],
            "obstacles": [vars(o).copy() for o in self.obstacles],
            "reflection": self.reflection, "bandwidth": self.bandwidth,
            "n_taps": self.n_taps, "noise_std": self.noise_std,
            "min_distance": self.min_distance,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["obstacles"] = tuple(Obstacle(**o) for o in d.get("obstacles", ()))
        d["stations"] = tuple(tuple(s) for s in d.get("stations", cls.stations))
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def tap_index(distance, bandwidth):
    """Nearest tap (half rounds up) for a path of ``distance`` metres."""
    return np.floor(np.asarray(distance) / SPEED_OF_LIGHT * bandwidth + 0.5).astype(np.int64)


def segment_hits_rect(p, q, rect):
    """Liang-Barsky test: which segments ``p[i] -> q[i]`` touch ``rect``.

    ``p`` and ``q`` are (n, 2) arrays (or broadcastable); returns bool (n,).
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p, q = np.broadcast_arrays(p, q)
    x0, y0, x1, y1 = rect
    d = q - p
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    ok = np.ones(len(p), dtype=bool)
    for pk, qk in ((-d[:, 0], p[:, 0] - x0), (d[:, 0], x1 - p[:, 0]),
                   (-d[:, 1], p[:, 1] - y0), (d[:, 1], y1 - p[:, 1])):
        parallel = pk == 0
        ok &= ~(parallel & (qk < 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(parallel, 0.0, qk / np.where(parallel, 1.0, pk))
        enter = ~parallel & (pk < 0)
        leave = ~parallel & (pk > 0)
        t0 = np.where(enter, np.maximum(t0, r), t0)
        t1 = np.where(leave, np.minimum(t1, r), t1)
    return ok & (t0 <= t1)


def image_sources(scene: Scene):
    """First-order images of every station across the four walls, (B, 4, 2)."""
    s = np.asarray(scene.stations)
    imgs = np.empty((len(s), 4, 2))
    imgs[:, 0] = np.c_[-s[:, 0], s[:, 1]]
    imgs[:, 1] = np.c_[2 * scene.width - s[:, 0], s[:, 1]]
    imgs[:, 2] = np.c_[s[:, 0], -s[:, 1]]
    imgs[:, 3] = np.c_[s[:, 0], 2 * scene.height - s[:, 1]]
    return imgs


@dataclass
class CirSample:
    taps: np.ndarray          # complex (B, n_taps)
    position: np.ndarray      # (2,)
    region: int = STATIC
    id: int = 0


def noiseless_taps(scene: Scene, positions) -> np.ndarray:
    """Deterministic taps for a stack of positions, complex (k, B, n_taps)."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    k = len(pos)
    stations = np.asarray(scene.stations)
    B = len(stations)
    rel = stations[None, :, :] - pos[:, None, :]
    d_direct = np.hypot(rel[..., 0], rel[..., 1])
    if np.any(tap_index(d_direct, scene.bandwidth) >= scene.n_taps):
        raise SceneError("under-resolved scene: direct path beyond last tap")
    gain = np.ones((k, B))
    seg_p = np.broadcast_to(stations[None], (k, B, 2)).reshape(-1, 2)
    seg_q = np.broadcast_to(pos[:, None], (k, B, 2)).reshape(-1, 2)
    for ob in scene.obstacles:
        hit = segment_hits_rect(seg_p, seg_q, ob.rect).reshape(k, B)
        gain = np.where(hit, gain * ob.attenuation, gain)
    dists = [d_direct[..., None]]
    amps = [(gain / np.maximum(d_direct, scene.min_distance))[..., None]]
    if scene.reflection > 0:
        rel = image_sources(scene)[None] - pos[:, None, None, :]
        d_img = np.hypot(rel[..., 0], rel[..., 1])
        dists.append(d_img)
        amps.append(scene.reflection / np.maximum(d_img, scene.min_distance))
    h = np.zeros((k, B, scene.n_taps), dtype=complex)
    for d, a in zip(dists, amps):
        delay = d / SPEED_OF_LIGHT * scene.bandwidth
        n = tap_index(d, scene.bandwidth)
        keep = n < scene.n_taps
        ii, bb, _ = np.nonzero(keep)
        np.add.at(h, (ii, bb, n[keep]), (a * np.exp(-2j * np.pi * (delay - n)))[keep])
    return h


def _add_noise(scene: Scene, h, rng):
    scale = scene.noise_std / math.sqrt(2.0)
    return h + scale * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))


def synthesize_cir(scene: Scene, pos, rng=None, region=STATIC, sample_id=0) -> CirSample:
    """One fingerprint at ``pos``; circular Gaussian noise of total std ``noise_std``."""
    pos = np.asarray(pos, dtype=float)
    if not scene.contains(pos):
        raise SceneError(f"position {tuple(pos)} outside room")
    h = noiseless_taps(scene, pos)[0]
    if scene.noise_std > 0:
        if rng is None:
            raise ValueError("rng required when noise_std > 0")
        h = _add_noise(scene, h, rng)
    return CirSample(h, pos.copy(), region, sample_id)


def to_features(taps) -> np.ndarray:
    """[Re h_1, Im h_1, ..., Re h_B, Im h_B] scaled by its max-abs entry.

    Accepts one sample (B, n_taps) or a stack (k, B, n_taps); an all-zero
    sample stays all zeros.
    """
    taps = np.asarray(taps.taps if isinstance(taps, CirSample) else taps)
    single = taps.ndim == 2
    if single:
        taps = taps[None]
    k = taps.shape[0]
    feats = np.stack([taps.real, taps.imag], axis=2).reshape(k, -1)
    peak = np.abs(feats).max(axis=1, keepdims=True)
    feats = np.divide(feats, peak, out=np.zeros_like(feats), where=peak > 0)
    return feats[0] if single else feats


# --- domain changes -------------------------------------------------------

@dataclass(frozen=True)
class DomainChange:
    """Obstacle edits: ``{"op": "add", "obstacle": {...}}``,
    ``{"op": "remove", "id": ...}`` or ``{"op": "move", "id": ..., "to": [x0, y0, x1, y1]}``."""

    ops: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(dict(op) for op in self.ops))

    def to_list(self):
        return [dict(op) for op in self.ops]


@dataclass(frozen=True)
class RegionLabeler:
    rects: tuple = ()

    def label(self, positions) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        out = np.zeros(len(pos), dtype=np.int8)
        for x0, y0, x1, y1 in self.rects:
            inside = (pos[:, 0] >= x0) & (pos[:, 0] <= x1) & (pos[:, 1] >= y0) & (pos[:, 1] <= y1)
            out[inside] = MODIFIED
        return out

    __call__ = label

    def area_fraction(self, scene: Scene, resolution=400) -> float:
        """Fraction of the room covered by modified rectangles (midpoint grid)."""
        xs = (np.arange(resolution) + 0.5) / resolution * scene.width
        ys = (np.arange(resolution) + 0.5) / resolution * scene.height
        gx, gy = np.meshgrid(xs, ys)
        return float(self.label(np.c_[gx.ravel(), gy.ravel()]).mean())


def apply_change(scene: Scene, change: DomainChange):
    """Successor scene plus a labeler marking old and new footprints."""
    obstacles = {o.id: o for o in scene.obstacles}
    order = [o.id for o in scene.obstacles]
    rects = []
    for op in change.ops:
        kind = op.get("op")
        if kind == "add":
            ob = Obstacle(**op["obstacle"])
            if ob.id in obstacles:
                raise SceneError(f"add: obstacle {ob.id} already exists")
            obstacles[ob.id] = ob
            order.append(ob.id)
            rects.append(ob.rect)
        elif kind == "remove":
            oid = op.get("id")
            if oid not in obstacles:
                raise SceneError(f"remove: unknown obstacle {oid}")
            rects.append(obstacles.pop(oid).rect)
            order.remove(oid)
        elif kind == "move":
            oid = op.get("id")
            if oid not in obstacles:
                raise SceneError(f"move: unknown obstacle {oid}")
            to = op.get("to")
            if to is None or len(to) != 4:
                raise SceneError("move: 'to' must be [x0, y0, x1, y1]")
            old = obstacles[oid]
            new = replace(old, x0=float(to[0]), y0=float(to[1]), x1=float(to[2]), y1=float(to[3]))
            obstacles[oid] = new
            rects.extend([old.rect, new.rect])
        else:
            raise SceneError(f"malformed change op {op!r}")
    new_scene = replace(scene, obstacles=tuple(obstacles[i] for i in order))
    return new_scene, RegionLabeler(tuple(rects))


# --- trajectories and task datasets ---------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Correlated random walk with reflecting walls.

    Moves ``step`` metres per tick with the heading diffusing by ``turn_std``
    radians; one sample is recorded every ``stride`` ticks.
    """

    step: float = 0.05
    turn_std: float = 0.3
    stride: int = 20

    def positions(self, scene: Scene, k: int, rng) -> np.ndarray:
        start = np.array([rng.uniform(0, scene.width), rng.uniform(0, scene.height)])
        heading = rng.uniform(0, 2 * np.pi) + np.cumsum(rng.normal(0.0, self.turn_std, size=k * self.stride))
        free = start + self.step * np.cumsum(np.c_[np.cos(heading), np.sin(heading)], axis=0)
        # mirror-folding the unbounded walk == reflecting at the walls
        size = np.array([scene.width, scene.height])
        folded = size - np.abs(size - np.mod(free, 2 * size))
        return folded[self.stride - 1::self.stride].copy()


@dataclass
class TaskDataset:
    task_id: str
    positions: np.ndarray     # (k, 2)
    taps: np.ndarray          # complex (k, B, n_taps)
    regions: np.ndarray       # int8 (k,)
    train_idx: np.ndarray
    test_idx: np.ndarray
    scene_hash: str = ""
    _features: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> CirSample:
        return CirSample(self.taps[i], self.positions[i], int(self.regions[i]), int(i))

    @property
    def ids(self):
        return np.arange(len(self))

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = to_features(self.taps)
        return self._features

    def static_train(self):
        return self.train_idx[self.regions[self.train_idx] == STATIC]

    def modified_train(self):
        return self.train_idx[self.regions[self.train_idx] == MODIFIED]


def stratified_split(regions, test_fraction, rng):
    regions = np.asarray(regions)
    test = []
    for r in np.unique(regions):
        members = np.flatnonzero(regions == r)
        members = members[rng.permutation(len(members))]
        n_test = int(round(test_fraction * len(members)))
        if n_test == len(members) and len(regions) > 1:
            n_test -= 1
        test.extend(members[:n_test])
    test = np.sort(np.asarray(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(regions)), test)
    return train, test


def generate_task(scene: Scene, trajectory: Trajectory, k: int, seed: int,
                  labeler: RegionLabeler | None = None, task_id="T1",
                  test_fraction=0.2) -> TaskDataset:
    """Sample ``k`` fingerprints along a seeded walk; deterministic per seed.

    Noise for sample ``i`` comes from its own substream ``(seed, i)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    walk_rng = np.random.default_rng([seed, 0])
    positions = trajectory.positions(scene, k, walk_rng)
    regions = labeler.label(positions) if labeler else np.zeros(k, dtype=np.int8)
    taps = noiseless_taps(scene, positions)
    if scene.noise_std > 0:
        for i in range(k):
            taps[i] = _add_noise(scene, taps[i], np.random.default_rng([seed, 1, i]))
    train, test = stratified_split(regions, test_fraction, np.random.default_rng([seed, 2]))
    return TaskDataset(task_id, positions, taps, regions.astype(np.int8), train, test, scene.digest())


# --- dataset files ----------------------------------------------------------
# Layout (little-endian): magic b"CIRDS", u8 version, u32 header length,
# UTF-8 JSON header, then positions f8[k,2], regions u8[k], train idx i8[..],
# test idx i8[..], taps f8[k,B,n_taps,2] with re/im interleaved per tap.

def save_dataset(path, ds: TaskDataset):
    k, B, n_taps = ds.taps.shape
    header = json.dumps({
        "task_id": ds.task_id, "count": k, "n_stations": B, "n_taps": n_taps,
        "n_train": len(ds.train_idx), "n_test": len(ds.test_idx), "scene_hash": ds.scene_hash,
    }, sort_keys=True).encode()
    taps = np.stack([ds.taps.real, ds.taps.imag], axis=-1)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC + struct.pack("<BI", DATASET_VERSION, len(header)) + header)
        fh.write(np.ascontiguousarray(ds.positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.regions, dtype="u1").tobytes())
        fh.write(np.ascontiguousarray(ds.train_idx, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ds.test_idx, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(taps, dtype="<f8").tobytes())


def load_dataset(path) -> TaskDataset:
    raw = Path(path).read_bytes()
    if raw[:5] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a CIR dataset file")
    version, hlen = struct.unpack("<BI", raw[5:10])
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    meta = json.loads(raw[10:10 + hlen])
    off = 10 + hlen
    k, B, T = meta["count"], meta["n_stations"], meta["n_taps"]

    def take(dtype, count, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape)
        off += arr.nbytes
        return arr.copy()

    positions = take("<f8", 2 * k, (k, 2)).astype(np.float64)
    regions = take("u1", k, (k,)).astype(np.int8)
    train = take("<i8", meta["n_train"], (meta["n_train"],)).astype(np.int64)
    test = take("<i8", meta["n_test"], (meta["n_test"],)).astype(np.int64)
    pairs = take("<f8", k * B * T * 2, (k, B, T, 2)).astype(np.float64)
    return TaskDataset(meta["task_id"], positions, pairs[..., 0] + 1j * pairs[..., 1],
                       regions, train, test, meta["scene_hash"])


# --- scenarios ----------------------------------------------------------------

@dataclass
class TaskSpec:
    name: str
    seed: int
    count: int = 5000
    change: DomainChange = field(default_factory=DomainChange)


@dataclass
class Scenario:
    """Base scene plus an ordered task list; task ``i`` applies its change to task ``i-1``."""

    scene: Scene
    tasks: list
    trajectory: Trajectory = field(default_factory=Trajectory)

    def scenes(self):
        """Per task: (scene, labeler relative to the previous task)."""
        out = []
        scene = self.scene
        for i, t in enumerate(self.tasks):
            if i == 0:
                if t.change.ops:
                    scene, _ = apply_change(scene, t.change)
                out.append((scene, RegionLabeler()))
            else:
                scene, lab = apply_change(scene, t.change)
                out.append((scene, lab))
        return out

    def task_names(self):
        return [t.name for t in self.tasks]

    def generate(self, samples=None, names=None):
        """Datasets for all tasks (or the named subset), in scenario order."""
        out = {}
        for t, (scene, lab) in zip(self.tasks, self.scenes()):
            if names is not None and t.name not in names:
                continue
            out[t.name] = generate_task(scene, self.trajectory, samples or t.count, t.seed, lab, t.name)
        return out

    def to_dict(self):
        return {
            "version": 1,
            "scene": self.scene.to_dict(),
            "trajectory": vars(self.trajectory).copy(),
            "tasks": [{"name": t.name, "seed": t.seed, "count": t.count, "change": t.change.to_list()}
                      for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, d):
        tasks = [TaskSpec(t["name"], int(t["seed"]), int(t.get("count", 5000)),
                          DomainChange(tuple(t.get("change", ())))) for t in d["tasks"]]
        if len({t.name for t in tasks}) != len(tasks):
            raise SceneError("duplicate task names")
        return cls(Scene.from_dict(d["scene"]), tasks, Trajectory(**d.get("trajectory", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def default_scenario(count=5000, seed=100) -> Scenario:
    """Five-task desk scenario: three 'realistic' layouts then two absorber-wall layouts."""
    scene = Scene(obstacles=(
        Obstacle("crate", 4.0, 4.0, 7.0, 6.5, 0.3),
        Obstacle("shelf", 12.0, 3.0, 14.0, 7.0, 0.2),
        Obstacle("cart", 5.0, 13.0, 8.0, 15.5, 0.4),
        Obstacle("rack", 13.0, 13.0, 16.0, 16.0, 0.25),
    ))

    def ob(id_, x0, y0, x1, y1, a):
        return {"id": id_, "x0": x0, "y0": y0, "x1": x1, "y1": y1, "attenuation": a}

    tasks = [
        TaskSpec("T1", seed, count),
        TaskSpec("T2", seed + 1, count, DomainChange((
            {"op": "move", "id": "crate", "to": [4.0, 8.0, 7.0, 10.5]},
            {"op": "move", "id": "shelf", "to": [15.0, 3.0, 17.0, 7.0]},
            {"op": "add", "obstacle": ob("forklift", 9.0, 9.0, 11.5, 11.0, 0.35)},
        ))),
        TaskSpec("T3", seed + 2, count, DomainChange((
            {"op": "move", "id": "cart", "to": [2.0, 15.0, 5.0, 17.5]},
            {"op": "remove", "id": "forklift"},
        ))),
        TaskSpec("T4", seed + 3, count, DomainChange((
            {"op": "add", "obstacle": ob("absorber_a", 7.0, 2.0, 7.6, 9.0, 0.05)},
            {"op": "move", "id": "rack", "to": [12.0, 10.0, 15.0, 13.0]},
        ))),
        TaskSpec("T5", seed + 4, count, DomainChange((
            {"op": "add", "obstacle": ob("absorber_b", 12.0, 15.0, 18.0, 15.6, 0.05)},
            {"op": "move", "id": "crate", "to": [3.0, 10.0, 6.0, 12.5]},
        ))),
    ]
    return Scenario(scene, tasks)
