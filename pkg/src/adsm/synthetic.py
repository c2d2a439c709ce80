"""Synthetic multi-scene surveillance benchmark.

Each scene has its own background and its own set of legal motion directions.
Catalog objects (filled squares and discs in a few colours) drift inside the
frame and reflect off the borders. Test videos may contain three kinds of
injected events, each spanning a whole segment of frames:

* ``scene``: an object follows the motion pattern of a different scene;
* ``motion``: an object moves far faster than the scene's speed envelope;
* ``appearance``: a non-catalog object (a cross in a non-catalog colour) appears.

Every injected event is logged; frame labels are derived from the log only.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import ContractViolation
from .video import VideoSequence, stream

INJECTORS = ("scene", "motion", "appearance")

CATALOG_COLOURS = np.array([
    [0.95, 0.85, 0.20],
    [0.20, 0.80, 0.95],
    [0.95, 0.95, 0.95],
])
CATALOG_SHAPES = ("square", "disc")
FOREIGN_COLOUR = np.array([0.95, 0.10, 0.75])

# Legal unit directions per scene, cycled when there are more scenes.
SCENE_DIRECTIONS = (
    [(1.0, 0.0), (-1.0, 0.0)],
    [(0.0, 1.0), (0.0, -1.0)],
    [(0.7071, 0.7071), (-0.7071, -0.7071)],
    [(0.7071, -0.7071), (-0.7071, 0.7071)],
)


@dataclass
class SyntheticDatasetSpec:
    scenes: int = 2
    videos_per_scene: int = 5
    test_videos_per_scene: int | None = None
    frames: int = 64
    size: int = 32
    channels: int = 3
    objects: int = 2
    object_radius: tuple[int, int] = (3, 5)
    speed: tuple[float, float] = (0.5, 1.5)
    anomaly_speed: float = 5.0
    segment: int = 16
    anomaly_rates: tuple[float, float, float] = (0.1, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.anomaly_rates = tuple(float(r) for r in self.anomaly_rates)
        if len(self.anomaly_rates) != 3:
            raise ContractViolation("anomaly_rates needs (scene, motion, appearance)")
        if any(not 0.0 <= r <= 1.0 for r in self.anomaly_rates):
            raise ContractViolation(f"anomaly rates must lie in [0, 1], got {self.anomaly_rates}")
        if self.scenes < 1 or self.videos_per_scene < 1 or self.frames < 2:
            raise ContractViolation("need at least one scene, one video per scene and two frames")
        if self.channels not in (1, 3):
            raise ContractViolation("channels must be 1 or 3")
        if self.segment < 1:
            raise ContractViolation("segment length must be positive")

    @property
    def n_test(self) -> int:
        return self.videos_per_scene if self.test_videos_per_scene is None else self.test_videos_per_scene

    def to_dict(self) -> dict:
        d = asdict(self)
        d["object_radius"] = list(self.object_radius)
        d["speed"] = list(self.speed)
        d["anomaly_rates"] = list(self.anomaly_rates)
        return d


@dataclass
class AnomalyEvent:
    video_id: str
    injector: str
    start: int
    end: int   # exclusive


def scene_background(scene: int, size: int, channels: int) -> np.ndarray:
    rng = np.random.default_rng(1000 + scene)
    base = rng.uniform(0.15, 0.55, size=3)
    tilt = rng.uniform(-0.15, 0.15, size=(2, 3))
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    bg = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1]
    bg = np.clip(bg, 0.0, 1.0)
    if channels == 1:
        bg = bg.mean(axis=-1, keepdims=True)
    return bg


def _stamp(frame: np.ndarray, shape: str, cx: float, cy: float, r: int, colour: np.ndarray) -> None:
    H, W, c = frame.shape
    yy, xx = np.mgrid[0:H, 0:W]
    if shape == "square":
        mask = (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
    elif shape == "disc":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    else:  # cross
        arm = max(1, r // 3)
        mask = ((np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= arm)) | ((np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= arm))
    col = colour if c == 3 else colour.mean(keepdims=True)
    frame[mask] = col


class _Mover:
    def __init__(self, rng, size, radius, direction, speed, shape, colour):
        self.r = radius
        lo, hi = radius, size - 1 - radius
        self.lo, self.hi = lo, hi
        self.pos = rng.uniform(lo, hi, size=2)
        self.dir = np.array(direction, dtype=np.float64)
        self.speed = speed
        self.shape = shape
        self.colour = colour

    def step(self, direction=None, speed=None):
        v = (self.dir if direction is None else np.asarray(direction)) * (self.speed if speed is None else speed)
        p = self.pos + v
        for k in range(2):
            if p[k] < self.lo:
                p[k] = 2 * self.lo - p[k]
                self._flip(k, direction)
            elif p[k] > self.hi:
                p[k] = 2 * self.hi - p[k]
                self._flip(k, direction)
        self.pos = np.clip(p, self.lo, self.hi)

    def _flip(self, k, override):
        target = self.dir if override is None else override
        target[k] = -target[k]


def _directions(scene: int):
    return SCENE_DIRECTIONS[scene % len(SCENE_DIRECTIONS)]


def _render_video(spec: SyntheticDatasetSpec, scene: int, rng: np.random.Generator, events: list[tuple[str, int, int]]):
    size, c = spec.size, spec.channels
    bg = scene_background(scene, size, c)
    movers = []
    for _ in range(spec.objects):
        dirs = _directions(scene)
        movers.append(_Mover(
            rng, size,
            int(rng.integers(spec.object_radius[0], spec.object_radius[1] + 1)),
            dirs[int(rng.integers(len(dirs)))],
            float(rng.uniform(*spec.speed)),
            CATALOG_SHAPES[int(rng.integers(len(CATALOG_SHAPES)))],
            CATALOG_COLOURS[int(rng.integers(len(CATALOG_COLOURS)))],
        ))
    # Per-event parameters are drawn up front so rendering stays a pure replay.
    plans = []
    for kind, start, end in events:
        if kind == "scene":
            pool = range(spec.scenes) if spec.scenes > 1 else range(len(SCENE_DIRECTIONS))
            others = [s for s in pool if _directions(s) != _directions(scene)]
            alien = _directions(others[int(rng.integers(len(others)))])
            plans.append((kind, start, end, {"dir": np.array(alien[int(rng.integers(len(alien)))], dtype=np.float64),
                                             "obj": int(rng.integers(len(movers)))}))
        elif kind == "motion":
            plans.append((kind, start, end, {"obj": int(rng.integers(len(movers)))}))
        else:
            r = int(rng.integers(spec.object_radius[0] + 1, spec.object_radius[1] + 2))
            dirs = _directions(scene)
            plans.append((kind, start, end, {"mover": _Mover(rng, size, r, dirs[int(rng.integers(len(dirs)))],
                                                             float(rng.uniform(*spec.speed)), "cross", FOREIGN_COLOUR)}))
    frames = np.empty((spec.frames, size, size, c), dtype=np.float32)
    for t in range(spec.frames):
        frame = bg.copy()
        override = {}
        extras = []
        for kind, start, end, p in plans:
            if not start <= t < end:
                continue
            if kind == "scene":
                override[p["obj"]] = (p["dir"], None)
            elif kind == "motion":
                prev = override.get(p["obj"], (None, None))[0]
                override[p["obj"]] = (prev, spec.anomaly_speed)
            else:
                extras.append(p["mover"])
        for k, m in enumerate(movers):
            _stamp(frame, m.shape, m.pos[0], m.pos[1], m.r, m.colour)
        for m in extras:
            _stamp(frame, m.shape, m.pos[0], m.pos[1], m.r, m.colour)
        frames[t] = frame
        for k, m in enumerate(movers):
            d, s = override.get(k, (None, None))
            m.step(d, s)
        for m in extras:
            m.step()
    return frames


def plan_events(spec: SyntheticDatasetSpec, rng: np.random.Generator) -> list[tuple[str, int, int]]:
    """Decide which injectors fire on which segments of one test video."""
    events = []
    for start in range(0, spec.frames, spec.segment):
        end = min(start + spec.segment, spec.frames)
        for kind, rate in zip(INJECTORS, spec.anomaly_rates):
            if rng.uniform() < rate:
                events.append((kind, start, end))
    return events


def labels_from_events(frames: int, events) -> np.ndarray:
    labels = np.zeros(frames, dtype=np.int64)
    for ev in events:
        start, end = (ev.start, ev.end) if isinstance(ev, AnomalyEvent) else (ev[1], ev[2])
        labels[start:end] = 1
    return labels


def generate_synthetic_dataset(spec: SyntheticDatasetSpec):
    """Return ``(train, test, events)``; ``events`` is the injector log."""
    train, test, log = [], [], []
    for scene in range(spec.scenes):
        for k in range(spec.videos_per_scene):
            vid = f"train_s{scene}_v{k:03d}"
            rng = stream(spec.seed, vid)
            frames = _render_video(spec, scene, rng, [])
            train.append(VideoSequence(frames, scene, np.zeros(spec.frames, dtype=np.int64), vid))
    for scene in range(spec.scenes):
        for k in range(spec.n_test):
            vid = f"test_s{scene}_v{k:03d}"
            rng = stream(spec.seed, vid)
            events = plan_events(spec, rng)
            frames = _render_video(spec, scene, rng, events)
            evs = [AnomalyEvent(vid, kind, s, e) for kind, s, e in events]
            log.extend(evs)
            test.append(VideoSequence(frames, scene, labels_from_events(spec.frames, evs), vid))
    return train, test, log
