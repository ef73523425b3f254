"""Propagation of detection deviations into trajectory prediction.

Obstacle position histories are perturbed with one of three patterns
(every k-th frame, every frame, or one frame replaced by its predecessor),
a predictor is run on the clean and perturbed histories, and the two
predicted trajectories are compared per axis with ADE/FDE.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInput, InsufficientHistory, LengthMismatch, PatternOutOfRange, ValidationError
from .metrics import QuartileStats, deviation_quartiles
from .pcd_io import Track

FIT_WINDOW = 8
LANE_MARGIN = 1.0  # m between a lane-centered car's side and the lane line


class PatternKind(str, enum.Enum):
    INTERVAL = "interval"
    ALL = "all"
    REMOVE_ONCE = "remove-once"


@dataclass(frozen=True)
class PerturbationPattern:
    """How a position offset is injected into a track.

    ``frame=None`` for RemoveOnce means the last observed frame.
    """

    kind: PatternKind
    offset: tuple[float, float] = (0.0, 0.0)
    k: int = 3
    phase: int = 0
    frame: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        object.__setattr__(self, "offset", (float(self.offset[0]), float(self.offset[1])))
        if self.k < 1:
            raise ValidationError("interval k must be >= 1")

    @property
    def name(self) -> str:
        return self.kind.value

    def with_offset(self, dx: float, dy: float) -> "PerturbationPattern":
        return replace(self, offset=(dx, dy))


def parse_patterns(text: str) -> list[PerturbationPattern]:
    """Parse a comma list such as ``"interval,all,remove-once"``."""
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower().replace("_", "-")
        if tok == "removeonce":
            tok = "remove-once"
        try:
            out.append(PerturbationPattern(PatternKind(tok)))
        except ValueError as exc:
            raise ValidationError(f"unknown pattern {tok!r}") from exc
    return out


def apply_pattern(track: Track, pattern: PerturbationPattern) -> Track:
    """Return a perturbed copy of ``track``; timestamps are never altered."""
    samples = np.array(track.samples)
    n = len(samples)
    if pattern.kind is PatternKind.REMOVE_ONCE:
        frame = n - 1 if pattern.frame is None else pattern.frame
        if n < 2 or not 1 <= frame < n:
            raise PatternOutOfRange(f"remove-once frame {frame} invalid for a {n}-sample track")
        samples[frame, 1:] = samples[frame - 1, 1:]
    else:
        if pattern.kind is PatternKind.ALL:
            rows = np.arange(n)
        else:
            if not 0 <= pattern.phase < max(n, 1):
                raise PatternOutOfRange(f"interval phase {pattern.phase} outside a {n}-sample track")
            rows = np.arange(pattern.phase % pattern.k, n, pattern.k)
        samples[rows, 1] += pattern.offset[0]
        samples[rows, 2] += pattern.offset[1]
    return Track(track.obstacle_id, samples, track.cls)


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    horizon: float
    samples: np.ndarray  # (m, 3): t, x, y
    obstacle_id: int = 0

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64).reshape(-1, 3)
        if np.any(np.diff(s[:, 0]) <= 0):
            raise ValidationError("predicted timestamps must be strictly increasing")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return len(self.samples)


Predictor = Callable[[Track, float, float], PredictedTrajectory]


def predict_constant_velocity(history: Track, horizon: float, dt: float) -> PredictedTrajectory:
    """Least-squares constant-velocity extrapolation.

    Velocity and position come from a per-axis linear fit over the last
    ``min(8, len(history))`` samples; predictions are made every ``dt``
    seconds after the last observation, up to ``horizon``.
    """
    if len(history) < 2:
        raise InsufficientHistory("constant-velocity prediction needs at least 2 samples")
    if not (dt > 0 and horizon >= dt):
        raise ValueError("need dt > 0 and horizon >= dt")
    win = history.samples[-FIT_WINDOW:]
    t = win[:, 0]
    t_mean = t.mean()
    tc = t - t_mean
    xy = win[:, 1:]
    xy_mean = xy.mean(axis=0)
    slope = tc @ (xy - xy_mean) / (tc @ tc)
    steps = int(np.floor(horizon / dt + 1e-9))
    t_pred = t[-1] + dt * np.arange(1, steps + 1)
    pos = xy_mean + np.outer(t_pred - t_mean, slope)
    return PredictedTrajectory(horizon, np.column_stack([t_pred, pos]), history.obstacle_id)


@dataclass(frozen=True)
class DisplacementScores:
    ade_x: float
    ade_y: float
    fde_x: float
    fde_y: float

    @property
    def max_error(self) -> float:
        return max(self.ade_x, self.ade_y, self.fde_x, self.fde_y)


def displacement_scores(baseline: PredictedTrajectory, deviated: PredictedTrajectory) -> DisplacementScores:
    """Per-axis RMSE over all samples (ADE) and absolute final error (FDE)."""
    a, b = baseline.samples, deviated.samples
    if len(a) != len(b) or not np.array_equal(a[:, 0], b[:, 0]):
        raise LengthMismatch("trajectories must share sample count and timestamps")
    if len(a) == 0:
        raise LengthMismatch("trajectories are empty")
    d = b[:, 1:] - a[:, 1:]
    ade = np.sqrt(np.mean(d * d, axis=0))
    fde = np.abs(d[-1])
    return DisplacementScores(float(ade[0]), float(ade[1]), float(fde[0]), float(fde[1]))


# ---------------------------------------------------------------------------
# stat points


@dataclass(frozen=True)
class StatPoint:
    """A named (dx, dy) offset taken from the observed deviation distribution."""

    name: str
    dx: float
    dy: float


_STAT_FIELDS = (
    ("Q1", "q1"),
    ("median", "median"),
    ("Q3", "q3"),
    ("UF", "uf"),
    ("LF", "lf"),
    ("outlier min", "outlier_min"),
    ("outlier median", "outlier_median"),
    ("outlier max", "outlier_max"),
)


def stat_points(dev_x: Sequence[float], dev_y: Sequence[float]) -> tuple[list[StatPoint], dict[str, QuartileStats]]:
    """Offsets for every quartile/fence/outlier statistic of both axes.

    For the row of a statistic on axis ``a``, the ``a`` component is the
    statistic itself and the other component is taken from the observed
    deviation pair whose ``a`` value is closest to it (lowest index on ties).
    A baseline row of zeros comes first; rows whose statistic is undefined
    (no outliers) are omitted.
    """
    xs = np.asarray(dev_x, dtype=np.float64)
    ys = np.asarray(dev_y, dtype=np.float64)
    if xs.shape != ys.shape:
        raise LengthMismatch("x and y deviations must pair up")
    if xs.size == 0:
        raise EmptyInput("no deviations")
    stats = {"x": deviation_quartiles(xs), "y": deviation_quartiles(ys)}
    rows = [StatPoint("baseline", 0.0, 0.0)]
    for axis, own, other in (("x", xs, ys), ("y", ys, xs)):
        for label, attr in _STAT_FIELDS:
            value = getattr(stats[axis], attr)
            if value is None:
                continue
            partner = float(other[int(np.argmin(np.abs(own - value)))])
            dx, dy = (value, partner) if axis == "x" else (partner, value)
            rows.append(StatPoint(f"{axis} {label}", dx, dy))
    return rows, stats


# ---------------------------------------------------------------------------
# cascade table


@dataclass(frozen=True)
class CascadeCell:
    obstacle_id: int
    stat: str
    pattern: str
    scores: DisplacementScores


@dataclass(frozen=True)
class CascadeTable:
    """Mean ADE/FDE over tracks for every (stat point, pattern) pair."""

    stats: tuple[StatPoint, ...]
    patterns: tuple[str, ...]
    means: dict  # (stat name, pattern name) -> DisplacementScores
    cells: tuple[CascadeCell, ...]

    def row(self, stat: str, pattern: str) -> DisplacementScores:
        return self.means[(stat, pattern)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["stat", "offset_x", "offset_y"]
        for p in self.patterns:
            header += [f"{p}_ade_x", f"{p}_fde_x", f"{p}_ade_y", f"{p}_fde_y"]
        header.append("exceeds_1m_margin")
        w.writerow(header)
        for sp in self.stats:
            line = [sp.name, repr(sp.dx), repr(sp.dy)]
            worst = 0.0
            for p in self.patterns:
                s = self.means[(sp.name, p)]
                line += [repr(s.ade_x), repr(s.fde_x), repr(s.ade_y), repr(s.fde_y)]
                worst = max(worst, s.max_error)
            line.append(str(worst > LANE_MARGIN).lower())
            w.writerow(line)
        return buf.getvalue()


def run_cascade(
    tracks: Sequence[Track],
    stats: Sequence[StatPoint],
    patterns: Sequence[PerturbationPattern],
    predictor: Predictor = predict_constant_velocity,
    horizon: float = 1.0,
    dt: float = 0.1,
) -> CascadeTable:
    """Score every (track, stat point, pattern) combination.

    Each pattern's offset is replaced by the stat point's (dx, dy).  Cell
    order is (track, stat, pattern); table entries are means over tracks.
    """
    if not tracks:
        raise EmptyInput("no tracks")
    baselines = [predictor(tr, horizon, dt) for tr in tracks]
    names = tuple(p.name for p in patterns)
    if len(set(names)) != len(names):
        raise ValidationError("patterns must be distinct kinds")
    cells = []
    for tr, base in zip(tracks, baselines):
        for sp in stats:
            for pat in patterns:
                deviated = predictor(apply_pattern(tr, pat.with_offset(sp.dx, sp.dy)), horizon, dt)
                cells.append(CascadeCell(tr.obstacle_id, sp.name, pat.name, displacement_scores(base, deviated)))
    means = {}
    for sp in stats:
        for name in names:
            sel = [c.scores for c in cells if c.stat == sp.name and c.pattern == name]
            means[(sp.name, name)] = DisplacementScores(
                *(float(np.mean([getattr(s, f) for s in sel])) for f in ("ade_x", "ade_y", "fde_x", "fde_y"))
            )
    return CascadeTable(tuple(stats), names, means, tuple(cells))


def format_trajectories(trajs: Sequence[PredictedTrajectory]) -> str:
    """Predicted-trajectory exchange CSV: obstacle_id,t,x,y."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["obstacle_id", "t", "x", "y"])
    for tr in trajs:
        for t, x, y in tr.samples:
            w.writerow([tr.obstacle_id, repr(float(t)), repr(float(x)), repr(float(y))])
    return buf.getvalue()


def parse_trajectories(text: str, horizon: float = 0.0) -> list[PredictedTrajectory]:
    from .pcd_io import parse_tracks

    return [PredictedTrajectory(horizon, tr.samples, tr.obstacle_id) for tr in parse_tracks(text)]
