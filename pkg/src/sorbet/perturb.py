"""Seeded generation and application of subtle LiDAR point-cloud perturbations.

Seven perturbation kinds are supported: range inaccuracy (global, local to
obstacles, directional), false-positive point removal, reflectivity
decrease/increase and distance-amplified range inaccuracy.  Every kind is a
pure function of ``(cloud, boxes, spec)``; all randomness comes from a
``numpy.random.Generator`` seeded with ``spec.seed``.

Displacements are enforced on the stored float32 coordinates, so the
distance between an original and a perturbed point never exceeds the bound,
even after rounding.
"""
from __future__ import annotations

import bisect
import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Box3D, camera_box_to_lidar, points_in_box_mask
from .pcd_io import Calibration, GroundTruthLabel, PointCloud

DEFAULT_BOUND = 0.02
DEFAULT_REMOVAL_RATE = 1e-4
DEFAULT_DECREASE = 0.60
DEFAULT_INCREASE = 0.67

# float64 slack under the bound so any reasonable norm computation stays <= bound
_BOUND_SLACK = 1e-9


class Kind(str, enum.Enum):
    RANGE_GLOBAL = "RangeGlobal"
    RANGE_LOCAL = "RangeLocal"
    RANGE_DIRECTIONAL = "RangeDirectional"
    FALSE_POSITIVE = "FalsePositive"
    REFLECTIVITY_DECREASE = "ReflectivityDecrease"
    REFLECTIVITY_INCREASE = "ReflectivityIncrease"
    DISTANCE_AMPLIFIED = "DistanceAmplified"


RANGE_KINDS = frozenset({Kind.RANGE_GLOBAL, Kind.RANGE_LOCAL, Kind.RANGE_DIRECTIONAL, Kind.DISTANCE_AMPLIFIED})


class Distribution(str, enum.Enum):
    UNIFORM = "Uniform"
    GAUSSIAN = "Gaussian"
    LAPLACIAN = "Laplacian"


class Direction(str, enum.Enum):
    PX = "+x"
    NX = "-x"
    PY = "+y"
    NY = "-y"
    PZ = "+z"
    NZ = "-z"

    @property
    def axis(self) -> int:
        return "xyz".index(self.value[1])

    @property
    def sign(self) -> float:
        return 1.0 if self.value[0] == "+" else -1.0


class Scope(str, enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class PerturbationSpec:
    kind: Kind
    seed: int = 0
    distribution: Distribution | None = None
    direction: Direction | None = None
    scope: Scope | None = None
    bound: float = DEFAULT_BOUND
    removal_rate: float = DEFAULT_REMOVAL_RATE
    decrease_fraction: float = DEFAULT_DECREASE
    increase_fraction: float = DEFAULT_INCREASE

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        for name, typ in (("distribution", Distribution), ("direction", Direction), ("scope", Scope)):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, typ(val))
        if not self.bound > 0:
            raise ValidationError("bound must be > 0")
        if not 0 < self.removal_rate < 1:
            raise ValidationError("removal_rate must lie in (0, 1)")
        for name in ("decrease_fraction", "increase_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValidationError(f"{name} must lie in (0, 1)")
        if (self.direction is not None) != (self.kind is Kind.RANGE_DIRECTIONAL):
            raise ValidationError("direction is required for RangeDirectional and only there")
        if (self.distribution is not None) != (self.kind in RANGE_KINDS):
            raise ValidationError(f"distribution is required for range kinds only, not {self.kind.value}")
        if self.kind is Kind.DISTANCE_AMPLIFIED and self.distribution is not Distribution.UNIFORM:
            raise ValidationError("DistanceAmplified supports the Uniform distribution only")
        if self.kind is Kind.FALSE_POSITIVE:
            if self.scope is None:
                object.__setattr__(self, "scope", Scope.GLOBAL)
        elif self.scope is not None:
            raise ValidationError("scope applies to FalsePositive only")
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.value if isinstance(v, enum.Enum) else v
        return out


@dataclass(frozen=True)
class DistancePrecisionProfile:
    """Step function from planar obstacle range (m) to a bound multiplier.

    ``breakpoints[i] = (r_i, s_i)`` means scale ``s_i`` applies for
    ``r_i <= r < r_{i+1}``; the last scale applies beyond the last breakpoint
    and the first one below the first breakpoint.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bps = tuple((float(r), float(s)) for r, s in self.breakpoints)
        if not bps:
            raise ValidationError("profile needs at least one breakpoint")
        ranges = [r for r, _ in bps]
        if any(b <= a for a, b in zip(ranges, ranges[1:])):
            raise ValidationError("profile ranges must be strictly increasing")
        if any(not s > 0 for _, s in bps):
            raise ValidationError("profile scales must be positive")
        object.__setattr__(self, "breakpoints", bps)

    def scale(self, distance: float) -> float:
        ranges = [r for r, _ in self.breakpoints]
        i = max(bisect.bisect_right(ranges, distance) - 1, 0)
        return self.breakpoints[i][1]


# Shaped after precision that degrades with range; configurable defaults.
DEFAULT_PROFILE = DistancePrecisionProfile(((0.0, 0.35), (10.0, 0.5), (30.0, 1.0), (60.0, 2.5)))


@dataclass(frozen=True, eq=False)
class PerturbationOutcome:
    cloud: PointCloud
    moved: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    removed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    added_count: int = 0
    max_shift: float = 0.0

    def summary(self) -> dict:
        return {
            "moved": int(len(self.moved)),
            "removed": int(len(self.removed)),
            "added": int(self.added_count),
            "max_shift": float(self.max_shift),
            "points": int(len(self.cloud)),
        }


# ---------------------------------------------------------------------------
# sampling


def _axes_indices(axes) -> list[int]:
    idx = sorted({"xyz".index(a) for a in axes})
    if not idx:
        raise ValueError("at least one axis is required")
    return idx


def _unit_draws(distribution: Distribution, rng: np.random.Generator, shape) -> np.ndarray:
    distribution = Distribution(distribution)
    if distribution is Distribution.UNIFORM:
        return rng.uniform(-1.0, 1.0, size=shape)
    if distribution is Distribution.GAUSSIAN:
        return rng.normal(0.0, 1.0 / 3.0, size=shape)
    return rng.laplace(0.0, 1.0 / 3.0, size=shape)


def _unit_offsets(distribution, rng, n: int, axes) -> np.ndarray:
    """(n, 3) offsets with norm <= 1 on the requested axes, zero elsewhere."""
    cols = _axes_indices(axes)
    out = np.zeros((n, 3))
    draws = _unit_draws(distribution, rng, (n, len(cols)))
    norm = np.sqrt(np.einsum("ij,ij->i", draws, draws))
    over = norm > 1.0
    draws[over] /= norm[over, None]
    out[:, cols] = draws
    return out


def sample_offset(distribution, bound: float, rng: np.random.Generator, axes="xyz", size: int | None = None) -> np.ndarray:
    """Draw offsets whose Euclidean norm never exceeds ``bound``.

    Uniform draws are over [-bound, bound] per axis; Gaussian and Laplacian
    use scale ``bound / 3``.  Over-long vectors are rescaled onto the sphere
    of radius ``bound``.  Axes not listed in ``axes`` are zero.  Returns a
    (3,) vector, or (size, 3) when ``size`` is given.
    """
    if not bound > 0:
        raise ValueError("bound must be > 0")
    out = _unit_offsets(distribution, rng, 1 if size is None else size, axes) * bound
    # rescaled vectors can overshoot by an ulp; shrink those until exact
    over = np.flatnonzero(np.linalg.norm(out, axis=1) > bound)
    while len(over):
        out[over] *= 1.0 - 2.0**-52
        over = over[np.linalg.norm(out[over], axis=1) > bound]
    return out[0] if size is None else out


def _pull_within(orig: np.ndarray, new: np.ndarray, bound) -> np.ndarray:
    """Step float32 coordinates toward ``orig`` until the shift is <= bound."""
    limit = np.broadcast_to(np.asarray(bound, dtype=np.float64) * (1 - _BOUND_SLACK), (len(orig),))
    orig64 = orig.astype(np.float64)
    bad = np.flatnonzero(np.linalg.norm(new.astype(np.float64) - orig64, axis=1) > limit)
    while len(bad):
        new[bad] = np.nextafter(new[bad], orig[bad])
        d = np.linalg.norm(new[bad].astype(np.float64) - orig64[bad], axis=1)
        bad = bad[d > limit[bad]]
    return new


def _shift(cloud: PointCloud, idx: np.ndarray, offsets: np.ndarray, bound) -> PerturbationOutcome:
    pts = cloud.points.copy()
    if len(idx) == 0:
        return PerturbationOutcome(PointCloud(pts, cloud.frame_id))
    orig = pts[idx, :3]
    moved = (orig.astype(np.float64) + offsets).astype(np.float32)
    moved = _pull_within(orig, moved, bound)
    pts[idx, :3] = moved
    shift = np.linalg.norm(moved.astype(np.float64) - orig.astype(np.float64), axis=1)
    return PerturbationOutcome(PointCloud(pts, cloud.frame_id), moved=idx, max_shift=float(shift.max()))


def _rng(spec: PerturbationSpec) -> np.random.Generator:
    return np.random.default_rng(spec.seed)


def _check_kind(spec: PerturbationSpec, *kinds: Kind) -> None:
    if spec.kind not in kinds:
        raise ValidationError(f"expected a {'/'.join(k.value for k in kinds)} spec, got {spec.kind.value}")


# ---------------------------------------------------------------------------
# obstacle membership


def box_ownership(cloud: PointCloud, boxes: Sequence[Box3D]) -> list[np.ndarray]:
    """In-box point indices per box; a point inside several boxes belongs to the first."""
    taken = np.zeros(len(cloud), dtype=bool)
    owned = []
    for box in boxes:
        mask = points_in_box_mask(cloud, box) & ~taken
        taken |= mask
        owned.append(np.flatnonzero(mask))
    return owned


def _union(owned: Sequence[np.ndarray]) -> np.ndarray:
    if not owned:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(owned)).astype(np.int64)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# perturbation kinds


def perturb_range_global(cloud: PointCloud, spec: PerturbationSpec) -> PerturbationOutcome:
    """Shift x and y of every point by an independent bounded offset."""
    _check_kind(spec, Kind.RANGE_GLOBAL)
    idx = np.arange(len(cloud), dtype=np.int64)
    offsets = _unit_offsets(spec.distribution, _rng(spec), len(idx), "xy") * spec.bound
    return _shift(cloud, idx, offsets, spec.bound)


def _range_local(cloud, owned, spec, bounds=None):
    idx = _union(owned)
    unit = _unit_offsets(spec.distribution, _rng(spec), len(idx), "xyz")
    if bounds is None:
        bounds = spec.bound
    return _shift(cloud, idx, unit * np.reshape(bounds, (-1, 1)), bounds)


def perturb_range_local(cloud: PointCloud, boxes: Sequence[Box3D], spec: PerturbationSpec) -> PerturbationOutcome:
    """Shift x, y and z of the points inside any of ``boxes``."""
    _check_kind(spec, Kind.RANGE_LOCAL)
    return _range_local(cloud, box_ownership(cloud, boxes), spec)


def _range_directional(cloud, owned, spec):
    idx = _union(owned)
    mag = np.minimum(np.abs(_unit_draws(spec.distribution, _rng(spec), len(idx))), 1.0)
    offsets = np.zeros((len(idx), 3))
    offsets[:, spec.direction.axis] = spec.direction.sign * mag * spec.bound
    return _shift(cloud, idx, offsets, spec.bound)


def perturb_range_directional(cloud: PointCloud, boxes: Sequence[Box3D], spec: PerturbationSpec) -> PerturbationOutcome:
    """Move in-box points along one signed axis by a folded, bounded magnitude."""
    _check_kind(spec, Kind.RANGE_DIRECTIONAL)
    return _range_directional(cloud, box_ownership(cloud, boxes), spec)


def _drop(cloud: PointCloud, removed: np.ndarray) -> PerturbationOutcome:
    keep = np.ones(len(cloud), dtype=bool)
    keep[removed] = False
    return PerturbationOutcome(PointCloud(cloud.points[keep], cloud.frame_id), removed=removed)


def _false_positive(cloud, owned, spec):
    if spec.scope is Scope.LOCAL:
        scope = _union(owned if owned is not None else [])
    else:
        scope = np.arange(len(cloud), dtype=np.int64)
    hits = _rng(spec).random(len(scope)) < spec.removal_rate
    return _drop(cloud, scope[hits])


def perturb_false_positive(cloud: PointCloud, boxes: Sequence[Box3D] | None, spec: PerturbationSpec) -> PerturbationOutcome:
    """Remove each in-scope point independently with probability ``removal_rate``.

    Scope is the whole cloud for ``Scope.GLOBAL`` and the in-box points for
    ``Scope.LOCAL``.
    """
    _check_kind(spec, Kind.FALSE_POSITIVE)
    owned = box_ownership(cloud, boxes) if spec.scope is Scope.LOCAL and boxes else None
    return _false_positive(cloud, owned, spec)


def _reflectivity_decrease(cloud, owned, spec):
    rng = _rng(spec)
    removed = []
    for pts in owned:
        n = _round_half_up(spec.decrease_fraction * len(pts))
        if n:
            removed.append(rng.choice(pts, size=n, replace=False))
    return _drop(cloud, _union(removed))


def _reflectivity_increase(cloud, owned, spec, boxes):
    rng = _rng(spec)
    extra = []
    for pts, box in zip(owned, boxes):
        k = len(pts)
        n = _round_half_up(spec.increase_fraction * k)
        if k == 0 or n == 0:
            continue
        src = cloud.points[pts[rng.integers(0, k, size=n)]]
        jitter = _unit_offsets(Distribution.UNIFORM, rng, n, "xyz") * spec.bound
        new = src.copy()
        xyz = (src[:, :3].astype(np.float64) + jitter).astype(np.float32)
        new[:, :3] = _pull_within(src[:, :3], xyz, spec.bound)
        # keep synthesized points on the obstacle
        outside = ~points_in_box_mask(new, box)
        new[outside] = src[outside]
        extra.append(new)
    if not extra:
        return PerturbationOutcome(PointCloud(cloud.points, cloud.frame_id))
    added = np.concatenate(extra)
    return PerturbationOutcome(
        PointCloud(np.concatenate([cloud.points, added]), cloud.frame_id), added_count=len(added)
    )


def perturb_reflectivity(cloud: PointCloud, boxes: Sequence[Box3D], spec: PerturbationSpec) -> PerturbationOutcome:
    """Remove or synthesize a fixed fraction of each obstacle's points.

    Decrease removes ``round(decrease_fraction * k)`` of the ``k`` in-box
    points of every box.  Increase appends ``round(increase_fraction * k)``
    copies of randomly chosen in-box points, each jittered by a uniform offset
    of norm <= ``bound`` (the copy is kept unjittered if the jitter would
    leave the box).  Rounding is half-up.
    """
    _check_kind(spec, Kind.REFLECTIVITY_DECREASE, Kind.REFLECTIVITY_INCREASE)
    owned = box_ownership(cloud, boxes)
    if spec.kind is Kind.REFLECTIVITY_DECREASE:
        return _reflectivity_decrease(cloud, owned, spec)
    return _reflectivity_increase(cloud, owned, spec, boxes)


def _distance_bounds(owned, boxes, spec, profile):
    per_box = [np.full(len(pts), spec.bound * profile.scale(box.planar_range)) for pts, box in zip(owned, boxes)]
    if not per_box:
        return np.zeros(0)
    idx = np.concatenate(owned)
    bounds = np.concatenate(per_box)
    return bounds[np.argsort(idx, kind="stable")]


def _distance_amplified(cloud, owned, boxes, spec, profile):
    return _range_local(cloud, owned, spec, _distance_bounds(owned, boxes, spec, profile))


def perturb_distance_amplified(
    cloud: PointCloud,
    boxes: Sequence[Box3D],
    spec: PerturbationSpec,
    profile: DistancePrecisionProfile = DEFAULT_PROFILE,
) -> PerturbationOutcome:
    """Local range inaccuracy whose bound is scaled by each obstacle's range."""
    _check_kind(spec, Kind.DISTANCE_AMPLIFIED)
    return _distance_amplified(cloud, box_ownership(cloud, boxes), boxes, spec, profile)


def _apply_owned(cloud, boxes, owned, spec, profile):
    kind = spec.kind
    if kind is Kind.RANGE_GLOBAL:
        return perturb_range_global(cloud, spec)
    if kind is Kind.RANGE_LOCAL:
        return _range_local(cloud, owned, spec)
    if kind is Kind.RANGE_DIRECTIONAL:
        return _range_directional(cloud, owned, spec)
    if kind is Kind.FALSE_POSITIVE:
        return _false_positive(cloud, owned, spec)
    if kind is Kind.REFLECTIVITY_DECREASE:
        return _reflectivity_decrease(cloud, owned, spec)
    if kind is Kind.REFLECTIVITY_INCREASE:
        return _reflectivity_increase(cloud, owned, spec, boxes)
    return _distance_amplified(cloud, owned, boxes, spec, profile)


def apply_perturbation(
    cloud: PointCloud,
    spec: PerturbationSpec,
    boxes: Sequence[Box3D] = (),
    profile: DistancePrecisionProfile = DEFAULT_PROFILE,
) -> PerturbationOutcome:
    """Dispatch ``spec`` to the matching perturbation function."""
    boxes = list(boxes)
    return _apply_owned(cloud, boxes, box_ownership(cloud, boxes), spec, profile)


# ---------------------------------------------------------------------------
# suites


def variant_seed(master_seed: int, frame_id: str, kind, distribution=None, direction=None, scope=None) -> int:
    """Stable 64-bit seed for one (frame, variant) job."""
    parts = [str(int(master_seed)), frame_id]
    for v in (kind, distribution, direction, scope):
        parts.append("" if v is None else (v.value if isinstance(v, enum.Enum) else str(v)))
    digest = hashlib.blake2b("\x1f".join(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class VariantConfig:
    name: str
    kind: Kind
    distribution: Distribution | None = None
    direction: Direction | None = None
    scope: Scope | None = None
    bound: float = DEFAULT_BOUND
    removal_rate: float = DEFAULT_REMOVAL_RATE
    decrease_fraction: float = DEFAULT_DECREASE
    increase_fraction: float = DEFAULT_INCREASE

    def spec(self, master_seed: int, frame_id: str) -> PerturbationSpec:
        base = PerturbationSpec(
            kind=self.kind,
            distribution=self.distribution,
            direction=self.direction,
            scope=self.scope,
            bound=self.bound,
            removal_rate=self.removal_rate,
            decrease_fraction=self.decrease_fraction,
            increase_fraction=self.increase_fraction,
        )
        seed = variant_seed(master_seed, frame_id, base.kind, base.distribution, base.direction, base.scope)
        return replace(base, seed=seed)

    def to_dict(self) -> dict:
        d = {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(self).items()}
        return {k: v for k, v in d.items() if v is not None}


@dataclass(frozen=True)
class SuiteConfig:
    variants: tuple[VariantConfig, ...]
    master_seed: int = 0
    profile: DistancePrecisionProfile = DEFAULT_PROFILE

    def __post_init__(self):
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValidationError("variant names must be unique")
        object.__setattr__(self, "variants", tuple(self.variants))

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "profile": [list(bp) for bp in self.profile.breakpoints],
            "variants": [v.to_dict() for v in self.variants],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteConfig":
        try:
            variants = data["variants"]
            if variants == "default":
                variants = [v.to_dict() for v in default_suite().variants]
            parsed = [VariantConfig(**v) for v in variants]
            # re-run enum coercion and invariants through a throwaway spec
            for v in parsed:
                v.spec(0, "")
            profile = data.get("profile")
            return cls(
                variants=tuple(parsed),
                master_seed=int(data.get("master_seed", 0)),
                profile=DistancePrecisionProfile(tuple(map(tuple, profile))) if profile else DEFAULT_PROFILE,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid suite config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SuiteConfig":
        from .pcd_io import _read_text

        try:
            return cls.from_dict(json.loads(_read_text(path)))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def default_suite(master_seed: int = 0) -> SuiteConfig:
    """The fifteen-variant default suite.

    Range inaccuracy global/local/directional(+x) under each distribution (9),
    false positives local and global (2), reflectivity decrease and increase
    (2), distance-amplified uniform (1) and directional -x uniform (1).
    """
    variants = []
    for dist in Distribution:
        d = dist.value.lower()
        variants.append(VariantConfig(f"range_global_{d}", Kind.RANGE_GLOBAL, dist))
        variants.append(VariantConfig(f"range_local_{d}", Kind.RANGE_LOCAL, dist))
        variants.append(VariantConfig(f"range_directional_{d}_px", Kind.RANGE_DIRECTIONAL, dist, Direction.PX))
    variants += [
        VariantConfig("false_positive_local", Kind.FALSE_POSITIVE, scope=Scope.LOCAL),
        VariantConfig("reflectivity_decrease", Kind.REFLECTIVITY_DECREASE),
        VariantConfig("reflectivity_increase", Kind.REFLECTIVITY_INCREASE),
        VariantConfig("distance_amplified_uniform", Kind.DISTANCE_AMPLIFIED, Distribution.UNIFORM),
        VariantConfig("false_positive_global", Kind.FALSE_POSITIVE, scope=Scope.GLOBAL),
        VariantConfig("range_directional_uniform_nx", Kind.RANGE_DIRECTIONAL, Distribution.UNIFORM, Direction.NX),
    ]
    return SuiteConfig(tuple(variants), master_seed)


def target_boxes(labels: Sequence[GroundTruthLabel], calib: Calibration) -> list[Box3D]:
    """LiDAR boxes of every non-DontCare label."""
    return [camera_box_to_lidar(lab, calib) for lab in labels if lab.is_target]


def build_suite(
    cloud: PointCloud,
    labels: Sequence[GroundTruthLabel],
    calib: Calibration,
    suite: SuiteConfig,
) -> list[tuple[PerturbationSpec, PerturbationOutcome]]:
    """Apply every variant of ``suite`` to the original ``cloud`` independently.

    Results are in ``suite.variants`` order.
    """
    boxes = target_boxes(labels, calib)
    owned = box_ownership(cloud, boxes) if boxes else []
    results = []
    for variant in suite.variants:
        spec = variant.spec(suite.master_seed, cloud.frame_id)
        results.append((spec, _apply_owned(cloud, boxes, owned, spec, suite.profile)))
    return results
