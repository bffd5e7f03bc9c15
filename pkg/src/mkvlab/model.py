"""Model declarations: coefficients, their measure dependence, domain ladders.

A model couples drift/diffusion coefficients to the *law* of the state, but
only through a declared finite list of functionals of that law (moments,
mean, quantile, expected shortfall). Restricting the measure dependence this
way keeps a simulation step at O(N) after one sort, and every built-in
scenario factors through such functionals.

State lives on an open domain D ⊆ ℝ^d exhausted by a nested ladder of closed
axis-aligned boxes D_1 ⊂ D_2 ⊂ … ("domain ladder"). Coefficients cut at
ladder level k vanish outside D_k; everything also vanishes outside D itself,
so a particle that leaves its box freezes where it lands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DomainLadder",
    "MeasureFunctionalTag",
    "ModelSpec",
    "evaluate_coefficients",
]


# ---------------------------------------------------------------------------
# domain ladders
# ---------------------------------------------------------------------------

_REGION_KINDS = ("full-space", "open-box", "positive-orthant")


@dataclass(frozen=True)
class DomainLadder:
    """An open box D with a nested ladder k ↦ D_k of closed boxes.

    ``lower``/``upper`` are the per-axis bounds of D (±inf allowed, bounds
    are open where finite). ``rule`` maps a ladder level k ≥ 1 to the closed
    box D_k as a pair of (d,) arrays.
    """

    dim: int
    kind: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    rule: Callable[[int], tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if self.kind not in _REGION_KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("bounds must have one entry per axis")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"empty domain axis [{lo}, {hi}]")

    # -- constructors -----------------------------------------------------

    @staticmethod
    def full_space(dim: int = 1) -> "DomainLadder":
        """D = ℝ^d with D_k = [−k, k]^d."""

        def rule(k: int):
            return (np.full(dim, -float(k)), np.full(dim, float(k)))

        return DomainLadder(
            dim=dim,
            kind="full-space",
            lower=(-np.inf,) * dim,
            upper=(np.inf,) * dim,
            rule=rule,
        )

    @staticmethod
    def positive_axis() -> "DomainLadder":
        """D = (0, ∞) with D_k = [1/k, k]."""

        def rule(k: int):
            return (np.array([1.0 / k]), np.array([float(k)]))

        return DomainLadder(
            dim=1,
            kind="positive-orthant",
            lower=(0.0,),
            upper=(np.inf,),
            rule=rule,
        )

    # -- membership --------------------------------------------------------

    def box(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k < 1:
            raise ValueError("ladder level must be >= 1")
        lo, hi = self.rule(int(k))
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    def contains(self, x: np.ndarray, k: int | None = None) -> np.ndarray:
        """Membership mask for positions ``x`` of shape (N, d).

        With ``k`` given, tests the closed box D_k; otherwise the open
        domain D (strict inequalities at finite bounds).
        """
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[:, None]
        if k is not None:
            lo, hi = self.box(k)
            return np.all((x >= lo) & (x <= hi), axis=1)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        ok = np.ones(x.shape[0], dtype=bool)
        finite_lo = np.isfinite(lo)
        finite_hi = np.isfinite(hi)
        if finite_lo.any():
            ok &= np.all(x[:, finite_lo] > lo[finite_lo], axis=1)
        if finite_hi.any():
            ok &= np.all(x[:, finite_hi] < hi[finite_hi], axis=1)
        return ok

    def validate_ladder(self, k_max: int = 64) -> None:
        """Check nesting, containment in D, and exhaustion up to ``k_max``."""
        lo_d = np.asarray(self.lower)
        hi_d = np.asarray(self.upper)
        prev = None
        for k in range(1, k_max + 1):
            lo, hi = self.box(k)
            if not (np.all(lo < hi)):
                raise ValueError(f"D_{k} is empty")
            if not (np.all(lo > lo_d) and np.all(hi < hi_d)):
                raise ValueError(f"closure(D_{k}) is not inside D")
            if prev is not None:
                plo, phi = prev
                if not (np.all(lo <= plo) and np.all(hi >= phi)):
                    raise ValueError(f"D_{k-1} ⊄ D_{k}: ladder not nested")
                if np.all(lo == plo) and np.all(hi == phi):
                    raise ValueError(f"D_{k-1} = D_{k}: ladder not strict")
            prev = (lo, hi)
        # exhaustion: endpoints must approach D's endpoints monotonically
        lo1, hi1 = self.box(1)
        lo_far, hi_far = self.box(k_max)
        gap1 = np.where(np.isfinite(lo_d), lo1 - lo_d, 1.0 / np.maximum(hi1, 1.0))
        gap_far = np.where(
            np.isfinite(lo_d), lo_far - lo_d, 1.0 / np.maximum(hi_far, 1.0)
        )
        if not np.all(gap_far <= gap1 / 2 + 1e-12):
            raise ValueError("ladder lower endpoints do not approach D's")
        up1 = np.where(np.isfinite(hi_d), hi_d - hi1, 1.0 / np.maximum(hi1, 1.0))
        up_far = np.where(
            np.isfinite(hi_d), hi_d - hi_far, 1.0 / np.maximum(hi_far, 1.0)
        )
        if not np.all(up_far <= up1 / 2 + 1e-12):
            raise ValueError("ladder upper endpoints do not approach D's")


# ---------------------------------------------------------------------------
# measure functionals
# ---------------------------------------------------------------------------

_FUNCTIONAL_KINDS = (
    "raw-moment",
    "mean",
    "linear-combination",
    "clipped-mean",
    "quantile",
    "expected-shortfall",
)


@dataclass(frozen=True)
class MeasureFunctionalTag:
    """A declared functional of the empirical law.

    kinds: ``raw-moment`` (order p), ``mean``, ``linear-combination``
    (the x-dependent form ∫(x − αy)μ(dy), which the engine evaluates as the
    state-free part ``mean`` — the α and the local x-term live in the
    coefficients), ``clipped-mean`` (∫ clip(y, lo, hi) μ(dy), the saturated
    interaction of the Scheutzow-style scenario), ``quantile`` (level α)
    and ``expected-shortfall`` (level α).
    """

    kind: str
    p: float | None = None
    alpha: float | None = None
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in _FUNCTIONAL_KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "raw-moment":
            if self.p is None or self.p < 1:
                raise ValueError("raw-moment order p must be >= 1")
        if self.kind in ("quantile", "expected-shortfall"):
            if self.alpha is None or not (0.0 < self.alpha <= 1.0):
                raise ValueError(f"{self.kind} level must lie in (0, 1]")
        if self.kind == "clipped-mean" and not self.lo < self.hi:
            raise ValueError("clipped-mean needs lo < hi")

    @property
    def key(self) -> str:
        """Name under which the value appears in fv dicts and CSV columns."""
        if self.kind == "raw-moment":
            return f"m{self.p:g}"
        if self.kind in ("mean", "linear-combination"):
            return "mean"
        if self.kind == "clipped-mean":
            return "cmean"
        tag = "q" if self.kind == "quantile" else "es"
        return f"{tag}{self.alpha:g}".replace(".", "")


# ---------------------------------------------------------------------------
# model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Drift/diffusion coefficients with declared measure dependence.

    ``drift(t, x, fv) -> (N, d)`` and ``diffusion(t, x, fv) -> (N, d, d')``
    are pure vectorized callables; ``fv`` maps functional keys to scalars.
    Coefficient factories are composed from a small vetted primitive set
    (polynomials, powers, max/min with constants, reciprocal on positive
    arguments); arbitrary user callbacks against μ are out of scope.

    ``local_bound(k)`` reports a constant c_k with
    |b| + |σ| ≤ c_k·(1 + Σ|fv|) on D_k for laws supported in D_k.
    """

    name: str
    dim: int
    noise_dim: int
    drift: Callable[[float, np.ndarray, dict], np.ndarray]
    diffusion: Callable[[float, np.ndarray, dict], np.ndarray]
    functionals: tuple[MeasureFunctionalTag, ...]
    ladder: DomainLadder
    local_bound: Callable[[int], float]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim != self.ladder.dim:
            raise ValueError("model dimension disagrees with its ladder")
        keys = [f.key for f in self.functionals]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate functional keys: {keys}")

    def functional_keys(self) -> tuple[str, ...]:
        return tuple(f.key for f in self.functionals)


def evaluate_coefficients(
    model: ModelSpec,
    t: float,
    x: np.ndarray,
    fv: dict,
    cut_level: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (b, σ) at (t, x, fv), zeroed outside D_k and outside D.

    ``x`` has shape (N, d); returns arrays of shape (N, d) and (N, d, d').
    Positions outside the open domain D get zero coefficients regardless of
    the cut; with ``cut_level=k`` so do positions outside the closed box D_k.
    A non-finite coefficient at a point that is *inside* the (cut) domain is
    a model bug and raises.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    missing = [k for k in model.functional_keys() if k not in fv]
    if missing:
        raise ValueError(f"missing functional values: {missing}")

    alive = model.ladder.contains(x)
    if cut_level is not None:
        alive &= model.ladder.contains(x, cut_level)

    with np.errstate(all="ignore"):
        b = np.asarray(model.drift(t, x, fv), dtype=float)
        s = np.asarray(model.diffusion(t, x, fv), dtype=float)
    b = np.broadcast_to(b, (x.shape[0], model.dim)).copy()
    s = np.broadcast_to(s, (x.shape[0], model.dim, model.noise_dim)).copy()

    bad = alive & ~(
        np.isfinite(b).all(axis=1) & np.isfinite(s).all(axis=(1, 2))
    )
    if bad.any():
        i = int(np.argmax(bad))
        raise FloatingPointError(
            f"model {model.name!r}: non-finite coefficient at in-domain "
            f"point x={x[i]} (t={t})"
        )
    b[~alive] = 0.0
    s[~alive] = 0.0
    return b, s
