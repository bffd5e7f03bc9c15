"""Measure-dependent generator, drift inequalities, and moment envelopes.

The central object is the generator of a measure-dependent diffusion acting
on a function v(t, x, μ):

    L^μ v = ∂_t v + b·∂_x v + ½ tr(σσ* ∂²_x v)
            + ∫ [ b(t,y,μ)·∂_μ v(t,x,μ)(y)
                  + ½ tr(σσ*(t,y,μ) ∂_y ∂_μ v(t,x,μ)(y)) ] μ(dy)

with μ an empirical measure, so the integral is an average over the cloud.
A Lyapunov package asserts L^μ v ≤ m1(t)·v + m2(t), either at every point
(pointwise mode) or after averaging in x against μ (integrated mode, which
is weaker). From the rates one gets explicit envelopes

    γ(t)  = exp(−∫₀ᵗ m1),
    M(t)  = Ev₀/γ(t) + ∫₀ᵗ (γ(s)/γ(t)) m2(s) ds,
    M⁺(t) = exp(∫₀ᵗ m1⁺) · (Ev₀ + ∫₀ᵗ γ(s) m2⁺(s) ds),

with M(t) ≤ M⁺(t), and exit-probability bounds P0 + M(t)/V_m (cut level)
or P0 + M⁺(t)/V_m (sub-level, pointwise mode) or M(t)/V_m (marginal,
integrated mode), where V_m is the boundary infimum of the floor function.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measure import evaluate_functionals
from .model import ModelSpec, evaluate_coefficients
from .parallel import tree_mean

__all__ = [
    "Rate",
    "MeasureKernelFactor",
    "LyapunovSpec",
    "CheckRow",
    "CheckReport",
    "generator",
    "generator_values",
    "integrated_generator",
    "check_lyapunov_condition",
    "check_floor",
    "check_local_bound",
    "fit_growth_constant",
    "gamma",
    "envelope_M",
    "envelope_Mplus",
    "exit_probability_bound",
    "DEFAULT_QUAD_STEP",
]

#: Quadrature step for envelope integrals when no closed form applies.
DEFAULT_QUAD_STEP = 2.5e-4

#: Cloud-size cap for the O(N²) reference generator.
REFERENCE_CAP = 2000


# ---------------------------------------------------------------------------
# time-dependent rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rate:
    """Scalar rate t ↦ m(t) with exact integrals where the form allows.

    ``kind`` is one of ``constant`` (value c0), ``affine`` (c0 + c1·t) or
    ``callable``. With ``rectified=True`` the positive part max(m(t), 0) is
    used; its integral stays exact for constant and affine cores.
    """

    kind: str
    c0: float = 0.0
    c1: float = 0.0
    fn: Callable[[float], float] | None = None
    rectified: bool = False

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "callable"):
            raise ValueError(f"unknown rate kind {self.kind!r}")
        if self.kind == "callable" and self.fn is None:
            raise ValueError("callable rate requires fn")

    @staticmethod
    def constant(value: float) -> "Rate":
        return Rate("constant", c0=float(value))

    @staticmethod
    def affine(c0: float, c1: float) -> "Rate":
        return Rate("affine", c0=float(c0), c1=float(c1))

    @staticmethod
    def of(obj) -> "Rate":
        if isinstance(obj, Rate):
            return obj
        if callable(obj):
            return Rate("callable", fn=obj)
        return Rate.constant(float(obj))

    def pos(self) -> "Rate":
        """The rate t ↦ max(m(t), 0)."""
        return dataclasses.replace(self, rectified=True)

    def _core(self, t: float) -> float:
        if self.kind == "constant":
            return self.c0
        if self.kind == "affine":
            return self.c0 + self.c1 * t
        return float(self.fn(t))

    def __call__(self, t: float) -> float:
        val = self._core(t)
        return max(val, 0.0) if self.rectified else val

    def values(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self.kind == "constant":
            out = np.full(ts.shape, self.c0)
        elif self.kind == "affine":
            out = self.c0 + self.c1 * ts
        else:
            out = np.array([float(self.fn(s)) for s in ts.ravel()]).reshape(
                ts.shape
            )
        return np.maximum(out, 0.0) if self.rectified else out

    def integral(self, t0: float, t1: float, step: float = DEFAULT_QUAD_STEP) -> float:
        """∫_{t0}^{t1} m(s) ds, exact for constant/affine cores."""
        if t1 < t0:
            return -self.integral(t1, t0, step)
        if t1 == t0:
            return 0.0
        if self.kind == "constant":
            lo = max(self.c0, 0.0) if self.rectified else self.c0
            return lo * (t1 - t0)
        if self.kind == "affine":
            if not self.rectified:
                return self.c0 * (t1 - t0) + 0.5 * self.c1 * (t1**2 - t0**2)
            return _relu_affine_integral(self.c0, self.c1, t0, t1)
        n = max(1, int(math.ceil((t1 - t0) / step)))
        ts = np.linspace(t0, t1, n + 1)
        return float(np.trapezoid(self.values(ts), ts))


def _relu_affine_integral(c0: float, c1: float, t0: float, t1: float) -> float:
    """∫_{t0}^{t1} max(c0 + c1·s, 0) ds, exact."""
    if c1 == 0.0:
        return max(c0, 0.0) * (t1 - t0)

    def anti(s: float) -> float:
        return c0 * s + 0.5 * c1 * s**2

    root = -c0 / c1
    if c1 > 0:  # positive for s ≥ root
        lo = min(max(root, t0), t1)
        return anti(t1) - anti(lo)
    hi = max(min(root, t1), t0)  # positive for s ≤ root
    return anti(hi) - anti(t0)


# ---------------------------------------------------------------------------
# Lyapunov packages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasureKernelFactor:
    """One separable term of the measure derivative of v.

    Encodes ∂_μ v(t,x,μ)(y) = x_part(t,x,fv) · y_grad(t,y,fv) and
    ∂_y ∂_μ v(t,x,μ)(y) = x_part(t,x,fv) · y_hess(t,y,fv). The separation is
    what lets the generator's measure integral collapse to a per-factor
    average over the cloud, computed once for all evaluation points.
    """

    x_part: Callable[[float, np.ndarray, dict], np.ndarray]  # (N,)
    y_grad: Callable[[float, np.ndarray, dict], np.ndarray]  # (M, d)
    y_hess: Callable[[float, np.ndarray, dict], np.ndarray] | None = None


@dataclass(frozen=True)
class LyapunovSpec:
    """A candidate v with its derivatives, floor, rates, and boundary infima.

    All spatial evaluables are vectorized over an (N, d) batch and receive
    the cloud's functional values ``fv`` so that measure-dependent v's can be
    evaluated without re-reducing the cloud. ``floor_V(t, x)`` must satisfy
    ∫V dμ̂ ≤ ∫v dμ̂ on every cloud; ``boundary_infimum(k)`` is the infimum of
    V on the boundary of the k-th ladder box, in closed form.
    """

    name: str
    mode: str  # "pointwise" | "integrated"
    v: Callable[[float, np.ndarray, dict], np.ndarray]
    dv_dt: Callable[[float, np.ndarray, dict], np.ndarray]
    dv_dx: Callable[[float, np.ndarray, dict], np.ndarray]
    d2v_dx2: Callable[[float, np.ndarray, dict], np.ndarray]
    m1: Rate
    m2: Rate
    floor_V: Callable[[float, np.ndarray], np.ndarray]
    boundary_infimum: Callable[[int], float]
    measure_factors: tuple[MeasureKernelFactor, ...] = ()
    floor_degenerate: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("pointwise", "integrated"):
            raise ValueError(f"unknown Lyapunov mode {self.mode!r}")


def _as_cloud(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None, None]
    elif x.ndim == 1:
        x = x[:, None]
    return x


def _trace_quadratic(s: np.ndarray, H: np.ndarray) -> np.ndarray:
    """tr(σσ* H) per row, for σ (N,d,d') and H (N,d,d)."""
    return np.einsum("nik,njk,nij->n", s, s, H)


def generator_values(
    model: ModelSpec,
    lyap: LyapunovSpec,
    t: float,
    x: np.ndarray,
    mu: np.ndarray,
    fv: dict | None = None,
) -> np.ndarray:
    """L^μ v at each row of ``x``, with μ the empirical measure of ``mu``.

    The measure integral is averaged over ``mu`` once per separable factor
    and shared across all evaluation points, so evaluating on x = mu costs
    O(N) rather than O(N²).
    """
    x = _as_cloud(x)
    mu = _as_cloud(mu)
    if fv is None:
        fv = evaluate_functionals(model.functionals, mu)

    b_x, s_x = evaluate_coefficients(model, t, x, fv)
    out = np.asarray(lyap.dv_dt(t, x, fv), dtype=float) + np.einsum(
        "nd,nd->n", b_x, np.asarray(lyap.dv_dx(t, x, fv), dtype=float)
    )
    out = out + 0.5 * _trace_quadratic(
        s_x, np.asarray(lyap.d2v_dx2(t, x, fv), dtype=float)
    )

    if lyap.measure_factors:
        b_y, s_y = evaluate_coefficients(model, t, mu, fv)
        for fac in lyap.measure_factors:
            contrib = np.einsum(
                "md,md->m", b_y, np.asarray(fac.y_grad(t, mu, fv), dtype=float)
            )
            if fac.y_hess is not None:
                contrib = contrib + 0.5 * _trace_quadratic(
                    s_y, np.asarray(fac.y_hess(t, mu, fv), dtype=float)
                )
            inner = float(tree_mean(contrib))
            out = out + np.asarray(fac.x_part(t, x, fv), dtype=float) * inner
    return out


def generator(model, lyap, t, x, mu, fv: dict | None = None) -> float:
    """L^μ v at a single point x against the cloud ``mu``."""
    vals = generator_values(model, lyap, t, np.atleast_1d(x), mu, fv)
    if vals.shape[0] != 1:
        raise ValueError("generator() takes one point; use generator_values")
    return float(vals[0])


def integrated_generator(
    model, lyap, t, mu, fv: dict | None = None, method: str = "fast"
) -> float:
    """∫ L^μ v dμ̂ over the cloud.

    ``method="fast"`` shares the per-factor inner averages (O(N));
    ``method="reference"`` materializes the full pairwise kernel
    ∂_μ v(x_i)(y_j) and reduces it directly (O(N²), capped at N=2000),
    as an independent check of the separable collapse.
    """
    mu = _as_cloud(mu)
    if fv is None:
        fv = evaluate_functionals(model.functionals, mu)
    if method == "fast":
        return float(tree_mean(generator_values(model, lyap, t, mu, mu, fv)))
    if method != "reference":
        raise ValueError(f"unknown method {method!r}")
    n = mu.shape[0]
    if n > REFERENCE_CAP:
        raise ValueError(f"reference path capped at N={REFERENCE_CAP}, got {n}")

    b, s = evaluate_coefficients(model, t, mu, fv)
    local = (
        np.asarray(lyap.dv_dt(t, mu, fv), dtype=float)
        + np.einsum("nd,nd->n", b, np.asarray(lyap.dv_dx(t, mu, fv), dtype=float))
        + 0.5 * _trace_quadratic(s, np.asarray(lyap.d2v_dx2(t, mu, fv), dtype=float))
    )
    total = float(np.mean(local))
    for fac in lyap.measure_factors:
        xp = np.asarray(fac.x_part(t, mu, fv), dtype=float)  # (N,)
        grad = np.asarray(fac.y_grad(t, mu, fv), dtype=float)  # (N,d)
        # pairwise b(y_j)·∂_μ v(x_i)(y_j), shape (N, N)
        pair = xp[:, None] * np.einsum("md,md->m", b, grad)[None, :]
        if fac.y_hess is not None:
            hess_term = _trace_quadratic(
                s, np.asarray(fac.y_hess(t, mu, fv), dtype=float)
            )
            pair = pair + 0.5 * xp[:, None] * hess_term[None, :]
        total += float(np.mean(pair))
    return total


# ---------------------------------------------------------------------------
# condition checks and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    probe: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass
class CheckReport:
    """Rows of (probe, lhs, rhs, margin) for an inequality lhs ≤ rhs."""

    title: str
    rows: list
    tolerance: float = 1e-9

    def worst(self) -> CheckRow | None:
        return min(self.rows, key=lambda r: r.margin) if self.rows else None

    def passed(self) -> bool:
        return all(r.margin >= -self.tolerance for r in self.rows)

    def violations(self) -> list:
        return [r for r in self.rows if r.margin < -self.tolerance]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe", "lhs", "rhs", "margin"])
            for r in self.rows:
                w.writerow([r.probe, repr(r.lhs), repr(r.rhs), repr(r.margin)])

    def summary(self) -> str:
        lines = [f"{self.title}: {len(self.rows)} probes"]
        w = self.worst()
        if w is not None:
            lines.append(
                f"  worst margin {w.margin:.6g} at {w.probe} "
                f"(lhs={w.lhs:.6g}, rhs={w.rhs:.6g})"
            )
        bad = self.violations()
        lines.append(
            "  PASS" if not bad else f"  FAIL: {len(bad)} margin(s) below "
            f"-{self.tolerance:g}"
        )
        return "\n".join(lines)


def _label_probes(probes) -> list:
    out = []
    for j, p in enumerate(probes):
        if isinstance(p, tuple) and len(p) == 2 and isinstance(p[0], str):
            out.append((p[0], _as_cloud(p[1])))
        else:
            out.append((f"cloud{j:02d}", _as_cloud(p)))
    return out


def check_lyapunov_condition(
    model, lyap, t_samples, probes, tolerance: float = 1e-9
) -> CheckReport:
    """Check L^μ v ≤ m1·v + m2 on every (t, probe cloud) pair.

    Integrated mode compares cloud averages; pointwise mode reports, per
    pair, the particle with the smallest margin. Negative margins beyond the
    tolerance are findings recorded in the report, never exceptions.
    """
    rows = []
    for name, cloud in _label_probes(probes):
        fv = evaluate_functionals(model.functionals, cloud)
        for t in np.atleast_1d(np.asarray(t_samples, dtype=float)):
            t = float(t)
            vvals = np.asarray(lyap.v(t, cloud, fv), dtype=float)
            if lyap.mode == "integrated":
                lhs = integrated_generator(model, lyap, t, cloud, fv)
                rhs = lyap.m1(t) * float(tree_mean(vvals)) + lyap.m2(t)
                rows.append(CheckRow(f"{name}@t={t:g}", lhs, rhs))
            else:
                gvals = generator_values(model, lyap, t, cloud, cloud, fv)
                bound = lyap.m1(t) * vvals + lyap.m2(t)
                i = int(np.argmin(bound - gvals))
                rows.append(
                    CheckRow(f"{name}@t={t:g}#p{i}", float(gvals[i]), float(bound[i]))
                )
    mode = "pointwise" if lyap.mode == "pointwise" else "integrated"
    return CheckReport(f"{mode} drift inequality [{lyap.name}]", rows, tolerance)


def check_floor(model, lyap, t_samples, probes, tolerance: float = 1e-9) -> CheckReport:
    """Check the floor inequality ∫V dμ̂ ≤ ∫v dμ̂ on probe clouds."""
    rows = []
    for name, cloud in _label_probes(probes):
        fv = evaluate_functionals(model.functionals, cloud)
        for t in np.atleast_1d(np.asarray(t_samples, dtype=float)):
            t = float(t)
            lhs = float(tree_mean(np.asarray(lyap.floor_V(t, cloud), dtype=float)))
            rhs = float(tree_mean(np.asarray(lyap.v(t, cloud, fv), dtype=float)))
            rows.append(CheckRow(f"{name}@t={t:g}", lhs, rhs))
    return CheckReport(f"floor inequality [{lyap.name}]", rows, tolerance)


def check_local_bound(
    model,
    lyap,
    t_samples,
    probes,
    levels,
    tolerance: float = 1e-9,
    grid_points: int = 257,
) -> CheckReport:
    """Check sup_{x∈D_k} |b|, |σ| ≤ c_k(1 + ∫v dμ̂) for each level k.

    The sup is probed on the cloud's own points inside the box plus (in one
    dimension) a uniform grid across the box, against the functional values
    of the probe cloud.
    """
    rows = []
    for name, cloud in _label_probes(probes):
        fv = evaluate_functionals(model.functionals, cloud)
        for t in np.atleast_1d(np.asarray(t_samples, dtype=float)):
            t = float(t)
            v_int = float(
                tree_mean(np.asarray(lyap.v(t, cloud, fv), dtype=float))
            )
            for k in levels:
                lo, hi = model.ladder.box(k)
                pts = [cloud[model.ladder.contains(cloud, k)]]
                if model.dim == 1 and np.isfinite(lo[0]) and np.isfinite(hi[0]):
                    pts.append(np.linspace(lo[0], hi[0], grid_points)[:, None])
                xs = np.concatenate([p for p in pts if p.size], axis=0)
                if not xs.size:
                    continue
                b, s = evaluate_coefficients(model, t, xs, fv)
                lhs = max(
                    float(np.linalg.norm(b, axis=1).max()),
                    float(np.sqrt((s**2).sum(axis=(1, 2))).max()),
                )
                rhs = model.local_bound(k) * (1.0 + v_int)
                rows.append(CheckRow(f"{name}@t={t:g}/k={k}", lhs, rhs))
    return CheckReport(f"local coefficient bound [{model.name}]", rows, tolerance)


def fit_growth_constant(model, lyap, t_samples, probes):
    """Fit the smallest c with ∫(|b| + |σ|²) dμ̂ ≤ c(1 + ∫v dμ̂) over probes.

    No reference value exists per scenario, so the constant is fitted as the
    max ratio and reported alongside a (then trivially passing) report; the
    check is that the ratio stays bounded across probes, i.e. the inequality
    has the right shape.
    """
    ratios = []
    pairs = []
    for name, cloud in _label_probes(probes):
        fv = evaluate_functionals(model.functionals, cloud)
        for t in np.atleast_1d(np.asarray(t_samples, dtype=float)):
            t = float(t)
            b, s = evaluate_coefficients(model, t, cloud, fv)
            lhs = float(
                tree_mean(
                    np.linalg.norm(b, axis=1) + (s**2).sum(axis=(1, 2))
                )
            )
            denom = 1.0 + float(
                tree_mean(np.asarray(lyap.v(t, cloud, fv), dtype=float))
            )
            ratios.append(lhs / denom)
            pairs.append((f"{name}@t={t:g}", lhs, denom))
    c = max(ratios) if ratios else 0.0
    rows = [CheckRow(p, lhs, c * denom) for p, lhs, denom in pairs]
    report = CheckReport(
        f"integrated growth (fitted c={c:.6g}) [{model.name}]", rows, 1e-12
    )
    return c, report


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------


def _rates_of(lyap) -> tuple[Rate, Rate]:
    if isinstance(lyap, LyapunovSpec):
        return lyap.m1, lyap.m2
    m1, m2 = lyap
    return Rate.of(m1), Rate.of(m2)


def gamma(lyap, t: float, step: float = DEFAULT_QUAD_STEP) -> float:
    """γ(t) = exp(−∫₀ᵗ m1(s) ds)."""
    m1, _ = _rates_of(lyap)
    return math.exp(-m1.integral(0.0, t, step))


def _grid(t: float, step: float) -> np.ndarray:
    n = max(2, int(math.ceil(t / step)))
    return np.linspace(0.0, t, n + 1)


def _cum_integral(rate: Rate, ts: np.ndarray) -> np.ndarray:
    """Cumulative ∫₀^{ts} of the rate on the grid (trapezoid; exact for
    constant/affine cores since the trapezoid rule is exact on affine
    integrands)."""
    vals = rate.values(ts)
    seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(ts)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _int_exp_affine(a: float, d0: float, d1: float, t: float) -> float:
    """∫₀ᵗ e^{a(t−s)} (d0 + d1·s) ds, exact."""
    if a == 0.0:
        return d0 * t + 0.5 * d1 * t**2
    e1 = (math.exp(a * t) - 1.0) / a
    e2 = -t / a + (math.exp(a * t) - 1.0) / a**2
    return d0 * e1 + d1 * e2


def envelope_M(lyap, ev0: float, t: float, step: float = DEFAULT_QUAD_STEP) -> float:
    """M(t) = Ev₀/γ(t) + ∫₀ᵗ (γ(s)/γ(t)) m2(s) ds.

    Closed forms when m1 is constant and m2 constant or affine (all
    built-ins); otherwise cumulative-trapezoid quadrature at ``step``.
    """
    if ev0 < 0:
        raise ValueError("initial expected Lyapunov value must be >= 0")
    m1, m2 = _rates_of(lyap)
    if t == 0.0:
        return float(ev0)
    if (
        m1.kind == "constant"
        and not m1.rectified
        and m2.kind in ("constant", "affine")
        and not m2.rectified
    ):
        a = m1.c0
        growth = ev0 * math.exp(a * t)
        return growth + _int_exp_affine(a, m2.c0, m2.c1 if m2.kind == "affine" else 0.0, t)
    ts = _grid(t, step)
    c1 = _cum_integral(m1, ts)  # ∫₀^s m1
    weights = np.exp(c1[-1] - c1) * m2.values(ts)  # e^{∫_s^t m1} m2(s)
    return float(ev0 * math.exp(c1[-1]) + np.trapezoid(weights, ts))


def envelope_Mplus(lyap, ev0: float, t: float, step: float = DEFAULT_QUAD_STEP) -> float:
    """M⁺(t) = exp(∫₀ᵗ m1⁺) · (Ev₀ + ∫₀ᵗ γ(s) m2⁺(s) ds) ≥ M(t)."""
    if ev0 < 0:
        raise ValueError("initial expected Lyapunov value must be >= 0")
    m1, m2 = _rates_of(lyap)
    if t == 0.0:
        return float(ev0)
    lead = math.exp(m1.pos().integral(0.0, t, step))
    if m1.kind == "constant" and m2.kind == "constant" and not m2.rectified:
        a, cp = m1.c0, max(m2.c0, 0.0)
        inner = cp * t if a == 0.0 else cp * (1.0 - math.exp(-a * t)) / a
        return lead * (ev0 + inner)
    ts = _grid(t, step)
    c1 = _cum_integral(m1, ts)
    inner = float(np.trapezoid(np.exp(-c1) * m2.pos().values(ts), ts))
    return lead * (ev0 + inner)


def exit_probability_bound(
    lyap,
    ev0: float,
    t: float,
    m: int,
    p0_out: float = 0.0,
    kind: str = "cut",
    step: float = DEFAULT_QUAD_STEP,
) -> float:
    """Upper bound for domain-exit probabilities at ladder level m.

    kinds (all require the boundary infimum V_m > 0):
      * ``cut``      — P(exit of the level-m cut system before t)
                       ≤ P0_out + M(t)/V_m;
      * ``sublevel`` — P(any cut system leaves D_m before t)
                       ≤ P0_out + M⁺(t)/V_m, pointwise mode only;
      * ``marginal`` — P(position at time t outside D_m) ≤ M(t)/V_m,
                       no initial-mass term (integrated-mode estimate).

    ``p0_out`` is the initial mass outside D_m, P(x₀ ∉ D_m).
    """
    if not isinstance(lyap, LyapunovSpec):
        raise TypeError("exit_probability_bound needs a full LyapunovSpec")
    if not (0.0 <= p0_out <= 1.0):
        raise ValueError(f"initial outside-mass must be a probability, got {p0_out}")
    v_m = float(lyap.boundary_infimum(m))
    if v_m <= 0.0:
        raise ValueError(
            f"boundary infimum V_{m} = {v_m:g} is not positive; the exit "
            "bound is vacuous (degenerate floor)"
        )
    if kind == "cut":
        return p0_out + envelope_M(lyap, ev0, t, step) / v_m
    if kind == "sublevel":
        if lyap.mode != "pointwise":
            raise ValueError("sub-level bound requires the pointwise mode")
        return p0_out + envelope_Mplus(lyap, ev0, t, step) / v_m
    if kind == "marginal":
        return envelope_M(lyap, ev0, t, step) / v_m
    raise ValueError(f"unknown bound kind {kind!r}")
