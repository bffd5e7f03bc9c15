"""Composite experiments: coupled-path stability, replica law-agreement
probes, and stationary-measure estimation by long-run time averaging.

``stability_experiment`` drives two clouds with shared noise from different
initial laws and compares the measured contraction E v̄(x¹_t − x²_t) against
the certified envelope: exp(∫ g + h + 2|h|)·E v̄(Δ₀) when the rates bound the
coupled generator pointwise, or exp(∫ h)·E v̄(Δ₀) when they bound it only
after averaging against a coupling. The rates are analytic inputs — built-in
scenarios ship them — not fitted quantities.

``scheutzow_probe`` is a weak-uniqueness consistency check for saturated
interaction models: independent replicas started from one initial law must
agree *in law*, so the pairwise 1-Wasserstein distance between replica
empirical measures should sit at the N^{−1/2} Monte Carlo scale at every
checkpoint. Agreement is evidence, not proof; a violation is a finding.

``stationary_estimate`` realizes the time-averaging construction of
candidate invariant measures: the occupation measure pools cloud snapshots
uniformly over (0, T], and for a model whose envelope stays bounded
(m1 ≤ 0) the occupation measures should become Cauchy in W₁ as the horizon
doubles. The logistic fourth-moment oracle provides the ground-truth
stationary value 3/4 for the quartic scenario.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .lyapunov import CheckReport, CheckRow, Rate
from .measure import evaluate_functionals, wasserstein_p_1d
from .model import ModelSpec
from .simulate import (
    DiagnosticsSeries,
    InitialLaw,
    SimConfig,
    coupled_simulate,
    simulate,
)

__all__ = [
    "POOL_CAP",
    "StabilityReport",
    "OccupationMeasure",
    "stability_experiment",
    "scheutzow_probe",
    "stationary_estimate",
    "moment_ode_oracle",
]

POOL_CAP = 10**6


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


def _negated(rate: Rate) -> Rate:
    if rate.kind == "constant":
        out = Rate.constant(-rate.c0)
    elif rate.kind == "affine":
        out = Rate.affine(-rate.c0, -rate.c1)
    else:
        fn = rate.fn
        out = Rate.of(lambda s, _f=fn: -_f(s))
    return out.pos() if rate.rectified else out


def _abs_integral(rate: Rate, t: float) -> float:
    # |r| = r⁺ + (−r)⁺, keeping the exact closed forms for affine cores
    return rate.pos().integral(0.0, t) + _negated(rate).pos().integral(0.0, t)


def _rate_label(rate: Rate) -> str:
    if rate.kind == "constant":
        return repr(float(rate.c0))
    if rate.kind == "affine":
        return f"{rate.c0!r}+{rate.c1!r}*t"
    return "callable"


@dataclass(frozen=True)
class StabilityReport:
    """Measured coupled-path distance against its certified envelope.

    ``mode`` records which drift condition the (g, h) pair certifies and
    hence which exponent the bound uses. The pass rule is
    measured ≤ bound·(1 + tolerance) at every checkpoint; ``band`` is the
    3-sigma cross-particle width of the measured mean, reported so callers
    can widen the comparison by Monte Carlo noise when appropriate.
    """

    times: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    band: np.ndarray
    mode: str
    g: Rate | None
    h: Rate
    tolerance: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.bound < 0):
            raise ValueError("stability bound series must be nonnegative")

    @property
    def margins(self) -> np.ndarray:
        return self.bound * (1.0 + self.tolerance) - self.measured

    @property
    def margin(self) -> float:
        return float(np.min(self.margins))

    def passed(self) -> bool:
        return bool(np.all(self.measured <= self.bound * (1.0 + self.tolerance)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,measured,bound,band,margin\n")
            for t, m, b, w, g in zip(
                self.times, self.measured, self.bound, self.band, self.margins
            ):
                fh.write(
                    ",".join(repr(float(v)) for v in (t, m, b, w, g)) + "\n"
                )

    def summary_lines(self) -> list:
        lines = [f"{k} = {v}" for k, v in sorted(self.meta.items())]
        lines += [
            f"mode = {self.mode}",
            f"h = {_rate_label(self.h)}",
            f"tolerance = {repr(float(self.tolerance))}",
            f"margin = {repr(self.margin)}",
            f"passed = {self.passed()}",
            f"final.measured = {repr(float(self.measured[-1]))}",
            f"final.bound = {repr(float(self.bound[-1]))}",
        ]
        if self.g is not None:
            lines.insert(len(lines) - 6, f"g = {_rate_label(self.g)}")
        return lines


def stability_experiment(
    model: ModelSpec,
    vbar,
    g,
    h,
    cfg: SimConfig,
    init1: InitialLaw,
    init2: InitialLaw,
    mode: str = "pointwise",
    tolerance: float = 0.0,
) -> StabilityReport:
    """Coupled two-cloud run against the certified contraction envelope.

    ``g`` and ``h`` must certify the model's coupled generator for the
    kernel v̄ (built-ins ship them; see Scenario.stability): pointwise
    certificates use the exponent ∫ g + h + 2|h|, coupling-averaged
    ("integrated") certificates use ∫ h alone and ignore g.
    """
    if mode not in ("pointwise", "integrated"):
        raise ValueError(f"unknown stability mode {mode!r}")
    h = Rate.of(h)
    g_rate = None if g is None else Rate.of(g)
    if mode == "pointwise" and g_rate is None:
        raise ValueError("pointwise stability bound needs the rate g")
    _, _, dist = coupled_simulate(model, cfg, init1, init2, vbar)
    times = dist.column("t")
    measured = dist.column("dist")
    band = dist.column("band")
    ev0 = float(measured[0])
    if mode == "pointwise":
        exponents = np.array(
            [
                g_rate.integral(0.0, t)
                + h.integral(0.0, t)
                + 2.0 * _abs_integral(h, t)
                for t in times
            ]
        )
    else:
        exponents = np.array([h.integral(0.0, t) for t in times])
    bound = ev0 * np.exp(exponents)
    meta = dict(dist.meta)
    meta["ev0"] = ev0
    return StabilityReport(
        times=times,
        measured=measured,
        bound=bound,
        band=band,
        mode=mode,
        g=g_rate,
        h=h,
        tolerance=tolerance,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# replica probe
# ---------------------------------------------------------------------------


def scheutzow_probe(
    model: ModelSpec,
    cfg: SimConfig,
    seeds,
    init: InitialLaw,
    scale: float = 5.0,
) -> CheckReport:
    """Inter-replica law agreement for saturated-interaction models.

    Runs one replica per seed from the same initial law, then compares
    every replica pair's empirical measure at every checkpoint by W₁.
    Rows report (distance, scale·N^{−1/2}); margins below the tolerance
    are findings against weak uniqueness, not errors.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("replica probe needs at least two seeds")
    if model.dim != 1:
        raise ValueError("replica probe compares laws by 1-d W1")
    snapshots = []
    for s in seeds:
        series = simulate(
            model, None, replace(cfg, seed=int(s)), init, keep_snapshots=True
        )
        snapshots.append(series.snapshots)
    rhs = scale / math.sqrt(cfg.n_particles)
    rows = []
    for a in range(len(seeds)):
        for b in range(a + 1, len(seeds)):
            for (t, xa), (_, xb) in zip(snapshots[a], snapshots[b]):
                rows.append(
                    CheckRow(
                        probe=f"t={t:g}:rep({seeds[a]},{seeds[b]})",
                        lhs=wasserstein_p_1d(xa, xb, 1.0),
                        rhs=rhs,
                    )
                )
    return CheckReport(f"inter-replica W1 agreement [{model.name}]", rows)


# ---------------------------------------------------------------------------
# stationary estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OccupationMeasure:
    """Time-averaged law estimate: cloud snapshots pooled uniformly over
    (0, horizon], strided down to at most POOL_CAP points. The pooled
    count is exactly checkpoints_kept × particles_kept."""

    samples: np.ndarray
    horizon: float
    checkpoints_kept: int
    particles_kept: int

    def __post_init__(self):
        if self.samples.shape[0] != self.checkpoints_kept * self.particles_kept:
            raise ValueError("pooled sample count does not factor as kept×kept")

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def _pool(snapshots, horizon: float) -> OccupationMeasure:
    kept = [(t, x) for t, x in snapshots if 0.0 < t <= horizon + 1e-12]
    if not kept:
        raise ValueError(f"no snapshots in (0, {horizon:g}]")
    n = kept[0][1].shape[0]
    per = max(1, min(n, POOL_CAP // len(kept)))
    stride = -(-n // per)  # ceil
    idx = np.arange(0, n, stride)
    block = np.concatenate([x[idx] for _, x in kept], axis=0)
    return OccupationMeasure(
        samples=block,
        horizon=horizon,
        checkpoints_kept=len(kept),
        particles_kept=len(idx),
    )


def _common_subsample(a: np.ndarray, b: np.ndarray):
    m = min(a.shape[0], b.shape[0])

    def pick(x):
        idx = (np.arange(m) * x.shape[0]) // m
        return x[idx]

    return pick(a), pick(b)


def stationary_estimate(
    model: ModelSpec,
    cfg: SimConfig,
    horizons,
    init: InitialLaw,
    lyap=None,
):
    """Occupation measures at increasing horizons with a Cauchy diagnostic.

    One run to the largest horizon supplies every occupation measure (the
    restriction of a longer run to an earlier window is bit-identical to
    the shorter run). Checkpoints default to a uniform grid fine enough to
    give the shortest horizon 50 in-window snapshots. Returns
    (occupations, diagnostics) where the diagnostics rows carry, per
    horizon, the declared functionals of the pooled samples and the W₁ gap
    to the previous horizon's occupation measure (nan for the first).

    When a Lyapunov package is supplied and its decay rate m1(t) dips below
    zero anywhere on [0, T] — so the envelope M(t) can grow without bound —
    a warning is emitted and the estimate proceeds.
    """
    horizons = sorted(float(t) for t in horizons)
    if not horizons or horizons[0] <= 0:
        raise ValueError("horizons must be positive")
    t_max = horizons[-1]
    if lyap is not None:
        grid = np.linspace(0.0, t_max, 201)
        if max(lyap.m1(t) for t in grid) > 0:
            warnings.warn(
                f"decay rate m1 is positive somewhere on [0, {t_max:g}]: the "
                "moment envelope may diverge and time averages may not "
                "stabilize",
                RuntimeWarning,
                stacklevel=2,
            )
    run_cfg = replace(cfg, horizon=t_max)
    if cfg.checkpoints is None:
        spacing = horizons[0] / 50.0
        marks = np.arange(0.0, t_max + spacing / 2, spacing)
        run_cfg = replace(run_cfg, checkpoints=tuple(marks))
    series = simulate(model, lyap, run_cfg, init, keep_snapshots=True)
    occupations = [_pool(series.snapshots, t) for t in horizons]
    columns = ["horizon"] + list(model.functional_keys()) + ["w1_prev"]
    rows = []
    for j, occ in enumerate(occupations):
        fv = evaluate_functionals(model.functionals, occ.samples)
        gap = float("nan")
        if j > 0:
            a, b = _common_subsample(occupations[j - 1].samples, occ.samples)
            gap = wasserstein_p_1d(a, b, 1.0)
        rows.append(
            [occ.horizon]
            + [fv[key] for key in model.functional_keys()]
            + [gap]
        )
    meta = dict(series.meta)
    meta["horizons"] = "/".join(f"{t:g}" for t in horizons)
    meta["pool_cap"] = POOL_CAP
    diag = DiagnosticsSeries(columns=columns, rows=rows, meta=meta)
    return occupations, diag


def moment_ode_oracle(scenario, m0: float, t):
    """Closed-form fourth moment for the quartic scenario.

    The generator identity closes the fourth moment into the logistic ODE
    ṁ = 3m − 4m², solved by m(t) = 3m₀ / (4m₀ + (3 − 4m₀)e^{−3t}); the
    stationary value is 3/4. Ground truth for simulation and stationarity
    tests. Accepts the scenario name or object; only the quartic scenario
    has a closed moment flow.
    """
    name = getattr(getattr(scenario, "model", scenario), "name", scenario)
    if name != "example1-quartic":
        raise ValueError(f"no closed moment flow for scenario {name!r}")
    if m0 < 0:
        raise ValueError("fourth moment m0 must be nonnegative")
    t = np.asarray(t, dtype=float)
    out = 3.0 * m0 / (4.0 * m0 + (3.0 - 4.0 * m0) * np.exp(-3.0 * t))
    return float(out) if out.ndim == 0 else out
