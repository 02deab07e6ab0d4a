"""Quantitative nontrapping: the radius R, ray length L, and stability margin.

R is the smallest grid-aligned radius at which the coefficient matrix is
epsilon-close to the identity outside the ball, measured in the graded cube
norm with the smooth exterior cutoff (zero inside R/4, one outside R/2).
L is the longest Euclidean arclength any unit-cosphere geodesic accumulates
inside the 2R ball, maximized over a quasi-uniform seed net traced in both
time directions.  Trapping is decided by a length cap: a ray that accumulates
``kappa * 4R`` of in-ball arclength is declared trapped and L is reported as
the cap.

The stability margin ``exp(-C0(M) L)`` uses ``C0(M) = c (1 + M)^2``; the
scale c is a configured claim stamped into every report, not a constant of
nature.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .grid import Field, exterior_cutoff
from .hamilton import PhasePoint, Ray, RayCaps, PerturbedMetric, trace_ray
from .spaces import lp_hs_norm

__all__ = [
    "TrapConfig",
    "TrapReport",
    "find_R",
    "compute_L",
    "perturbation_margin",
    "check_stability",
    "seed_net",
    "exterior_metric_norm",
    "escape_check",
    "c2_norm",
]


@dataclass
class TrapConfig:
    """Thresholds and densities for the nontrapping diagnostics."""

    epsilon: float = 1e-3
    s0: float = 2.51
    kappa: float = 25.0            # trapped beyond kappa * 4R of in-ball length
    c0_margin: float = 1.0         # scale c in C0(M) = c (1 + M)^2
    r_min: float = 1.0
    n_boundary: int = 16           # boundary positions on the 2R sphere
    n_boundary_dirs: int = 7       # inward directions per boundary position
    n_interior: int = 12           # interior positions
    n_interior_dirs: int = 8       # directions per interior position
    exit_factor: float = 2.0       # escape radius = exit_factor * 2R
    tracer_tol: float = 1e-10
    stop_at_first_cap: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.kappa < 10.0:
            raise ValueError("length cap multiplier kappa must be >= 10")


@dataclass
class TrapReport:
    M: float
    R: float
    L: float
    trapped: bool
    margin: float
    worst_seed: Optional[PhasePoint] = None
    n_rays: int = 0
    capped_rays: int = 0
    worst_ray: Optional[Ray] = None
    c0_margin: float = 1.0
    seed_lengths: Optional[list] = None


# ---------------------------------------------------------------------------
# smallness radius
# ---------------------------------------------------------------------------

def exterior_metric_norm(u0: Field, nl, radius: float, s0: float) -> float:
    """Graded cube norm of ``g(u0) - I`` outside the given radius.

    The cutoff vanishes inside ``radius/2`` and is one outside ``radius``;
    matrix components are combined in root-sum-square.
    """
    from .model import metric_of
    spec = u0.spec
    g = metric_of(u0, nl, check=False)
    cut = exterior_cutoff(spec, radius / 2.0, radius)
    total = 0.0
    for j in range(spec.d):
        for k in range(spec.d):
            target = 1.0 if j == k else 0.0
            comp = Field(spec, (g[j, k] - target) * cut)
            total += lp_hs_norm(comp, s0, p=1).value ** 2
    return float(np.sqrt(total))


def find_R(u0: Field, nl, cfg: TrapConfig) -> float:
    """Smallest grid-aligned radius with exterior smallness below epsilon.

    Doubling search for an admissible radius, then bisection down to one
    grid cell.  The defining cutoff sits at half the radius, so the returned
    R certifies ``||chi_{>R/2} (g(u0) - I)|| <= epsilon``.
    """
    spec = u0.spec
    h = spec.h
    r_max = 0.45 * spec.box

    def ext(radius):
        return exterior_metric_norm(u0, nl, radius / 2.0, cfg.s0)

    R = max(cfg.r_min, 2 * h)
    if ext(R) <= cfg.epsilon:
        return float(R)
    while ext(R) > cfg.epsilon:
        R = min(2.0 * R, r_max)
        if R >= r_max and ext(R) > cfg.epsilon:
            raise RuntimeError(
                f"no admissible smallness radius inside the box "
                f"(exterior norm {ext(r_max):.3e} > {cfg.epsilon} at R={r_max:.3g}); "
                "box too small for this data")
    lo, hi = R / 2.0, R
    while hi - lo > h:
        mid = 0.5 * (lo + hi)
        if ext(mid) <= cfg.epsilon:
            hi = mid
        else:
            lo = mid
    return float(hi)


# ---------------------------------------------------------------------------
# seed nets
# ---------------------------------------------------------------------------

def _unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def seed_net(R: float, cfg: TrapConfig, d: int) -> list:
    """Quasi-uniform phase seeds: interior net first, then the 2R boundary.

    Boundary seeds point into the inward half-sphere (the exact inward
    normal included so flat diameters are captured); interior seeds cover
    all directions, including exact tangentials.
    """
    seeds = []
    if d == 1:
        for r in np.linspace(-1.5 * R, 1.5 * R, max(3, cfg.n_interior // 2)):
            seeds.append(PhasePoint([r], [1.0]))
        seeds.append(PhasePoint([-2.0 * R], [1.0]))
        seeds.append(PhasePoint([2.0 * R], [-1.0]))
        return seeds
    golden = np.pi * (3.0 - np.sqrt(5.0))
    # interior: spiral net over the 2R disk, all directions
    for i in range(cfg.n_interior):
        r = 2.0 * R * np.sqrt((i + 0.5) / cfg.n_interior)
        pos = r * _unit(golden * i)
        for j in range(cfg.n_interior_dirs):
            phi = 2 * np.pi * (j + 0.5 * (i % 2)) / cfg.n_interior_dirs
            seeds.append(PhasePoint(pos, _unit(phi)))
    # boundary: inward half-circle of directions at each position
    for i in range(cfg.n_boundary):
        theta = 2 * np.pi * i / cfg.n_boundary
        pos = 2.0 * R * _unit(theta)
        inward = -_unit(theta)
        base = np.arctan2(inward[1], inward[0])
        spread = np.linspace(-0.45 * np.pi, 0.45 * np.pi, cfg.n_boundary_dirs)
        for off in spread:
            seeds.append(PhasePoint(pos, _unit(base + off)))
    return seeds


# ---------------------------------------------------------------------------
# trapping decision
# ---------------------------------------------------------------------------

def compute_L(metric, R: float, cfg: TrapConfig, M: float = 0.0,
              max_step: Optional[float] = None,
              grid_limit: Optional[float] = None,
              keep_rays: bool = False) -> TrapReport:
    """Trace the seed ensemble both ways and take the longest in-ball length.

    Each seed is traced forward and backward (time reversal flips the
    covector); the two in-ball arclengths add up to the full geodesic's.
    A capped direction declares trapping, reports L as the cap, and by
    default short-circuits the ensemble.
    """
    cap = cfg.kappa * 4.0 * R
    caps = RayCaps(length_cap=cap, exit_radius=cfg.exit_factor * 2.0 * R,
                   R2=2.0 * R, grid_limit=grid_limit)
    seeds = seed_net(R, cfg, metric.d)
    best = 0.0
    worst_seed = None
    worst_ray = None
    capped = 0
    trapped = False
    lengths = []
    n_rays = 0
    for seed in seeds:
        total = 0.0
        for sign in (1.0, -1.0):
            p = PhasePoint(seed.x.copy(), sign * seed.xi.copy())
            ray = trace_ray(metric, p, caps, tol=cfg.tracer_tol,
                            max_step=max_step)
            n_rays += 1
            total += ray.length_in_2BR
            if ray.status == "capped":
                capped += 1
                trapped = True
                if keep_rays or worst_ray is None:
                    worst_ray = ray
                worst_seed = seed
            elif ray.status == "left-grid":
                raise RuntimeError(
                    f"ray left the sampled region from seed x={seed.x}, "
                    f"xi={sign * seed.xi}; enlarge the box")
        lengths.append(total)
        if total > best:
            best = total
            if not trapped:
                worst_seed = seed
        if trapped and cfg.stop_at_first_cap:
            break
    L = cap if trapped else best
    margin = perturbation_margin(M, L, cfg)
    return TrapReport(M=M, R=R, L=float(L), trapped=trapped, margin=margin,
                      worst_seed=worst_seed, n_rays=n_rays, capped_rays=capped,
                      worst_ray=worst_ray, c0_margin=cfg.c0_margin,
                      seed_lengths=lengths if keep_rays else None)


def perturbation_margin(M: float, L: float, cfg: TrapConfig) -> float:
    """Coefficient-perturbation budget ``exp(-c (1 + M)^2 L)``.

    Floored at a tiny positive value so the reported margin stays in (0, 1]
    even when the exponent underflows double precision.
    """
    return float(max(np.exp(-cfg.c0_margin * (1.0 + M) ** 2 * L), 1e-300))


def c2_norm(metric_bump, half_width: float, n: int = 161) -> float:
    """Measured C^2 size (sup of value, gradient, Hessian deviations from I).

    Second derivatives are finite-differenced on the sampling net; this is a
    measurement, not part of any solve path.
    """
    d = metric_bump.d
    ax = np.linspace(-half_width, half_width, n)
    if d == 1:
        pts = ax[:, None]
    else:
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    g = metric_bump.eval(pts)
    dev = g - np.eye(d)
    dg = metric_bump.grad(pts)
    h = ax[1] - ax[0]
    hess = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        hess = max(hess, float(np.max(np.abs(
            (metric_bump.grad(pts + e) - metric_bump.grad(pts - e)) / (2 * h)))))
    return float(np.max(np.abs(dev)) + np.max(np.abs(dg)) + hess)


def check_stability(metric, bump_metric, report: TrapReport, cfg: TrapConfig,
                    max_step: Optional[float] = None) -> dict:
    """Re-measure (L, trapped) for the perturbed metric against the margin.

    Perturbations within the margin must keep the trapped flag and at most
    double L; larger ones are measured anyway but only reported, with the
    verdict "outside guarantee".
    """
    delta_c2 = c2_norm(bump_metric, half_width=2.5 * report.R)
    perturbed = PerturbedMetric(metric, bump_metric)
    new = compute_L(perturbed, report.R, cfg, M=report.M, max_step=max_step)
    within = delta_c2 <= report.margin * (1 + 1e-9)
    ok = (new.trapped == report.trapped
          and (report.trapped or new.L <= 2.0 * report.L))
    verdict = ("stable" if ok else "violated") if within else "outside guarantee"
    return {
        "verdict": verdict,
        "within_margin": bool(within),
        "delta_c2": float(delta_c2),
        "margin": float(report.margin),
        "L_base": float(report.L),
        "L_perturbed": float(new.L),
        "trapped_base": bool(report.trapped),
        "trapped_perturbed": bool(new.trapped),
    }


# ---------------------------------------------------------------------------
# exterior escape check
# ---------------------------------------------------------------------------

def escape_check(metric, R: float, cfg: TrapConfig, n_seeds: int = 24,
                 exterior_norm: Optional[float] = None) -> dict:
    """Outward rays seeded at ``|x| >= R`` must escape without re-entering R/2.

    Mirrors the exterior no-return property that the smallness radius is
    built to guarantee; applies when the exterior norm is at or below the
    configured epsilon.
    """
    d = metric.d
    caps = RayCaps(length_cap=cfg.kappa * 4.0 * R,
                   exit_radius=cfg.exit_factor * 2.0 * R, R2=2.0 * R)
    failures = []
    min_radius = np.inf
    if d == 1:
        seeds = [PhasePoint([R], [1.0]), PhasePoint([-R], [-1.0]),
                 PhasePoint([1.5 * R], [1.0]), PhasePoint([-1.5 * R], [-1.0])]
    else:
        seeds = []
        golden = np.pi * (3.0 - np.sqrt(5.0))
        for i in range(n_seeds):
            pos = (R + 0.5 * R * (i % 3)) * _unit(golden * i)
            outward = pos / np.linalg.norm(pos)
            tilt = 0.4 * np.pi * ((i % 5) / 4.0 - 0.5)
            c, s = np.cos(tilt), np.sin(tilt)
            direction = np.array([c * outward[0] - s * outward[1],
                                  s * outward[0] + c * outward[1]])
            if direction @ outward <= 0.05:
                continue
            seeds.append(PhasePoint(pos, direction))
    for seed in seeds:
        ray = trace_ray(metric, seed, caps, tol=cfg.tracer_tol)
        radii = np.linalg.norm(ray.positions, axis=1)
        min_radius = min(min_radius, float(np.min(radii)))
        if ray.status != "escaped" or np.min(radii) < R / 2.0:
            failures.append(seed)
    return {"ok": not failures, "failures": failures,
            "min_radius": float(min_radius), "n_seeds": len(seeds)}
