"""Bicharacteristic flow integration for ``a(x, xi) = g^{jk}(x) xi_j xi_k``.

The full flow is ``xdot = a_xi = 2 g xi``, ``xidot = -a_x``; on a flat
background rays are straight lines with speed ``2 |xi|``.  The cosphere
variant projects the covector equation onto ``|xi| = 1``
(``xidot = -a_x + (a_x . xi) xi``), which removes the scaling freedom and
makes Euclidean ray length well defined as ``integral |xdot| dt``.

Metrics come in two backings: closed-form radial families (flat, conformal
bump, ring well) evaluated exactly on all of space, and grid-sampled fields
evaluated off-grid by trigonometric interpolation (exact for band-limited
samples, periodic across the box).  Gradients are exact in both cases; the
tracer never differences the metric.

Integration uses an embedded Runge-Kutta 4(5) pair with absolute and
relative tolerance 1e-10; crossings of the ``|x| = 2R`` sphere are located
by root refinement on the dense output so chord lengths are sharp.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .grid import Field, GridSpec, _fft

__all__ = [
    "PhasePoint",
    "Ray",
    "RayCaps",
    "FlatMetric",
    "ConformalMetric",
    "GridMetric",
    "conformal_bump_metric",
    "ring_well_metric",
    "metric_from_field",
    "flow_step",
    "cosphere_flow",
    "trace_ray",
    "compare_flows",
    "hamiltonian",
]


# ---------------------------------------------------------------------------
# phase points and rays
# ---------------------------------------------------------------------------

@dataclass
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi))):
            raise ValueError("phase point must be finite")


@dataclass
class RayCaps:
    """Termination thresholds for the tracer."""
    length_cap: float
    exit_radius: float
    R2: float                      # radius of the 2B_R ball for length bookkeeping
    grid_limit: Optional[float] = None


@dataclass
class Ray:
    samples: list                  # (t, x, xi, arclength) tuples
    status: str                    # "escaped" | "capped" | "left-grid"
    length: float
    length_in_2BR: float
    seed: Optional[PhasePoint] = None

    @property
    def times(self):
        return np.array([s[0] for s in self.samples])

    @property
    def positions(self):
        return np.array([s[1] for s in self.samples])


class IntegrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class FlatMetric:
    """Identity coefficient matrix; rays are exact straight lines."""

    def __init__(self, d: int):
        self.d = d

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], self.d, self.d))
        for j in range(self.d):
            out[:, j, j] = 1.0
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], self.d, self.d, self.d))

    def c_bounds(self):
        return (1.0, 1.0)


class ConformalMetric:
    """Radial conformal family ``g = gamma(|x|) I`` with exact gradient."""

    def __init__(self, d: int, gamma: Callable, dgamma: Callable,
                 description: str = "conformal"):
        self.d = d
        self.gamma = gamma
        self.dgamma = dgamma
        self.description = description

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)
        gam = self.gamma(r)
        out = np.zeros((x.shape[0], self.d, self.d))
        for j in range(self.d):
            out[:, j, j] = gam
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)
        safe = np.where(r > 1e-14, r, 1.0)
        dg = self.dgamma(r) / safe
        dg = np.where(r > 1e-14, dg, 0.0)
        out = np.zeros((x.shape[0], self.d, self.d, self.d))
        for i in range(self.d):
            for j in range(self.d):
                out[:, i, j, j] = dg * x[:, i]
        return out

    def c_bounds(self):
        r = np.linspace(0, 200, 4001)
        g = self.gamma(r)
        return (float(np.min(g)), float(np.max(g)))


def conformal_bump_metric(d: int, amplitude: float, width: float) -> ConformalMetric:
    """``g = (1 + A exp(-r^2 / w^2)) I``; repulsive bump for A > 0."""
    A, w = amplitude, width
    return ConformalMetric(
        d,
        gamma=lambda r: 1.0 + A * np.exp(-(r / w) ** 2),
        dgamma=lambda r: A * np.exp(-(r / w) ** 2) * (-2.0 * r / w ** 2),
        description=f"conformal bump A={A} w={w}",
    )


def ring_well_metric(d: int, amplitude: float, radius: float,
                     width: float = 1.0) -> ConformalMetric:
    """``g = (1 + A exp(-((r - r0)/w)^2)) I``.

    A large-amplitude annular barrier acts as a reflecting cavity wall:
    tangentially launched interior rays circulate indefinitely, so the
    metric is trapping although every radial ray still passes through.
    """
    A, r0, w = amplitude, radius, width
    return ConformalMetric(
        d,
        gamma=lambda r: 1.0 + A * np.exp(-((r - r0) / w) ** 2),
        dgamma=lambda r: A * np.exp(-((r - r0) / w) ** 2) * (-2.0 * (r - r0) / w ** 2),
        description=f"ring well A={A} r0={r0} w={w}",
    )


class GridMetric:
    """Grid-sampled coefficient matrix with trigonometric interpolation.

    Keeps the Fourier modes above a relative threshold; values and exact
    gradients at arbitrary points are evaluated by summing the retained
    modes, so band-limited sampled metrics are reproduced exactly and the
    evaluation extends periodically beyond the box.
    """

    def __init__(self, spec: GridSpec, g: np.ndarray, threshold: float = 1e-13):
        self.spec = spec
        self.d = spec.d
        d = spec.d
        coefs = _fft(spec, g.astype(complex)) / spec.n ** d
        flat = coefs.reshape(d, d, -1)
        mags = np.max(np.abs(flat), axis=(0, 1))
        keep = mags > threshold * max(np.max(mags), 1e-300)
        xi_mesh = spec.freq_mesh()
        modes = np.stack([m.ravel()[keep] for m in xi_mesh], axis=1)  # (K, d)
        # re-reference phases to centered coordinates
        x0 = spec.axis()[0]
        shift = np.exp(-1j * np.sum(modes * x0, axis=1))
        self.modes = modes
        self.coefs = flat[:, :, keep] * shift          # (d, d, K)
        self.n_modes = int(np.sum(keep))

    def _phases(self, x: np.ndarray) -> np.ndarray:
        return np.exp(1j * (x @ self.modes.T))          # (N, K)

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        ph = self._phases(x)
        return np.real(np.einsum("nk,ijk->nij", ph, self.coefs))

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        ph = self._phases(x)
        out = np.empty((x.shape[0], self.d, self.d, self.d))
        for i in range(self.d):
            out[:, i] = np.real(np.einsum(
                "nk,ijk->nij", ph * (1j * self.modes[:, i]), self.coefs))
        return out

    def c_bounds(self):
        g = self.eval(np.stack([m.ravel() for m in self.spec.mesh()], axis=1))
        if self.d == 1:
            lam = g[:, 0, 0]
        else:
            tr = g[:, 0, 0] + g[:, 1, 1]
            disc = np.sqrt((g[:, 0, 0] - g[:, 1, 1]) ** 2 + 4 * g[:, 0, 1] ** 2)
            lam = 0.5 * (tr - disc)
        return (float(np.min(lam)), float(np.max(g)))


def metric_from_field(u: Field, nl) -> GridMetric:
    """Grid metric generated by a state through its nonlinearity."""
    from .model import metric_of
    return GridMetric(u.spec, metric_of(u, nl))


class PerturbedMetric:
    """Sum of a base metric and a small analytic perturbation."""

    def __init__(self, base, bump):
        self.d = base.d
        self.base = base
        self.bump = bump

    def eval(self, x):
        return self.base.eval(x) + self.bump.eval(x) - np.eye(self.d)

    def grad(self, x):
        return self.base.grad(x) + self.bump.grad(x)

    def c_bounds(self):
        lo1, hi1 = self.base.c_bounds()
        lo2, hi2 = self.bump.c_bounds()
        return (lo1 + lo2 - 1.0, hi1 + hi2 - 1.0)


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

def hamiltonian(metric, x: np.ndarray, xi: np.ndarray) -> float:
    g = metric.eval(np.atleast_2d(x))[0]
    return float(xi @ g @ xi)


def _full_rhs(metric, d):
    def rhs(t, y):
        x, xi = y[:d], y[d:]
        g = metric.eval(x[np.newaxis])[0]
        dg = metric.grad(x[np.newaxis])[0]
        xdot = 2.0 * g @ xi
        a_x = np.einsum("ijk,j,k->i", dg, xi, xi)
        return np.concatenate([xdot, -a_x])
    return rhs


def _cosphere_rhs(metric, d, with_length=True):
    def rhs(t, y):
        x, xi = y[:d], y[d:2 * d]
        g = metric.eval(x[np.newaxis])[0]
        dg = metric.grad(x[np.newaxis])[0]
        xdot = 2.0 * g @ xi
        a_x = np.einsum("ijk,j,k->i", dg, xi, xi)
        xidot = -a_x + (a_x @ xi) * xi
        if with_length:
            return np.concatenate([xdot, xidot, [np.linalg.norm(xdot)]])
        return np.concatenate([xdot, xidot])
    return rhs


# ---------------------------------------------------------------------------
# single adaptive step (Cash-Karp embedded pair)
# ---------------------------------------------------------------------------

_CK_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [3 / 10, -9 / 10, 6 / 5],
    [-11 / 54, 5 / 2, -70 / 27, 35 / 27],
    [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
]
_CK_B5 = [37 / 378, 0, 250 / 621, 125 / 594, 0, 512 / 1771]
_CK_B4 = [2825 / 27648, 0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4]


def _embedded_step(rhs, t, y, dt, tol):
    """One Cash-Karp step; returns (y5, error_estimate)."""
    k = []
    for stage in range(6):
        ys = y + dt * sum(a * kk for a, kk in zip(_CK_A[stage], k)) \
            if stage else y.copy()
        k.append(np.asarray(rhs(t, ys)))
    y5 = y + dt * sum(b * kk for b, kk in zip(_CK_B5, k))
    y4 = y + dt * sum(b * kk for b, kk in zip(_CK_B4, k))
    return y5, float(np.max(np.abs(y5 - y4)))


def _adaptive_step(rhs, t, y, dt, tol, max_rejects=60):
    rejects = 0
    while True:
        y_new, err = _embedded_step(rhs, t, y, dt, tol)
        if err <= tol or dt < 1e-15:
            return y_new, dt
        dt *= max(0.2, 0.9 * (tol / err) ** 0.25)
        rejects += 1
        if rejects > max_rejects:
            raise IntegrationError(
                f"step rejection cascade at t={t:.4g} (err {err:.2e}); "
                "metric too rough at this resolution")


def flow_step(metric, p: PhasePoint, dt: float, tol: float = 1e-10) -> PhasePoint:
    """One adaptive embedded step of the full Hamilton flow."""
    d = p.x.size
    rhs = _full_rhs(metric, d)
    y = np.concatenate([p.x, p.xi])
    t, remaining = 0.0, dt
    h = dt
    while remaining > 1e-15:
        h = min(h, remaining)
        y, used = _adaptive_step(rhs, t, y, h, tol)
        t += used
        remaining -= used
    return PhasePoint(y[:d], y[d:])


def cosphere_flow(metric, p: PhasePoint, dt: float, tol: float = 1e-10) -> PhasePoint:
    """One adaptive step of the cosphere-projected flow; keeps ``|xi| = 1``."""
    d = p.x.size
    if abs(np.linalg.norm(p.xi) - 1.0) > 1e-9:
        raise ValueError("cosphere flow requires a unit covector")
    rhs = _cosphere_rhs(metric, d, with_length=False)
    y = np.concatenate([p.x, p.xi])
    t, remaining = 0.0, dt
    h = dt
    while remaining > 1e-15:
        h = min(h, remaining)
        y, used = _adaptive_step(rhs, t, y, h, tol)
        t += used
        remaining -= used
    return PhasePoint(y[:d], y[d:])


# ---------------------------------------------------------------------------
# ray tracing
# ---------------------------------------------------------------------------

def trace_ray(metric, p: PhasePoint, caps: RayCaps, tol: float = 1e-10,
              max_step: Optional[float] = None) -> Ray:
    """Integrate the cosphere flow until escape, cap, or grid exit.

    Arclength rides along as an integrated state; the ``|x| = 2R`` crossings
    are refined on the dense output so the in-ball length is sharp.
    """
    d = p.x.size
    if abs(np.linalg.norm(p.xi) - 1.0) > 1e-9:
        raise ValueError("trace_ray requires a unit covector seed")
    rhs = _cosphere_rhs(metric, d, with_length=True)
    y0 = np.concatenate([p.x, p.xi, [0.0]])

    lo = metric.c_bounds()[0]
    t_max = caps.length_cap / max(2.0 * lo, 1e-6) * 1.5 + 1.0

    def ev_cross(t, y):
        return float(np.linalg.norm(y[:d]) - caps.R2)
    ev_cross.terminal = False

    def ev_escape(t, y):
        return float(np.linalg.norm(y[:d]) - caps.exit_radius)
    ev_escape.terminal = True
    ev_escape.direction = 1.0

    def ev_cap(t, y):
        return float(y[-1] - caps.length_cap)
    ev_cap.terminal = True
    ev_cap.direction = 1.0

    events = [ev_cross, ev_escape, ev_cap]
    if caps.grid_limit is not None:
        def ev_grid(t, y):
            return float(np.max(np.abs(y[:d])) - caps.grid_limit)
        ev_grid.terminal = True
        ev_grid.direction = 1.0
        events.append(ev_grid)

    kwargs = dict(method="RK45", rtol=tol, atol=tol, dense_output=True,
                  events=events)
    if max_step is not None:
        kwargs["max_step"] = max_step
    sol = solve_ivp(rhs, (0.0, t_max), y0, **kwargs)
    if not sol.success:
        raise IntegrationError(f"tracer failed: {sol.message}")

    if sol.t_events[1].size:
        status = "escaped"
    elif sol.t_events[2].size:
        status = "capped"
    elif caps.grid_limit is not None and sol.t_events[3].size:
        status = "left-grid"
    else:
        status = "capped"

    samples = [(float(t), sol.y[:d, i].copy(), sol.y[d:2 * d, i].copy(),
                float(sol.y[-1, i])) for i, t in enumerate(sol.t)]
    total_len = float(sol.y[-1, -1])
    len_2BR = _length_inside(sol, d, caps.R2)
    return Ray(samples=samples, status=status, length=total_len,
               length_in_2BR=len_2BR, seed=p)


def _length_inside(sol, d: int, R2: float) -> float:
    """Arclength accumulated while ``|x| <= R2``, using refined crossings."""
    t_end = sol.t[-1]
    crossings = [t for t in sol.t_events[0] if t <= t_end + 1e-12]
    marks = [0.0] + sorted(crossings) + [t_end]
    total = 0.0
    for a, b in zip(marks[:-1], marks[1:]):
        if b - a < 1e-14:
            continue
        mid = 0.5 * (a + b)
        y = sol.sol(mid)
        if np.linalg.norm(y[:d]) <= R2:
            total += float(sol.sol(b)[-1] - sol.sol(a)[-1])
    return total


def compare_flows(m1, m2, p: PhasePoint, horizon: float,
                  n_samples: int = 200, tol: float = 1e-10):
    """Deviation trace ``|x - x~| + |xi - xi~|`` of two metrics' flows."""
    d = p.x.size
    t_eval = np.linspace(0.0, horizon, n_samples)
    out = []
    for metric in (m1, m2):
        rhs = _cosphere_rhs(metric, d, with_length=False)
        sol = solve_ivp(rhs, (0.0, horizon), np.concatenate([p.x, p.xi]),
                        method="RK45", rtol=tol, atol=tol, t_eval=t_eval)
        if not sol.success:
            raise IntegrationError(sol.message)
        out.append(sol.y)
    dev = (np.linalg.norm(out[0][:d] - out[1][:d], axis=0)
           + np.linalg.norm(out[0][d:] - out[1][d:], axis=0))
    return float(np.max(dev)), (t_eval, dev)
