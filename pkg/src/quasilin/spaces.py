"""Norms, frequency envelopes, and empirical estimate probes.

Space conventions, all on the periodic box:

* ``l^p_j`` cube norms sum ``|| chi_Q f ||`` over the smooth scale-j cube
  partition of :mod:`quasilin.grid`.
* The local-energy norm ``X`` takes a sup over dyadic scales l and sharp
  tiles Q of side ``2**l`` of ``2**(-l/2) ||u||_{L2(t,x on [0,T] x Q)}``;
  time integrals use the trapezoid rule on the uniform time grid (error
  O(dt^2)).
* ``X_j`` is the larger of ``2**(j/2) X`` and ``L^inf L^2``; summing cube
  pieces at matching scale and weighting bands by ``2**(2 j s)`` gives the
  graded space used for solutions.
* The dual-type forcing space is not computed exactly; :func:`y_surrogate`
  returns a documented (lower, upper) bracket, and every consumer that needs
  a forcing size uses the conservative upper value.

Frequency envelopes dominate dyadic block norms while varying slowly; the
construction here uses inclusive maxima so a single nonzero block still
dominates itself (the strict-maxima variant would assign it zero weight and
break admissibility).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import (
    Field,
    GridSpec,
    SpacetimeField,
    _cube_weights,
    exterior_cutoff,
    gaussian_field,
    inner,
    l2_norm,
    lp_project,
    sharp_tile_sums,
    trapezoid_weights,
)

__all__ = [
    "NormReport",
    "Envelope",
    "ProbeResult",
    "lpj_norm",
    "lp_hs_norm",
    "l1_hs_norm",
    "block_hs_norms",
    "exterior_l1_hs_norm",
    "x_norm",
    "xj_norm",
    "lp_xs_norm",
    "block_xs_norms",
    "linf_l2",
    "l1_l2",
    "linf_linf",
    "y_surrogate",
    "lp_ys_upper",
    "make_envelope",
    "envelope_of_field",
    "check_envelope",
    "probe_estimate",
    "restrict_time",
    "st_product",
    "st_scale",
    "st_mask",
]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class NormReport:
    name: str
    value: float
    per_scale: Optional[dict] = None

    def __float__(self):
        return float(self.value)


@dataclass
class Envelope:
    """Admissible frequency envelope with variation exponents (delta, sigma)."""
    c: np.ndarray
    delta: float
    sigma: float


@dataclass
class ProbeResult:
    estimate_id: str
    observed_ratio: float
    sample_count: int
    skipped: int = 0
    T_exponent_fit: Optional[float] = None
    ratios: Optional[list] = None


# ---------------------------------------------------------------------------
# fixed-time norms
# ---------------------------------------------------------------------------

def _cube_l2_values(f: Field, j: int) -> np.ndarray:
    """|| chi_Q f ||_{L2} over the scale-j partition, one value per cube."""
    spec = f.spec
    weights = _cube_weights(spec, min(j, spec.J))
    dens = np.sum(np.abs(f.comps) ** 2, axis=0)
    vals = np.sqrt(np.tensordot(weights ** 2, dens, axes=spec.d)
                   * spec.cell_volume)
    return vals


def _p_reduce(vals: np.ndarray, p) -> float:
    if p == 1:
        return float(np.sum(vals))
    if p == 2:
        return float(np.sqrt(np.sum(vals ** 2)))
    if p in (np.inf, "inf"):
        return float(np.max(vals))
    raise ValueError(f"unsupported cube exponent p={p}")


def lpj_norm(f: Field, j: int, p=1) -> float:
    """Cube-summed L2 norm at scale j with exponent p in {1, 2, inf}."""
    if j < 0:
        raise ValueError("cube scale must be nonnegative")
    return _p_reduce(_cube_l2_values(f, j), p)


def block_hs_norms(f: Field, s: float, p=1) -> np.ndarray:
    """Per-band weighted block norms ``2**(js) ||S_j f||_{l^p_j L2}``."""
    spec = f.spec
    out = np.empty(spec.k_max + 1)
    for j in range(spec.k_max + 1):
        out[j] = 2.0 ** (j * s) * lpj_norm(lp_project(f, j), j, p)
    return out


def lp_hs_norm(f: Field, s: float, p=1) -> NormReport:
    blocks = block_hs_norms(f, s, p)
    return NormReport(
        name=f"l{p}_H{s}",
        value=float(np.sqrt(np.sum(blocks ** 2))),
        per_scale={int(j): float(b) for j, b in enumerate(blocks)},
    )


def l1_hs_norm(f: Field, s: float) -> NormReport:
    """Square-summed dyadic blocks, each measured in the l1 cube norm."""
    return lp_hs_norm(f, s, p=1)


def exterior_l1_hs_norm(f: Field, s: float, radius: float, p=1) -> float:
    """l^p H^s size of f outside the ball of the given radius.

    The smooth cutoff vanishes inside ``radius/2`` and equals one outside
    ``radius``, matching the exterior smallness convention used to select R.
    """
    cut = exterior_cutoff(f.spec, radius / 2.0, radius)
    return lp_hs_norm(Field(f.spec, f.comps * cut), s, p).value


# ---------------------------------------------------------------------------
# spacetime norms
# ---------------------------------------------------------------------------

def _time_weights(u: SpacetimeField) -> np.ndarray:
    return trapezoid_weights(u.nt, u.dt)


def _slice_l2_sq(u: SpacetimeField) -> np.ndarray:
    """L2 norm squared of each time slice, shape (nt,)."""
    axes = tuple(range(1, u.data.ndim))
    return np.sum(np.abs(u.data) ** 2, axis=axes) * u.spec.cell_volume


def linf_l2(u: SpacetimeField) -> float:
    return float(np.sqrt(np.max(_slice_l2_sq(u))))


def l1_l2(u: SpacetimeField) -> float:
    return float(np.sum(_time_weights(u) * np.sqrt(_slice_l2_sq(u))))


def l2_l2(u: SpacetimeField) -> float:
    return float(np.sqrt(np.sum(_time_weights(u) * _slice_l2_sq(u))))


def linf_linf(u: SpacetimeField) -> float:
    return float(np.max(np.abs(u.data)))


def _time_integrated_density(u: SpacetimeField) -> np.ndarray:
    """trapz_t |u|^2 summed over components, shape = grid."""
    w = _time_weights(u)
    dens = np.sum(np.abs(u.data) ** 2, axis=1)
    return np.tensordot(w, dens, axes=1)


def x_norm(u: SpacetimeField) -> float:
    """Scale-weighted local L2: sup over scales and sharp tiles."""
    spec = u.spec
    dens = _time_integrated_density(u) * spec.cell_volume
    best = 0.0
    for l in range(spec.J + 1):
        tile = np.max(sharp_tile_sums(spec, dens, l))
        best = max(best, 2.0 ** (-l) * tile)
    return float(np.sqrt(best))


def xj_norm(u: SpacetimeField, j: int) -> float:
    """Half-smoothing local-energy norm at band scale j."""
    return max(2.0 ** (j / 2.0) * x_norm(u), linf_l2(u))


def _cube_pieces(u: SpacetimeField, j: int):
    spec = u.spec
    weights = _cube_weights(spec, min(j, spec.J))
    for q in range(weights.shape[0]):
        yield SpacetimeField(spec, u.times, u.data * weights[q])


def lpj_xj_norm(u: SpacetimeField, j: int, p=1) -> float:
    vals = np.array([xj_norm(piece, j) for piece in _cube_pieces(u, j)])
    return _p_reduce(vals, p)


def block_xs_norms(u: SpacetimeField, s: float, p=1,
                   bands: Optional[Sequence[int]] = None) -> np.ndarray:
    """Per-band weighted blocks ``2**(js) ||S_j u||_{l^p_j X_j}``."""
    spec = u.spec
    if bands is None:
        bands = range(spec.k_max + 1)
    out = np.zeros(max(bands) + 1)
    for j in bands:
        piece = st_apply_band(u, j)
        out[j] = 2.0 ** (j * s) * lpj_xj_norm(piece, j, p)
    return out


def lp_xs_norm(u: SpacetimeField, s: float, p=1) -> NormReport:
    blocks = block_xs_norms(u, s, p)
    return NormReport(
        name=f"l{p}_X{s}",
        value=float(np.sqrt(np.sum(blocks ** 2))),
        per_scale={int(j): float(b) for j, b in enumerate(blocks)},
    )


def st_apply_band(u: SpacetimeField, k: int) -> SpacetimeField:
    from .grid import band_profile, _fft, _ifft
    mult = band_profile(u.spec, k)
    data = _ifft(u.spec, _fft(u.spec, u.data) * mult)
    return SpacetimeField(u.spec, u.times, data)


def st_product(u: SpacetimeField, v: SpacetimeField) -> SpacetimeField:
    return SpacetimeField(u.spec, u.times, u.data * v.data)


def st_scale(u: SpacetimeField, a) -> SpacetimeField:
    return SpacetimeField(u.spec, u.times, u.data * a)


def st_mask(u: SpacetimeField, mask: np.ndarray) -> SpacetimeField:
    return SpacetimeField(u.spec, u.times, u.data * mask)


def restrict_time(u: SpacetimeField, T: float) -> SpacetimeField:
    keep = u.times <= u.times[0] + T + 1e-12
    return SpacetimeField(u.spec, u.times[keep], u.data[keep])


# ---------------------------------------------------------------------------
# dual-space surrogate
# ---------------------------------------------------------------------------

def _x_dual_upper(u: SpacetimeField) -> float:
    """min over scales of ``2**(l/2) sum_Q ||f||_{L2([0,T] x Q)}``.

    Bounds the pairing against any unit-X field, hence bounds the dual norm
    from above.
    """
    spec = u.spec
    dens = _time_integrated_density(u) * spec.cell_volume
    best = np.inf
    for l in range(spec.J + 1):
        val = 2.0 ** (l / 2.0) * np.sum(np.sqrt(sharp_tile_sums(spec, dens, l)))
        best = min(best, val)
    return float(best)


def _st_pair(f: SpacetimeField, w: SpacetimeField) -> complex:
    wts = _time_weights(f)
    vals = np.sum(f.data * np.conj(w.data), axis=tuple(range(1, f.data.ndim)))
    return complex(np.sum(wts * vals) * f.spec.cell_volume)


def _test_bank(u: SpacetimeField) -> list:
    """Deterministic unit-size test fields used for the duality lower bound."""
    spec = u.spec
    bank = []
    if linf_l2(u) > 0:
        bank.append(u)
    ones = np.ones((u.nt, 1) + spec.shape, dtype=np.complex128)
    bank.append(SpacetimeField(spec, u.times, ones))
    g = gaussian_field(spec, 1.0, spec.box / 8.0)
    bank.append(SpacetimeField(spec, u.times,
                               np.broadcast_to(g.comps, (u.nt,) + g.comps.shape).copy()))
    kmod = 2.0 ** max(1, spec.k_max - 1)
    gm = gaussian_field(spec, 1.0, spec.box / 8.0, modulation=[kmod] * spec.d)
    bank.append(SpacetimeField(spec, u.times,
                               np.broadcast_to(gm.comps, (u.nt,) + gm.comps.shape).copy()))
    return bank


def y_surrogate(f: SpacetimeField, j: int) -> tuple:
    """Bracket for the band-j forcing size ``2**(j/2) Y + L1 L2``.

    upper: the smaller of the scaled dual bound ``2**(-j/2) Yhat(f)`` (one-term
    split through the dual space) and ``||f||_{L1 L2}`` (one-term split through
    the integrable remainder).

    lower: best pairing ``|<f, w>| / max(2**(j/2) ||w||_X, ||w||_{Linf L2})``
    over a fixed bank of test fields that includes f itself.  The denominator
    is the j-scaled dual pairing weight; with it the bracket provably nests
    (lower <= upper on every input).
    """
    if linf_l2(f) == 0.0:
        return (0.0, 0.0)
    upper = min(2.0 ** (-j / 2.0) * _x_dual_upper(f), l1_l2(f))
    lower = 0.0
    for w in _test_bank(f):
        denom = max(2.0 ** (j / 2.0) * x_norm(w), linf_l2(w))
        if denom == 0.0:
            continue
        lower = max(lower, abs(_st_pair(f, w)) / denom)
    return (float(lower), float(upper))


def lp_ys_upper(f: SpacetimeField, s: float, p=1) -> NormReport:
    """Conservative graded forcing size built from per-band upper surrogates.

    Bands are combined exactly as in the solution-space grading, with the
    cube l^p sum applied to the band piece before the surrogate.
    """
    spec = f.spec
    blocks = np.zeros(spec.k_max + 1)
    for j in range(spec.k_max + 1):
        piece = st_apply_band(f, j)
        if p == 1:
            vals = [y_surrogate(q, j)[1] for q in _cube_pieces(piece, j)]
            band = float(np.sum(vals))
        else:
            vals = [y_surrogate(q, j)[1] for q in _cube_pieces(piece, j)]
            band = float(np.sqrt(np.sum(np.asarray(vals) ** 2)))
        blocks[j] = 2.0 ** (j * s) * band
    return NormReport(
        name=f"l{p}_Y{s}_upper",
        value=float(np.sqrt(np.sum(blocks ** 2))),
        per_scale={int(j): float(b) for j, b in enumerate(blocks)},
    )


# ---------------------------------------------------------------------------
# frequency envelopes
# ---------------------------------------------------------------------------

def make_envelope(block_norms: Sequence[float], delta: float = 0.25,
                  sigma: float = 2.0) -> Envelope:
    """Dominating slowly-varying envelope of a block-norm sequence.

    ``c_j = max( max_{k >= j} 2**(-delta (k-j)) a_k,
    max_{k <= j} 2**(-sigma (j-k)) a_k )`` with inclusive maxima, so
    ``c_j >= a_j`` always holds.
    """
    a = np.asarray(block_norms, dtype=float)
    if np.any(a < 0):
        raise ValueError("block norms must be nonnegative")
    idx = np.arange(a.size)
    gap = idx[np.newaxis, :] - idx[:, np.newaxis]  # k - j
    weight = np.exp2(-delta * np.maximum(gap, 0) - sigma * np.maximum(-gap, 0))
    c = np.max(weight * a[np.newaxis, :], axis=1)
    return Envelope(c=c, delta=delta, sigma=sigma)


def envelope_of_field(f: Field, s: float, p=1, delta: float = 0.25,
                      sigma: float = 2.0) -> Envelope:
    return make_envelope(block_hs_norms(f, s, p), delta, sigma)


def check_envelope(env: Envelope, block_norms: Sequence[float],
                   tol: float = 1e-12) -> dict:
    """Verify the four admissibility conditions against the generating blocks.

    Returns per-condition worst margins (nonnegative = satisfied).
    """
    a = np.asarray(block_norms, dtype=float)
    c = env.c
    scale = max(np.max(c), 1e-300)
    # (1) dominates the blocks
    m1 = float(np.min(c - a))
    # (2) controlled by the total block mass, with the constant implied by
    # the construction's geometric tails
    const = 1.0 / (1.0 - 4.0 ** (-env.delta)) + 1.0 / (1.0 - 4.0 ** (-env.sigma))
    m2 = float(const * np.sum(a ** 2) - np.sum(c ** 2))
    # (3) slowly varying to the left, (4) uniformly varying to the right
    m3 = np.inf
    m4 = np.inf
    for j in range(c.size):
        for k in range(c.size):
            if j < k:
                m3 = min(m3, c[j] - 2.0 ** (env.delta * (j - k)) * c[k])
            elif j > k:
                m4 = min(m4, c[j] - 2.0 ** (env.sigma * (k - j)) * c[k])
    ok = (m1 >= -tol * scale and m2 >= -tol * scale ** 2
          and m3 >= -tol * scale and m4 >= -tol * scale)
    return {"dominates": m1, "mass": m2, "left": float(m3),
            "right": float(m4), "ok": bool(ok)}


# ---------------------------------------------------------------------------
# estimate probes
# ---------------------------------------------------------------------------

def _probe_bilinear_one(sample, params):
    u, v = sample["u"], sample["v"]
    s, sigma = params["s"], params["sigma"]
    lhs = lp_xs_norm(st_product(u, v), sigma, p=params.get("p", 1)).value
    rhs = (lp_xs_norm(u, sigma, p=params.get("p", 1)).value
           * lp_xs_norm(v, s, p=params.get("p", 1)).value)
    return lhs, rhs


def _probe_bilinear_two(sample, params):
    u, v = sample["u"], sample["v"]
    s, sigma = params["s"], params["sigma"]
    p = params.get("p", 1)
    lhs = lp_xs_norm(st_product(u, v), sigma, p=p).value
    rhs = (lp_xs_norm(u, sigma, p=p).value * lp_xs_norm(v, s, p=p).value
           + lp_xs_norm(u, s, p=p).value * lp_xs_norm(v, sigma, p=p).value)
    return lhs, rhs


def _probe_xxy(sample, params):
    u, v = sample["u"], sample["v"]
    s, sigma, delta = params["s"], params["sigma"], params.get("delta", 0.0)
    p = params.get("p", 1)
    lhs = lp_ys_upper(st_product(u, v), sigma - delta, p=p).value
    rhs = (lp_xs_norm(u, sigma - 1, p=p).value
           * lp_xs_norm(v, s - 1, p=p).value)
    return lhs, rhs


def _probe_xxy1(sample, params):
    u, v = sample["u"], sample["v"]
    s, sigma, delta = params["s"], params["sigma"], params.get("delta", 0.0)
    p = params.get("p", 1)
    lhs = lp_ys_upper(st_product(u, v), sigma - delta, p=p).value
    rhs = (lp_xs_norm(u, sigma, p=p).value
           * lp_xs_norm(v, s - 2, p=p).value)
    return lhs, rhs


def _probe_moser(sample, params):
    u = sample["u"]
    s, sigma = params["s"], params["sigma"]
    p = params.get("p", 1)
    F = params.get("F", lambda z: np.abs(z) ** 2 * z)
    Fu = SpacetimeField(u.spec, u.times, F(u.data))
    lhs = lp_xs_norm(Fu, sigma, p=p).value
    rhs = (lp_xs_norm(u, sigma, p=p).value
           * lp_xs_norm(u, s, p=p).value ** 2)
    return lhs, rhs


def _probe_trilinear(sample, params):
    u, v, w = sample["u"], sample["v"], sample["w"]
    s, sigma, delta = params["s"], params["sigma"], params.get("delta", 0.0)
    lhs = lp_ys_upper(st_product(st_product(u, v), w), sigma - delta, p=2).value
    rhs = (lp_xs_norm(u, sigma - 1, p=2).value
           * lp_xs_norm(v, s - 1, p=2).value
           * lp_xs_norm(w, s - 1, p=2).value)
    return lhs, rhs


def _probe_bernstein(sample, params):
    u = sample["u"]
    spec = u.spec
    best = 0.0
    found = False
    for j in range(spec.k_max + 1):
        piece = st_apply_band(u, j)
        rhs = 2.0 ** (j * spec.d / 2.0) * lpj_xj_norm(piece, j, p=1)
        lhs = linf_linf(piece)
        if rhs > 1e-14:
            best = max(best, lhs / rhs)
            found = True
    if not found:
        return 0.0, 0.0
    return best, 1.0


def _probe_g_bound(sample, params):
    from .model import remainder_G
    u, nl = sample["u"], sample["nl"]
    sigma = params["sigma"]
    p = params.get("p", 1)
    slices = [remainder_G(u.slice(i), nl) for i in range(u.nt)]
    Gu = SpacetimeField.from_slices(u.times, slices)
    lhs = lp_ys_upper(Gu, sigma, p=p).value
    rhs = lp_xs_norm(u, sigma, p=p).value
    return lhs, rhs


ESTIMATES = {
    "u_squared+": _probe_bilinear_one,
    "u_squared": _probe_bilinear_two,
    "xxy2+": _probe_xxy,
    "xxy1+": _probe_xxy1,
    "moser": _probe_moser,
    "xxxy+": _probe_trilinear,
    "bernstein": _probe_bernstein,
    "G_bound": _probe_g_bound,
}


def probe_estimate(estimate_id: str, sample_generator: Callable, trials: int,
                   params: Optional[dict] = None,
                   T_sweep: Optional[Sequence[float]] = None) -> ProbeResult:
    """Measure the empirical constant of a named inequality.

    ``sample_generator(rng, trial)`` returns the sample dict consumed by the
    probe; samples with vanishing right-hand side are skipped and counted.
    When ``T_sweep`` is given, every sample is re-measured on each truncated
    time interval and the slope of log(ratio) against log(T) is fitted.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if estimate_id not in ESTIMATES:
        raise KeyError(f"unknown estimate id {estimate_id!r}")
    probe = ESTIMATES[estimate_id]
    params = dict(params or {})
    rng = np.random.default_rng(params.pop("seed", 0))

    ratios = []
    skipped = 0
    sweep_ratios = {T: [] for T in (T_sweep or [])}
    for trial in range(trials):
        sample = sample_generator(rng, trial)
        lhs, rhs = probe(sample, params)
        if rhs <= 1e-14:
            skipped += 1
            continue
        ratios.append(lhs / rhs)
        for T in (T_sweep or []):
            cut = {k: (restrict_time(v, T) if isinstance(v, SpacetimeField) else v)
                   for k, v in sample.items()}
            lhs_T, rhs_T = probe(cut, params)
            if rhs_T > 1e-14:
                sweep_ratios[T].append(lhs_T / rhs_T)

    fit = None
    if T_sweep:
        Ts, means = [], []
        for T, vals in sweep_ratios.items():
            if vals:
                Ts.append(T)
                means.append(np.mean(vals))
        if len(Ts) >= 2:
            fit = float(np.polyfit(np.log(Ts), np.log(means), 1)[0])

    return ProbeResult(
        estimate_id=estimate_id,
        observed_ratio=float(np.max(ratios)) if ratios else float("nan"),
        sample_count=len(ratios),
        skipped=skipped,
        T_exponent_fit=fit,
        ratios=[float(r) for r in ratios],
    )
