"""Periodic grid substrate: transforms, dyadic band filters, cube partitions.

The computational domain is a periodic box of side ``2**J`` centered at the
origin, sampled with ``n`` points per axis.  The box stands in for free space:
all data of interest is concentrated well inside it, and "spatial infinity"
statements are read relative to distance from the origin.

Frequency-space conventions:

* ``to_frequency`` approximates the continuum Fourier transform
  (forward kernel ``exp(-i x.xi)``, weight ``h**d``), so the grid L2 norm is
  preserved in the sense of Plancherel with measure ``dxi / (2 pi)**d``.
* Dyadic band filters use a raised-cosine transition over one octave.  Band 0
  selects ``|xi| <~ 1``; interior band k is supported in
  ``2**(k-1) <= |xi| <= 2**(k+1)``; the top band is the residual high-pass so
  the filters sum to the identity exactly.

Cube partitions at scale j tile the box with cubes of side ``2**j``.  Each
weight is a translated smooth bump supported in the 2-dilate of its cube, and
the weights sum to one at every grid point.

Vector-valued fields carry their m components as a leading axis; every
operation here acts componentwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "FrequencyField",
    "SpacetimeField",
    "to_frequency",
    "from_frequency",
    "spectral_derivative",
    "spectral_gradient",
    "lp_project",
    "lp_project_le",
    "lp_project_range",
    "band_profile",
    "cube_partition",
    "cube_centers",
    "sharp_tile_sums",
    "radial_mesh",
    "smooth_ramp",
    "exterior_cutoff",
    "interior_cutoff",
    "gaussian_field",
    "ring_field",
    "random_field",
    "l2_norm",
    "inner",
]


# ---------------------------------------------------------------------------
# grid specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Periodic sampling grid: ``d`` axes, ``n`` points each, box side ``2**J``.

    Parameters
    ----------
    d : int
        Spatial dimension (1 or 2 at desk scale).
    n : int
        Points per axis; must be a power of two.
    J : int
        Dyadic exponent of the box side; the period is ``2**J``.
    """

    d: int
    n: int
    J: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension d={self.d} not supported (use 1 or 2)")
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n={self.n} must be a power of two >= 4")
        if 2 ** self.k_max > np.pi * self.n / self.box + 1e-9:
            raise ValueError("grid cannot resolve its top dyadic band")

    @property
    def box(self) -> float:
        return float(2 ** self.J)

    @property
    def h(self) -> float:
        return self.box / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def k_max(self) -> int:
        """Top dyadic band index; bands run ``0 .. k_max`` inclusive."""
        return int(np.floor(np.log2(np.pi * self.n / (2 ** self.J))))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def axis(self) -> np.ndarray:
        return _axis(self)

    def mesh(self) -> tuple:
        """Coordinate arrays, one per axis, each of shape ``spec.shape``."""
        return _mesh(self)

    def freq_axis(self) -> np.ndarray:
        return _freq_axis(self)

    def freq_mesh(self) -> tuple:
        return _freq_mesh(self)

    def abs_freq(self) -> np.ndarray:
        return _abs_freq(self)


@lru_cache(maxsize=64)
def _axis(spec: GridSpec) -> np.ndarray:
    return (np.arange(spec.n) - spec.n // 2) * spec.h


@lru_cache(maxsize=64)
def _mesh(spec: GridSpec) -> tuple:
    ax = _axis(spec)
    return tuple(np.meshgrid(*([ax] * spec.d), indexing="ij"))


@lru_cache(maxsize=64)
def _freq_axis(spec: GridSpec) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(spec.n, d=spec.h)


@lru_cache(maxsize=64)
def _freq_mesh(spec: GridSpec) -> tuple:
    xi = _freq_axis(spec)
    return tuple(np.meshgrid(*([xi] * spec.d), indexing="ij"))


@lru_cache(maxsize=64)
def _abs_freq(spec: GridSpec) -> np.ndarray:
    return np.sqrt(sum(x ** 2 for x in _freq_mesh(spec)))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class Field:
    """Complex samples on a grid, components on the leading axis."""

    __slots__ = ("spec", "comps")

    def __init__(self, spec: GridSpec, comps: np.ndarray):
        comps = np.asarray(comps, dtype=np.complex128)
        if comps.ndim == spec.d:
            comps = comps[np.newaxis]
        if comps.shape[1:] != spec.shape:
            raise ValueError(
                f"sample shape {comps.shape} does not match grid {spec.shape}")
        if not np.all(np.isfinite(comps)):
            raise ValueError("field contains non-finite samples")
        self.spec = spec
        self.comps = comps

    @property
    def m(self) -> int:
        return self.comps.shape[0]

    @classmethod
    def zeros(cls, spec: GridSpec, m: int = 1) -> "Field":
        return cls(spec, np.zeros((m,) + spec.shape, dtype=np.complex128))

    @classmethod
    def from_function(cls, spec: GridSpec, func: Callable) -> "Field":
        """Sample ``func(*coords)`` on the grid (single component)."""
        return cls(spec, np.asarray(func(*spec.mesh()), dtype=np.complex128))

    def copy(self) -> "Field":
        return Field(self.spec, self.comps.copy())

    def __add__(self, other: "Field") -> "Field":
        return Field(self.spec, self.comps + other.comps)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.spec, self.comps - other.comps)

    def __mul__(self, scalar) -> "Field":
        return Field(self.spec, self.comps * scalar)

    __rmul__ = __mul__

    def conj(self) -> "Field":
        return Field(self.spec, np.conj(self.comps))


class FrequencyField:
    """Fourier-side samples produced by :func:`to_frequency`."""

    __slots__ = ("spec", "comps")

    def __init__(self, spec: GridSpec, comps: np.ndarray):
        comps = np.asarray(comps, dtype=np.complex128)
        if comps.ndim == spec.d:
            comps = comps[np.newaxis]
        if comps.shape[1:] != spec.shape:
            raise ValueError(
                f"sample shape {comps.shape} does not match grid {spec.shape}")
        self.spec = spec
        self.comps = comps


class SpacetimeField:
    """Uniformly sampled time slices sharing one grid.

    ``data`` has shape ``(nt, m, *grid)``; ``times`` is strictly increasing
    with uniform step.
    """

    __slots__ = ("spec", "times", "data")

    def __init__(self, spec: GridSpec, times: np.ndarray, data: np.ndarray):
        times = np.asarray(times, dtype=float)
        data = np.asarray(data, dtype=np.complex128)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("empty time axis")
        if times.size > 1:
            dts = np.diff(times)
            if np.any(dts <= 0):
                raise ValueError("times must be strictly increasing")
            if np.max(np.abs(dts - dts[0])) > 1e-9 * max(abs(dts[0]), 1e-30):
                raise ValueError("time sampling must be uniform")
        if data.ndim == spec.d + 1:
            data = data[:, np.newaxis]
        if data.shape[0] != times.size or data.shape[2:] != spec.shape:
            raise ValueError("slice shape does not match time axis / grid")
        self.spec = spec
        self.times = times
        self.data = data

    @property
    def nt(self) -> int:
        return self.times.size

    @property
    def m(self) -> int:
        return self.data.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.nt > 1 else 0.0

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    def slice(self, i: int) -> Field:
        return Field(self.spec, self.data[i])

    @classmethod
    def from_slices(cls, times, slices: Sequence[Field]) -> "SpacetimeField":
        spec = slices[0].spec
        return cls(spec, np.asarray(times, float),
                   np.stack([s.comps for s in slices]))


def trapezoid_weights(nt: int, dt: float) -> np.ndarray:
    """Trapezoid quadrature weights on a uniform time grid."""
    if nt == 1:
        return np.array([1.0])
    w = np.full(nt, dt)
    w[0] = w[-1] = dt / 2
    return w


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def _fft(spec: GridSpec, arr: np.ndarray) -> np.ndarray:
    return np.fft.fftn(arr, axes=tuple(range(-spec.d, 0)))


def _ifft(spec: GridSpec, arr: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(arr, axes=tuple(range(-spec.d, 0)))


def to_frequency(f: Field) -> FrequencyField:
    """Forward transform with continuum scaling (kernel weight ``h**d``).

    The phase is referred to the centered coordinates, so a real, even field
    transforms to a real, even spectrum.
    """
    spec = f.spec
    return FrequencyField(spec, _fft(spec, f.comps) * _phase_fix(spec)
                          * spec.cell_volume)


def from_frequency(F: FrequencyField) -> Field:
    spec = F.spec
    return Field(spec, _ifft(spec, F.comps / _phase_fix(spec))
                 / spec.cell_volume)


@lru_cache(maxsize=64)
def _phase_fix(spec: GridSpec) -> np.ndarray:
    # np.fft indexes samples from the box corner; this factor re-references
    # the transform phase to the centered coordinates.
    out = np.ones(spec.shape, dtype=np.complex128)
    x0 = _axis(spec)[0]
    for ax, xi in enumerate(_freq_mesh(spec)):
        out = out * np.exp(-1j * xi * x0)
    return out


def spectral_derivative(f: Field, axis: int) -> Field:
    """Exact derivative of band-limited fields along one axis."""
    spec = f.spec
    if not 0 <= axis < spec.d:
        raise ValueError(f"axis {axis} out of range for d={spec.d}")
    return Field(spec, _deriv_arr(spec, f.comps, axis))


def _deriv_arr(spec: GridSpec, arr: np.ndarray, axis: int) -> np.ndarray:
    mult = _deriv_mult(spec, axis)
    return _ifft(spec, _fft(spec, arr) * mult)


@lru_cache(maxsize=64)
def _deriv_mult(spec: GridSpec, axis: int) -> np.ndarray:
    xi = _freq_axis(spec).copy()
    xi[spec.n // 2] = 0.0  # drop the unpaired Nyquist mode for odd symbols
    shape = [1] * spec.d
    shape[axis] = spec.n
    return (1j * xi).reshape(shape)


def spectral_gradient(f: Field) -> list:
    return [spectral_derivative(f, ax) for ax in range(f.spec.d)]


# ---------------------------------------------------------------------------
# dyadic band filters
# ---------------------------------------------------------------------------

_PSI_PLATEAU = 1.4  # low-pass stays at 1 this far past the nominal edge


def _psi(r: np.ndarray) -> np.ndarray:
    """Raised-cosine low-pass: 1 on [0, 1.4], 0 beyond 2, smooth in log r.

    The plateau keeps each dyadic band identically one in a neighborhood of
    its nominal frequency 2**k, so an exactly representable mode there
    passes its band unchanged while bands two away annihilate it.
    """
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    out[r <= _PSI_PLATEAU] = 1.0
    mid = (r > _PSI_PLATEAU) & (r < 2.0)
    t = np.log2(r[mid] / _PSI_PLATEAU) / np.log2(2.0 / _PSI_PLATEAU)
    out[mid] = 0.5 * (1.0 + np.cos(np.pi * t))
    return out


@lru_cache(maxsize=256)
def band_profile(spec: GridSpec, k: int) -> np.ndarray:
    """Frequency-side filter of dyadic band ``k`` on this grid.

    Bands ``0 .. k_max - 1`` are raised-cosine annuli; band ``k_max`` is the
    residual high-pass completing the partition of unity exactly.
    """
    if k < 0:
        raise ValueError("band index must be nonnegative")
    r = _abs_freq(spec)
    if k == 0:
        return _psi(r) if spec.k_max > 0 else np.ones_like(r)
    if k < spec.k_max:
        return _psi(r / 2 ** k) - _psi(r / 2 ** (k - 1))
    if k == spec.k_max:
        return 1.0 - _psi(r / 2 ** (k - 1))
    return np.zeros_like(r)


@lru_cache(maxsize=256)
def _band_profile_le(spec: GridSpec, N: int) -> np.ndarray:
    if N >= spec.k_max:
        return np.ones(spec.shape)
    return _psi(_abs_freq(spec) / 2 ** N)


def _apply_mult(f: Field, mult: np.ndarray) -> Field:
    return Field(f.spec, _ifft(f.spec, _fft(f.spec, f.comps) * mult))


def lp_project(f: Field, k: int) -> Field:
    """Littlewood-Paley piece of ``f`` at dyadic band ``k``."""
    return _apply_mult(f, band_profile(f.spec, k))


def lp_project_le(f: Field, N: int) -> Field:
    """Low-pass piece: sum of bands ``0 .. N``."""
    if N < 0:
        return Field.zeros(f.spec, f.m)
    return _apply_mult(f, _band_profile_le(f.spec, N))


def lp_project_range(f: Field, N1: int, N2: int) -> Field:
    """Sum of bands ``N1 .. N2`` inclusive."""
    if N2 < N1:
        return Field.zeros(f.spec, f.m)
    mult = _band_profile_le(f.spec, N2) - (_band_profile_le(f.spec, N1 - 1)
                                           if N1 > 0 else 0.0)
    return _apply_mult(f, mult)


# ---------------------------------------------------------------------------
# cube partitions
# ---------------------------------------------------------------------------

def _axis_bump(t: np.ndarray) -> np.ndarray:
    """cos^2 bump on (-1, 1); unit-spaced translates sum to one exactly."""
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.cos(np.pi * t[inside] / 2) ** 2
    return out


def cube_centers(spec: GridSpec, j: int) -> np.ndarray:
    """Centers of the scale-j cube partition, shape (count, d)."""
    if j >= spec.J:
        return np.zeros((1, spec.d))
    side = float(2 ** j)
    per_axis = int(spec.box / side)
    c1 = -spec.box / 2 + side * (np.arange(per_axis) + 0.5)
    grids = np.meshgrid(*([c1] * spec.d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@lru_cache(maxsize=128)
def _cube_weights(spec: GridSpec, j: int) -> np.ndarray:
    """Stack of partition weights at scale j, shape (count, *grid)."""
    if j < 0:
        raise ValueError("cube scale must be nonnegative")
    if j >= spec.J:
        return np.ones((1,) + spec.shape)
    side = float(2 ** j)
    centers = cube_centers(spec, j)
    mesh = _mesh(spec)
    weights = np.empty((len(centers),) + spec.shape)
    for idx, c in enumerate(centers):
        w = np.ones(spec.shape)
        for ax in range(spec.d):
            delta = mesh[ax] - c[ax]
            delta = (delta + spec.box / 2) % spec.box - spec.box / 2
            w = w * _axis_bump(delta / side)
        weights[idx] = w
    weights /= np.sum(weights, axis=0, keepdims=True)
    return weights


def cube_partition(spec: GridSpec, j: int) -> list:
    """Smooth partition of unity subordinate to the scale-j cubes.

    Returns ``[(cube_id, weight_array), ...]`` with the weights summing to
    one at every grid point and each supported in the 2-dilate of its cube.
    For ``j >= J`` a single unit weight is returned.
    """
    weights = _cube_weights(spec, j)
    return [(i, weights[i]) for i in range(weights.shape[0])]


def sharp_tile_sums(spec: GridSpec, values: np.ndarray, l: int) -> np.ndarray:
    """Sum ``values`` (shape ``spec.shape``) over sharp tiles of side ``2**l``.

    Used by the local-energy norms, which restrict to cubes sharply.
    """
    if l >= spec.J:
        return np.asarray([np.sum(values)])
    per = int(2 ** l / spec.h)
    if per < 1:
        per = 1
    tiles = spec.n // per
    if spec.d == 1:
        return values.reshape(tiles, per).sum(axis=1)
    v = values.reshape(tiles, per, tiles, per)
    return v.sum(axis=(1, 3)).ravel()


# ---------------------------------------------------------------------------
# cutoffs and stock fields
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def radial_mesh(spec: GridSpec) -> np.ndarray:
    return np.sqrt(sum(x ** 2 for x in _mesh(spec)))


def smooth_ramp(r: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Septic smoothstep: 0 for ``r <= lo``, 1 for ``r >= hi``, C^3 joints.

    The C^3 regularity keeps cutoff-multiplied fields inside every graded
    space used here (a merely C^1 ramp would dominate the s0-weighted norms
    through its own spectral tail).
    """
    r = np.asarray(r, dtype=float)
    if hi <= lo:
        return (r >= hi).astype(float)
    t = np.clip((r - lo) / (hi - lo), 0.0, 1.0)
    return t ** 4 * (35.0 - 84.0 * t + 70.0 * t ** 2 - 20.0 * t ** 3)


def exterior_cutoff(spec: GridSpec, lo: float, hi: float) -> np.ndarray:
    """Smooth radial cutoff: 0 inside ``|x| <= lo``, 1 outside ``|x| >= hi``."""
    return smooth_ramp(radial_mesh(spec), lo, hi)


def interior_cutoff(spec: GridSpec, lo: float, hi: float) -> np.ndarray:
    return 1.0 - exterior_cutoff(spec, lo, hi)


def gaussian_field(spec: GridSpec, amplitude: float = 1.0, width: float = 1.0,
                   center: Sequence[float] = None,
                   modulation: Sequence[float] = None) -> Field:
    """Gaussian bump ``A exp(-|x-c|^2 / (2 w^2))``, optionally modulated."""
    mesh = spec.mesh()
    if center is None:
        center = [0.0] * spec.d
    r2 = sum((mesh[ax] - center[ax]) ** 2 for ax in range(spec.d))
    vals = amplitude * np.exp(-r2 / (2 * width ** 2)).astype(np.complex128)
    if modulation is not None:
        phase = sum(modulation[ax] * mesh[ax] for ax in range(spec.d))
        vals = vals * np.exp(1j * phase)
    return Field(spec, vals)


def ring_field(spec: GridSpec, amplitude: float, radius: float,
               width: float = 1.0) -> Field:
    """Ring-shaped bump ``A exp(-(|x|-r0)^2 / w^2)``."""
    r = radial_mesh(spec)
    return Field(spec, amplitude * np.exp(-((r - radius) / width) ** 2)
                 .astype(np.complex128))


def random_field(spec: GridSpec, rng: np.random.Generator, m: int = 1,
                 decay: float = 2.0) -> Field:
    """Random band-limited field with power-law spectral decay."""
    xi = _abs_freq(spec)
    envelope = (1.0 + xi) ** (-decay)
    comps = np.empty((m,) + spec.shape, dtype=np.complex128)
    for a in range(m):
        noise = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
        comps[a] = _ifft(spec, noise * envelope)
    f = Field(spec, comps)
    nrm = l2_norm(f)
    return f * (1.0 / nrm) if nrm > 0 else f


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------

def l2_norm(f: Field) -> float:
    """Grid L2 norm, all components together."""
    return float(np.sqrt(np.sum(np.abs(f.comps) ** 2) * f.spec.cell_volume))


def inner(f: Field, g: Field) -> complex:
    """L2 pairing ``<f, g> = integral f conj(g)``."""
    return complex(np.sum(f.comps * np.conj(g.comps)) * f.spec.cell_volume)
