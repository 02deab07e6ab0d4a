"""Nonlinearity specifications, linearized coefficients, paraproducts.

The model couples a real positive-definite coefficient matrix ``g(u, ubar)``
with a lower-order nonlinearity ``F(u, ubar, grad u, grad ubar)`` in the
divergence-form evolution ``i u_t + d_j g^{jk} d_k u = F``.  All first
partials of ``g`` and ``F`` (with u and ubar treated as independent
variables) must be supplied exactly; the linearized coefficients are

    b^j    = dg/du^{jk} d_k u    - dF/d(grad u)_j,
    bt^j   = dg/dubar^{jk} d_k u - dF/d(grad ubar)_j,
    c      = d_j (dg/du^{jk}) d_k u    - dF/du,
    ct     = d_j (dg/dubar^{jk}) d_k u - dF/dubar,

evaluated on the grid with spectral derivatives.

The low-high product ``T_a b`` keeps coefficient frequencies at least four
octaves below the function's.  The second-order operator is applied in the
symmetrized form ``(A + A*)/2`` with ``A = d_j T_{g^{jk}} d_k``, which keeps
``<A w, w>`` real for real symmetric g, and is completed on the four lowest
bands by the constant-coefficient Laplacian so the principal part is
uniformly elliptic at every frequency.  The remainder ``G`` is defined with
the same symmetrized operator, which makes

    i u_t + A2(g(u)) u + T_b . grad u + T_bt . grad ubar - G(u)
        == i u_t + d_j g^{jk} d_k u - F(u)

an exact algebraic identity on the grid.

Only scalar unknowns (m = 1) are supported by the coefficient machinery;
the spectral substrate itself is component-generic.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .grid import (
    Field,
    GridSpec,
    band_profile,
    _band_profile_le,
    _fft,
    _ifft,
    l2_norm,
    lp_project,
    lp_project_le,
    spectral_derivative,
)

__all__ = [
    "NonlinearitySpec",
    "CoefficientSet",
    "ConjugationOp",
    "EllipticityError",
    "make_nonlinearity",
    "metric_of",
    "linearized_coeffs",
    "paraproduct",
    "paraproduct_adjoint",
    "second_order_para",
    "paradiff_operator",
    "divergence_form_apply",
    "remainder_G",
    "build_conjugation",
    "apply_conjugation",
    "invert_conjugation",
]

PARA_GAP = 4  # coefficient low-pass sits this many bands below the function


class EllipticityError(RuntimeError):
    """Raised when a sampled metric dips below half its declared constant."""


# ---------------------------------------------------------------------------
# nonlinearity specification
# ---------------------------------------------------------------------------

@dataclass
class NonlinearitySpec:
    """Callable bundle defining g, F and their exact first partials.

    Every callable receives ``u`` with shape (m, *grid) and ``du`` with shape
    (d, m, *grid) and returns grid-shaped arrays:

    * ``g(u) -> (d, d, *grid)`` real symmetric;
    * ``dg_du(u), dg_dubar(u) -> (d, d, *grid)`` (scalar unknown);
    * ``F(u, du) -> (m, *grid)``;
    * ``dF_du, dF_dubar -> (m, *grid)``;
    * ``dF_dgrad, dF_dgradbar -> (d, m, *grid)``.

    Derivatives treat u and ubar as independent variables and must be exact;
    the coefficient formulas difference nothing numerically.
    """

    name: str
    m: int
    d: int
    interaction_class: str  # "quadratic" | "cubic"
    c0: float
    g: Callable
    dg_du: Callable
    dg_dubar: Callable
    F: Callable
    dF_du: Callable
    dF_dubar: Callable
    dF_dgrad: Callable
    dF_dgradbar: Callable
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.interaction_class not in ("quadratic", "cubic"):
            raise ValueError(f"bad interaction class {self.interaction_class}")
        if self.m != 1:
            raise ValueError("coefficient machinery supports scalar unknowns")


def _zeros_like_u(u):
    return np.zeros_like(u)


def _conformal(alpha: float, d: int, power: int = 2):
    """Isotropic coefficient matrix ``(1 + alpha |u|^power) I``."""
    eye = np.eye(d)

    def g(u):
        gamma = 1.0 + alpha * np.abs(u[0]) ** power
        return np.real(eye.reshape((d, d) + (1,) * u[0].ndim) * gamma)

    if power == 2:
        def dg_du(u):
            return eye.reshape((d, d) + (1,) * u[0].ndim) * (alpha * np.conj(u[0]))

        def dg_dubar(u):
            return eye.reshape((d, d) + (1,) * u[0].ndim) * (alpha * u[0])
    elif power == 4:
        def dg_du(u):
            return eye.reshape((d, d) + (1,) * u[0].ndim) * (
                2 * alpha * np.abs(u[0]) ** 2 * np.conj(u[0]))

        def dg_dubar(u):
            return eye.reshape((d, d) + (1,) * u[0].ndim) * (
                2 * alpha * np.abs(u[0]) ** 2 * u[0])
    else:
        raise ValueError("conformal power must be 2 (quadratic) or 4 (cubic)")
    return g, dg_du, dg_dubar


_F_FAMILY = {}


def _register_F(name):
    def deco(fn):
        _F_FAMILY[name] = fn
        return fn
    return deco


@_register_F("none")
def _F_none(beta, d):
    z = lambda u, du: np.zeros_like(u)
    zg = lambda u, du: np.zeros((d,) + u.shape, dtype=complex)
    return dict(F=z, dF_du=z, dF_dubar=z, dF_dgrad=zg, dF_dgradbar=zg)


@_register_F("u_squared")
def _F_u_squared(beta, d):
    """F = beta u^2."""
    zg = lambda u, du: np.zeros((d,) + u.shape, dtype=complex)
    return dict(
        F=lambda u, du: beta * u ** 2,
        dF_du=lambda u, du: 2 * beta * u,
        dF_dubar=lambda u, du: np.zeros_like(u),
        dF_dgrad=zg, dF_dgradbar=zg,
    )


@_register_F("modulus_squared")
def _F_modulus_squared(beta, d):
    """F = beta |u|^2."""
    zg = lambda u, du: np.zeros((d,) + u.shape, dtype=complex)
    return dict(
        F=lambda u, du: beta * u * np.conj(u),
        dF_du=lambda u, du: beta * np.conj(u),
        dF_dubar=lambda u, du: beta * u,
        dF_dgrad=zg, dF_dgradbar=zg,
    )


@_register_F("grad_square")
def _F_grad_square(beta, d):
    """F = beta |grad u|^2 = beta sum_k d_k u d_k ubar."""
    return dict(
        F=lambda u, du: beta * np.sum(du * np.conj(du), axis=0),
        dF_du=lambda u, du: np.zeros_like(u),
        dF_dubar=lambda u, du: np.zeros_like(u),
        dF_dgrad=lambda u, du: beta * np.conj(du),
        dF_dgradbar=lambda u, du: beta * du,
    )


@_register_F("u_gradu")
def _F_u_gradu(beta, d):
    """F = beta u d_1 u."""
    def dgrad(u, du):
        out = np.zeros((d,) + u.shape, dtype=complex)
        out[0] = beta * u
        return out
    zg = lambda u, du: np.zeros((d,) + u.shape, dtype=complex)
    return dict(
        F=lambda u, du: beta * u * du[0],
        dF_du=lambda u, du: beta * du[0],
        dF_dubar=lambda u, du: np.zeros_like(u),
        dF_dgrad=dgrad, dF_dgradbar=zg,
    )


@_register_F("cubic_modulus")
def _F_cubic(beta, d):
    """F = beta |u|^2 u."""
    zg = lambda u, du: np.zeros((d,) + u.shape, dtype=complex)
    return dict(
        F=lambda u, du: beta * np.abs(u) ** 2 * u,
        dF_du=lambda u, du: 2 * beta * np.abs(u) ** 2,
        dF_dubar=lambda u, du: beta * u ** 2,
        dF_dgrad=zg, dF_dgradbar=zg,
    )


def make_nonlinearity(d: int, metric: str = "conformal", alpha: float = 1.0,
                      forcing: str = "none", beta: float = 1.0,
                      interaction_class: str = "quadratic",
                      c0: Optional[float] = None) -> NonlinearitySpec:
    """Assemble a built-in nonlinearity by name.

    The conformal family ``g = (1 + alpha |u|^2) I`` (quadratic class) or
    ``(1 + alpha |u|^4) I`` (cubic class) is combined with a named forcing
    monomial.  ``c0`` defaults to a generous ellipticity constant for the
    amplitudes used at desk scale.
    """
    power = 2 if interaction_class == "quadratic" else 4
    if metric == "flat":
        g, dg_du, dg_dubar = _conformal(0.0, d, power=2)
    elif metric == "conformal":
        g, dg_du, dg_dubar = _conformal(alpha, d, power=power)
    else:
        raise ValueError(f"unknown metric family {metric!r}")
    if forcing not in _F_FAMILY:
        raise ValueError(f"unknown forcing {forcing!r}; have {sorted(_F_FAMILY)}")
    fparts = _F_FAMILY[forcing](beta, d)
    return NonlinearitySpec(
        name=f"{metric}(alpha={alpha})+{forcing}(beta={beta})",
        m=1, d=d, interaction_class=interaction_class,
        c0=c0 if c0 is not None else 0.05,
        g=g, dg_du=dg_du, dg_dubar=dg_dubar,
        params={"metric": metric, "alpha": alpha, "forcing": forcing,
                "beta": beta},
        **fparts,
    )


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

@dataclass
class CoefficientSet:
    """Grid samples of the linearized coefficients generated by one state."""

    spec: GridSpec
    g: np.ndarray          # (d, d, *grid) real
    b: np.ndarray          # (d, *grid) complex
    bt: np.ndarray         # (d, *grid) complex
    c: np.ndarray          # (*grid,) complex
    ct: np.ndarray         # (*grid,) complex
    c0: float
    ellipticity_min: float
    source_state: Optional[Field] = None

    @property
    def is_flat(self) -> bool:
        d = self.spec.d
        dev = 0.0
        for j in range(d):
            for k in range(d):
                target = 1.0 if j == k else 0.0
                dev = max(dev, float(np.max(np.abs(self.g[j, k] - target))))
        return dev < 1e-14

    @property
    def is_isotropic(self) -> bool:
        """True when g = gamma(x) I, which admits the separable symbol path."""
        d = self.spec.d
        if d == 1:
            return True
        off = max(float(np.max(np.abs(self.g[j, k])))
                  for j in range(d) for k in range(d) if j != k)
        diag = float(np.max(np.abs(self.g[0, 0] - self.g[1, 1])))
        return off < 1e-13 and diag < 1e-13


def _min_eigenvalue(g: np.ndarray, d: int) -> np.ndarray:
    if d == 1:
        return g[0, 0]
    tr = g[0, 0] + g[1, 1]
    disc = np.sqrt((g[0, 0] - g[1, 1]) ** 2 + 4 * g[0, 1] ** 2)
    return 0.5 * (tr - disc)


def metric_of(u: Field, nl: NonlinearitySpec, check: bool = True) -> np.ndarray:
    """Evaluate g on the state, symmetrized exactly; flags lost ellipticity."""
    g = np.real(np.asarray(nl.g(u.comps)))
    g = 0.5 * (g + np.swapaxes(g, 0, 1))
    if check:
        lam = _min_eigenvalue(g, u.spec.d)
        lam_min = float(np.min(lam))
        if lam_min < nl.c0 / 2:
            raise EllipticityError(
                f"metric eigenvalue {lam_min:.3e} below c0/2 = {nl.c0 / 2:.3e}")
    return g


def linearized_coeffs(u: Field, nl: NonlinearitySpec) -> CoefficientSet:
    """First-order and zero-order coefficients frozen at the given state."""
    spec = u.spec
    d = spec.d
    du = np.stack([spectral_derivative(u, ax).comps for ax in range(d)])
    g = metric_of(u, nl, check=False)
    lam_min = float(np.min(_min_eigenvalue(g, d)))

    dg_du = np.asarray(nl.dg_du(u.comps))       # (d, d, *grid)
    dg_dubar = np.asarray(nl.dg_dubar(u.comps))
    dF_grad = np.asarray(nl.dF_dgrad(u.comps, du))       # (d, m, *grid)
    dF_gradbar = np.asarray(nl.dF_dgradbar(u.comps, du))

    b = np.empty((d,) + spec.shape, dtype=complex)
    bt = np.empty((d,) + spec.shape, dtype=complex)
    for j in range(d):
        acc = np.zeros(spec.shape, dtype=complex)
        acct = np.zeros(spec.shape, dtype=complex)
        for k in range(d):
            acc += dg_du[j, k] * du[k, 0]
            acct += dg_dubar[j, k] * du[k, 0]
        b[j] = acc - dF_grad[j, 0]
        bt[j] = acct - dF_gradbar[j, 0]

    c = np.zeros(spec.shape, dtype=complex)
    ct = np.zeros(spec.shape, dtype=complex)
    for j in range(d):
        for k in range(d):
            c += _deriv(spec, dg_du[j, k], j) * du[k, 0]
            ct += _deriv(spec, dg_dubar[j, k], j) * du[k, 0]
    c -= nl.dF_du(u.comps, du)[0]
    ct -= nl.dF_dubar(u.comps, du)[0]

    return CoefficientSet(spec=spec, g=g, b=b, bt=bt, c=c, ct=ct,
                          c0=nl.c0, ellipticity_min=lam_min, source_state=u)


def _deriv(spec: GridSpec, arr: np.ndarray, axis: int) -> np.ndarray:
    from .grid import _deriv_arr
    return _deriv_arr(spec, arr[np.newaxis], axis)[0]


# ---------------------------------------------------------------------------
# paraproducts
# ---------------------------------------------------------------------------

def _para_arrays(spec: GridSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """T_a b = sum_{N >= 4} S_{<= N-4} a  S_N b, on raw grid arrays."""
    b_hat = _fft(spec, b)
    out = np.zeros_like(b)
    for N in range(PARA_GAP, spec.k_max + 1):
        a_low = _ifft(spec, _fft(spec, a) * _band_profile_le(spec, N - PARA_GAP))
        b_band = _ifft(spec, b_hat * band_profile(spec, N))
        out = out + a_low * b_band
    return out


def _para_adjoint_arrays(spec: GridSpec, a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Adjoint of b -> T_a b: c -> sum_N S_N( conj(S_{<=N-4} a) c )."""
    out_hat = np.zeros_like(_fft(spec, c))
    for N in range(PARA_GAP, spec.k_max + 1):
        a_low = _ifft(spec, _fft(spec, a) * _band_profile_le(spec, N - PARA_GAP))
        out_hat = out_hat + _fft(spec, np.conj(a_low) * c) * band_profile(spec, N)
    return _ifft(spec, out_hat)


def paraproduct(a: Field, b: Field) -> Field:
    """Low-high part of the product: coefficient four bands below the function."""
    if a.spec != b.spec:
        raise ValueError("paraproduct operands must share one grid")
    return Field(a.spec, _para_arrays(a.spec, a.comps[0], b.comps))


def paraproduct_adjoint(a: Field, c: Field) -> Field:
    return Field(a.spec, _para_adjoint_arrays(a.spec, a.comps[0], c.comps))


def second_order_para(spec: GridSpec, g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Symmetrized divergence-form paradifferential principal part.

    ``(A + A*)/2`` with ``A = d_j T_{g^{jk}} d_k``, plus the exact Laplacian
    on the bands the paraproduct omits.  For ``g = I`` this reduces to the
    spectral Laplacian identically.
    """
    from .grid import _deriv_arr
    d = spec.d
    acc = np.zeros_like(w)
    for k in range(d):
        dw = _deriv_arr(spec, w, k)
        for j in range(d):
            # direct branch d_j T_g d_k
            acc = acc + _deriv_arr(spec, _para_arrays(spec, g[j, k], dw), j)
            # adjoint branch d_k T_g^* d_j
            djw = _deriv_arr(spec, w, j)
            acc = acc + _deriv_arr(
                spec, _para_adjoint_arrays(spec, g[j, k], djw), k)
    acc = acc / 2.0
    # low-band completion: plain Laplacian on bands 0 .. PARA_GAP-1
    low = _ifft(spec, _fft(spec, w) * _band_profile_le(spec, PARA_GAP - 1))
    for ax in range(d):
        acc = acc + _deriv_arr(spec, _deriv_arr(spec, low, ax), ax)
    return acc


def first_order_para(spec: GridSpec, b: np.ndarray, bt: np.ndarray,
                     w: np.ndarray) -> np.ndarray:
    """``T_b . grad w + T_bt . grad conj(w)`` on raw arrays."""
    from .grid import _deriv_arr
    out = np.zeros_like(w)
    wbar = np.conj(w)
    for j in range(spec.d):
        out = out + _para_arrays(spec, b[j], _deriv_arr(spec, w, j))
        out = out + _para_arrays(spec, bt[j], _deriv_arr(spec, wbar, j))
    return out


def paradiff_operator(cs: CoefficientSet, w: Field) -> Field:
    """Apply the full paradifferential spatial operator to w."""
    if cs.spec != w.spec:
        raise ValueError("coefficients and field live on different grids")
    out = second_order_para(cs.spec, cs.g, w.comps)
    out = out + first_order_para(cs.spec, cs.b, cs.bt, w.comps)
    return Field(cs.spec, out)


def divergence_form_apply(spec: GridSpec, g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exact spectral application of ``d_j g^{jk} d_k w``."""
    from .grid import _deriv_arr
    acc = np.zeros_like(w)
    for k in range(spec.d):
        dw = _deriv_arr(spec, w, k)
        for j in range(spec.d):
            acc = acc + _deriv_arr(spec, g[j, k] * dw, j)
    return acc


# ---------------------------------------------------------------------------
# paradifferential remainder
# ---------------------------------------------------------------------------

def remainder_G(u: Field, nl: NonlinearitySpec,
                cs: Optional[CoefficientSet] = None) -> Field:
    """Frequency-balanced remainder of the paradifferential splitting.

    ``G = F(u) - d_j (g - T_g) d_k u + T_b . grad u + T_bt . grad ubar``,
    with the paradifferential second-order term realized by the same
    symmetrized, low-band-completed operator as the linear flow, so the
    splitting identity is exact.
    """
    spec = u.spec
    if cs is None:
        cs = linearized_coeffs(u, nl)
    du = np.stack([spectral_derivative(u, ax).comps for ax in range(spec.d)])
    Fval = np.asarray(nl.F(u.comps, du))
    out = Fval.astype(complex).copy()
    out -= divergence_form_apply(spec, cs.g, u.comps)
    out += second_order_para(spec, cs.g, u.comps)
    out += first_order_para(spec, cs.b, cs.bt, u.comps)
    return Field(spec, out)


# ---------------------------------------------------------------------------
# conjugation removing the conjugate-gradient coupling
# ---------------------------------------------------------------------------

@dataclass
class ConjugationOp:
    """Order ``-1`` correction operator R with ``S w = w + R conj(w)``.

    The symbol is ``-(1 - chi(|xi|)) i bt.xi / (2 g^{jk} xi_j xi_k)`` applied
    in low-high paradifferential form: on each dyadic band the coefficient
    fields are low-passed four bands below.  The frequency floor ``ell0``
    (the chi cutoff) is raised until the measured operator norm is at most
    one half, which makes the Neumann inversion of S safe.

    Note the sign: the displayed symbol must cancel ``T_bt . grad conj(w)``
    against the second-order part, which pins the minus sign; the opposite
    choice doubles the coupling instead of removing it.
    """

    spec: GridSpec
    ell0: int
    coeff_bands: dict        # band -> list over axes of low-passed coefficient
    mults: dict              # band -> list over axes of xi_j s_band / |xi|^2
    operator_norm: float
    dense_kernels: Optional[dict] = None

    def apply_R(self, v: np.ndarray) -> np.ndarray:
        """Apply R to a raw grid array (linear in v)."""
        spec = self.spec
        out = np.zeros_like(v)
        if self.dense_kernels is not None:
            v_hat = _fft(spec, v)
            for band, kern in self.dense_kernels.items():
                out = out + kern @ v_hat[0]
            return out[np.newaxis] if out.ndim == spec.d else out
        v_hat = _fft(spec, v)
        for band in self.coeff_bands:
            for ax in range(spec.d):
                piece = _ifft(spec, v_hat * self.mults[band][ax])
                out = out + self.coeff_bands[band][ax] * piece
        return out


def build_conjugation(cs: CoefficientSet, ell0: Optional[int] = None,
                      target_norm: float = 0.5) -> ConjugationOp:
    """Construct the conjugation operator for a coefficient set.

    When ``ell0`` is not given, the frequency floor starts just above the
    paraproduct gap and is raised until the measured norm of R is at most
    ``target_norm``; failure to reach it is reported in the exception.
    """
    spec = cs.spec
    floors = [ell0] if ell0 is not None else list(range(1, spec.k_max + 1))
    last = None
    for floor in floors:
        op = _build_conjugation_at(cs, floor)
        last = op
        if op.operator_norm <= target_norm:
            return op
    if ell0 is not None and last.operator_norm > target_norm:
        raise RuntimeError(
            f"conjugation not contracting: measured norm "
            f"{last.operator_norm:.3f} > {target_norm} at floor {last.ell0}")
    if last.operator_norm > target_norm:
        raise RuntimeError(
            f"conjugation not contracting even at top band "
            f"(norm {last.operator_norm:.3f}); coefficients too large")
    return last


def _build_conjugation_at(cs: CoefficientSet, ell0: int) -> ConjugationOp:
    spec = cs.spec
    d = spec.d
    bands = range(max(ell0, 1), spec.k_max + 1)

    if cs.is_isotropic:
        gamma = cs.g[0, 0]
        coeff_bands = {}
        mults = {}
        xi = spec.freq_mesh()
        xi2 = spec.abs_freq() ** 2
        safe = np.where(xi2 > 0, xi2, 1.0)
        for band in bands:
            prof = band_profile(spec, band)
            coeffs = []
            mm = []
            for ax in range(d):
                cfield = -1j * cs.bt[ax] / (2.0 * gamma)
                low = _ifft(spec, _fft(spec, cfield[np.newaxis])
                            * _band_profile_le(spec, band - PARA_GAP))[0]
                coeffs.append(low)
                mm.append(xi[ax] * prof / safe)
            coeff_bands[band] = coeffs
            mults[band] = mm
        op = ConjugationOp(spec=spec, ell0=ell0, coeff_bands=coeff_bands,
                           mults=mults, operator_norm=0.0)
    else:
        if d != 1:
            raise NotImplementedError(
                "dense conjugation kernels are implemented for d=1; "
                "anisotropic metrics in d=2 are outside desk scale")
        op = ConjugationOp(spec=spec, ell0=ell0, coeff_bands={}, mults={},
                           operator_norm=0.0,
                           dense_kernels=_dense_kernels(cs, bands))
    op.operator_norm = _measure_norm(op)
    return op


def _dense_kernels(cs: CoefficientSet, bands) -> dict:
    """Direct quantization of the symbol, one (x, xi) kernel per band (d=1)."""
    spec = cs.spec
    n = spec.n
    xi = spec.freq_axis()
    # exact inverse-DFT phase matrix in numpy's corner-referenced indexing
    modes = np.rint(np.fft.fftfreq(n) * n)
    phase = np.exp(2j * np.pi * np.outer(np.arange(n), modes) / n) / n
    kernels = {}
    for band in bands:
        prof = band_profile(spec, band)
        sym = np.zeros((n, n), dtype=complex)
        for i_xi in range(n):
            xi_v = xi[i_xi]
            if xi_v == 0.0 or prof[i_xi] == 0.0:
                continue
            a_val = cs.g[0, 0] * xi_v * xi_v
            r = -1j * cs.bt[0] * xi_v / (2.0 * a_val)
            low = _ifft(spec, _fft(spec, r[np.newaxis])
                        * _band_profile_le(spec, band - PARA_GAP))[0]
            sym[:, i_xi] = low * prof[i_xi]
        kernels[band] = sym * phase
    return kernels


def _measure_norm(op: ConjugationOp, iters: int = 25, seed: int = 7) -> float:
    """Power iteration on R*R via the numerical adjoint (L2 operator norm)."""
    spec = op.spec
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((1,) + spec.shape) + 1j * rng.standard_normal((1,) + spec.shape)
    v /= np.sqrt(np.sum(np.abs(v) ** 2))
    # adjoint through an explicit matrix is wasteful; use R^T R via conjugate
    # pairing: ||R|| = sqrt(largest eigenvalue of R* R), estimated from the
    # growth of ||R v|| under iteration v <- R* R v.
    def apply_R(w):
        return op.apply_R(w)

    def apply_Rstar(w):
        # numerical adjoint by Fourier-side transposition of the band pieces
        spec_ = op.spec
        if op.dense_kernels is not None:
            out_hat = np.zeros_like(_fft(spec_, w))
            for kern in op.dense_kernels.values():
                out_hat[0] += kern.conj().T @ w[0]
            return _ifft(spec_, out_hat)
        out_hat = np.zeros_like(_fft(spec_, w))
        for band in op.coeff_bands:
            for ax in range(spec_.d):
                out_hat = out_hat + (_fft(spec_, np.conj(op.coeff_bands[band][ax]) * w)
                                     * np.conj(op.mults[band][ax]))
        return _ifft(spec_, out_hat)

    lam = 0.0
    for _ in range(iters):
        w = apply_Rstar(apply_R(v))
        nrm = np.sqrt(np.sum(np.abs(w) ** 2))
        if nrm < 1e-300:
            return 0.0
        lam = nrm
        v = w / nrm
    return float(np.sqrt(lam))


def apply_conjugation(op: ConjugationOp, w: Field) -> Field:
    """``S w = w + R conj(w)``."""
    return Field(w.spec, w.comps + op.apply_R(np.conj(w.comps)))


def invert_conjugation(op: ConjugationOp, y: Field, tol: float = 1e-12,
                       max_iter: int = 200) -> Field:
    """Neumann inversion of S; terminates when the increment drops below tol."""
    w = y.comps.copy()
    for _ in range(max_iter):
        new = y.comps - op.apply_R(np.conj(w))
        inc = np.max(np.abs(new - w))
        w = new
        if inc < tol:
            return Field(y.spec, w)
    raise RuntimeError(
        f"Neumann inversion stalled (last increment {inc:.2e}); "
        f"measured operator norm {op.operator_norm:.3f}")
