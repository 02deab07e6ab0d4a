"""Coefficient, paraproduct, remainder, and conjugation checks."""

import numpy as np
import pytest
import sympy as sp

from quasilin.grid import (
    Field,
    FrequencyField,
    GridSpec,
    from_frequency,
    gaussian_field,
    inner,
    l2_norm,
    lp_project,
    random_field,
    spectral_derivative,
    to_frequency,
)
from quasilin.model import (
    CoefficientSet,
    EllipticityError,
    apply_conjugation,
    build_conjugation,
    divergence_form_apply,
    invert_conjugation,
    linearized_coeffs,
    make_nonlinearity,
    metric_of,
    paradiff_operator,
    paraproduct,
    remainder_G,
    second_order_para,
    _dense_kernels,
    ConjugationOp,
    _para_arrays,
)

SPEC = GridSpec(1, 256, 4)


# ---------------------------------------------------------------------------
# metric evaluation
# ---------------------------------------------------------------------------

def test_metric_identity_at_zero():
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    g = metric_of(Field.zeros(SPEC), nl)
    assert np.max(np.abs(g[0, 0] - 1.0)) == 0.0


def test_metric_peak_eigenvalue():
    nl = make_nonlinearity(2, "conformal", alpha=1.0)
    spec2 = GridSpec(2, 64, 5)
    u = gaussian_field(spec2, 1.0, 1.0)
    g = metric_of(u, nl)
    assert np.max(g[0, 0]) == pytest.approx(2.0, abs=1e-12)


def test_metric_continuity_at_zero():
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    u = gaussian_field(SPEC, 1e-7, 1.0)
    g = metric_of(u, nl)
    assert np.max(np.abs(g[0, 0] - 1.0)) <= 1e-12


def test_metric_ellipticity_flagged():
    # a made-up coefficient family that loses positivity at the peak
    nl = make_nonlinearity(1, "conformal", alpha=1.0, c0=0.5)
    bad = dict(vars(nl))
    nl_bad = make_nonlinearity(1, "conformal", alpha=1.0, c0=0.5)
    nl_bad.g = lambda u: (1.0 - 2.0 * np.abs(u[0]) ** 2)[None, None]
    with pytest.raises(EllipticityError):
        metric_of(gaussian_field(SPEC, 1.0, 1.0), nl_bad)


# ---------------------------------------------------------------------------
# linearized coefficients
# ---------------------------------------------------------------------------

def test_coeffs_vanish_at_zero():
    nl = make_nonlinearity(1, "conformal", alpha=1.0, forcing="u_squared")
    cs = linearized_coeffs(Field.zeros(SPEC), nl)
    for arr in (cs.b, cs.bt, cs.c, cs.ct):
        assert np.max(np.abs(arr)) == 0.0


def test_coeffs_conformal_formulas():
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    u = gaussian_field(SPEC, 0.8, 1.0, modulation=[2.0])
    cs = linearized_coeffs(u, nl)
    du = spectral_derivative(u, 0).comps[0]
    assert np.max(np.abs(cs.b[0] - np.conj(u.comps[0]) * du)) <= 1e-13
    assert np.max(np.abs(cs.bt[0] - u.comps[0] * du)) <= 1e-13


def test_coeffs_grad_square_formulas():
    nl = make_nonlinearity(1, "flat", forcing="grad_square", beta=1.0)
    u = gaussian_field(SPEC, 0.8, 1.0, modulation=[3.0])
    cs = linearized_coeffs(u, nl)
    du = spectral_derivative(u, 0).comps[0]
    assert np.max(np.abs(cs.b[0] + np.conj(du))) <= 1e-13
    assert np.max(np.abs(cs.bt[0] + du)) <= 1e-13
    assert np.max(np.abs(cs.c)) == 0.0
    assert np.max(np.abs(cs.ct)) == 0.0


def test_coeffs_against_symbolic_oracle():
    # differentiate the built-in conformal + quadratic forcing family with
    # sympy (u, ubar independent) and compare the hand-coded partials
    alpha, beta = 0.7, 1.3
    u_s, ub_s = sp.symbols("u ubar")
    g_expr = 1 + alpha * u_s * ub_s
    F_expr = beta * u_s ** 2
    dg_du = sp.lambdify((u_s, ub_s), sp.diff(g_expr, u_s), "numpy")
    dg_dub = sp.lambdify((u_s, ub_s), sp.diff(g_expr, ub_s), "numpy")
    dF_du = sp.lambdify((u_s, ub_s), sp.diff(F_expr, u_s), "numpy")

    nl = make_nonlinearity(1, "conformal", alpha=alpha, forcing="u_squared",
                           beta=beta)
    u = gaussian_field(SPEC, 0.5, 1.1, modulation=[2.0])
    uv, ubv = u.comps[0], np.conj(u.comps[0])
    du = spectral_derivative(u, 0).comps[0]

    cs = linearized_coeffs(u, nl)
    assert np.max(np.abs(cs.b[0] - dg_du(uv, ubv) * du)) <= 1e-12
    assert np.max(np.abs(cs.bt[0] - dg_dub(uv, ubv) * du)) <= 1e-12
    # c = d_x(dg_du) du - dF_du
    from quasilin.grid import _deriv_arr
    dx_dgdu = _deriv_arr(SPEC, (dg_du(uv, ubv))[np.newaxis], 0)[0]
    c_oracle = dx_dgdu * du - dF_du(uv, ubv)
    assert np.max(np.abs(cs.c - c_oracle)) <= 1e-12


# ---------------------------------------------------------------------------
# paraproducts
# ---------------------------------------------------------------------------

def test_paraproduct_constant_coefficient(rng):
    ones = Field(SPEC, np.ones(SPEC.shape))
    f = random_field(SPEC, rng)
    from quasilin.grid import lp_project_range
    expect = lp_project_range(f, 4, SPEC.k_max)
    assert np.max(np.abs(paraproduct(ones, f).comps - expect.comps)) <= 1e-12


def test_paraproduct_low_band_function_vanishes(rng):
    f = random_field(SPEC, rng)
    F = to_frequency(f)
    mask = SPEC.abs_freq() <= 2.0 ** 3      # below every band-4 support point
    flow = from_frequency(FrequencyField(SPEC, F.comps * mask))
    ones = Field(SPEC, np.ones(SPEC.shape))
    assert np.max(np.abs(paraproduct(ones, flow).comps)) <= 1e-12


def test_paraproduct_trichotomy_oracle(rng):
    # ab - T_a b - T_b a reassembled by the explicit complementary double sum
    a = random_field(SPEC, rng)
    b = random_field(SPEC, rng)
    remainder = (a.comps[0] * b.comps[0]
                 - paraproduct(a, b).comps[0] - paraproduct(b, a).comps[0])
    pa = [lp_project(a, j).comps[0] for j in range(SPEC.k_max + 1)]
    pb = [lp_project(b, k).comps[0] for k in range(SPEC.k_max + 1)]
    acc = np.zeros_like(remainder)
    for j in range(SPEC.k_max + 1):
        for k in range(SPEC.k_max + 1):
            in_ab = k >= 4 and j <= k - 4
            in_ba = j >= 4 and k <= j - 4
            if not in_ab and not in_ba:
                acc += pa[j] * pb[k]
    assert np.max(np.abs(remainder - acc)) <= 1e-9


def test_paraproduct_band_support(rng):
    # output band N content comes only from S_N of the function and
    # coefficients at least four bands lower
    a = random_field(SPEC, rng)
    b = random_field(SPEC, rng)
    N = 4
    tp_full = paraproduct(a, b)
    # kill the function's band N; the change in the paraproduct is exactly
    # T_a (S_N b), whose spectrum sits in the slightly dilated band support
    from quasilin.grid import band_profile, _fft, _ifft
    b_hat = _fft(SPEC, b.comps)
    mask = 1.0 - band_profile(SPEC, N)
    b_masked = Field(SPEC, _ifft(SPEC, b_hat * mask))
    tp_masked = paraproduct(a, b_masked)
    diff = tp_full.comps - tp_masked.comps
    # the difference is exactly T_a (S_N b): its spectrum lives in the
    # 4-band-down dilate of band N's support
    d_hat = _fft(SPEC, diff)
    # support: the band's reach 2^{N+1}, plus the widest coefficient
    # low-pass among the overlapping output bands (four bands down)
    outside = SPEC.abs_freq() > 2.0 ** (N + 1) + 2.0 ** (N - 1)
    assert np.max(np.abs(d_hat[0][outside])) <= 1e-9 * np.max(np.abs(d_hat))


def test_paraproduct_spec_mismatch():
    other = GridSpec(1, 128, 4)
    with pytest.raises(ValueError):
        paraproduct(Field.zeros(SPEC), Field.zeros(other))


# ---------------------------------------------------------------------------
# second-order operator and remainder
# ---------------------------------------------------------------------------

def test_second_order_flat_is_laplacian(rng):
    f = random_field(SPEC, rng)
    gI = np.zeros((1, 1) + SPEC.shape)
    gI[0, 0] = 1.0
    from quasilin.grid import _deriv_arr
    lap = _deriv_arr(SPEC, _deriv_arr(SPEC, f.comps, 0), 0)
    assert np.max(np.abs(second_order_para(SPEC, gI, f.comps) - lap)) <= 1e-10


def test_second_order_realness(rng):
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    u = gaussian_field(SPEC, 0.8, 1.0)
    cs = linearized_coeffs(u, nl)
    w = random_field(SPEC, rng)
    val = inner(Field(SPEC, second_order_para(SPEC, cs.g, w.comps)), w)
    assert abs(val.imag) <= 1e-10 * abs(val.real)


def test_paradiff_zero_field():
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    cs = linearized_coeffs(gaussian_field(SPEC, 0.5, 1.0), nl)
    out = paradiff_operator(cs, Field.zeros(SPEC))
    assert np.max(np.abs(out.comps)) == 0.0


def test_remainder_zero_state():
    nl = make_nonlinearity(1, "conformal", alpha=1.0, forcing="u_squared")
    assert np.max(np.abs(remainder_G(Field.zeros(SPEC), nl).comps)) == 0.0


def test_remainder_low_band_direct_evaluation():
    # for data below every paraproduct band the paraterms vanish and the
    # remainder reduces to F - d((g - I) du) plus the low-band completion,
    # evaluated here directly
    nl = make_nonlinearity(1, "conformal", alpha=0.5, forcing="u_squared",
                           beta=0.7)
    base = gaussian_field(SPEC, 0.4, 2.0)
    F0 = to_frequency(base)
    mask = SPEC.abs_freq() <= 2.0 ** 3
    u = from_frequency(FrequencyField(SPEC, F0.comps * mask))
    cs = linearized_coeffs(u, nl)
    G = remainder_G(u, nl, cs)
    from quasilin.grid import _deriv_arr
    du = np.stack([spectral_derivative(u, 0).comps])
    eye = np.zeros_like(cs.g)
    eye[0, 0] = 1.0
    direct = (np.asarray(nl.F(u.comps, du))
              - divergence_form_apply(SPEC, cs.g - eye, u.comps))
    # completion: the paradifferential principal part reduces to the exact
    # Laplacian on this data (adjoint-branch tails are part of the operator)
    completion = second_order_para(SPEC, cs.g, u.comps) \
        - divergence_form_apply(SPEC, eye, u.comps)
    para_first = G.comps - (direct + completion)
    # remaining first-order paraterms act on low-band data: only adjoint
    # tails survive, already inside `completion`; the residual is tiny
    assert np.max(np.abs(para_first)) <= 1e-9


def test_splitting_identity_random_state(rng):
    nl = make_nonlinearity(1, "conformal", alpha=0.7, forcing="u_squared",
                           beta=0.5)
    u = gaussian_field(SPEC, 0.5, 1.2, modulation=[3.0])
    cs = linearized_coeffs(u, nl)
    du = np.stack([spectral_derivative(u, 0).comps])
    lhs = paradiff_operator(cs, u).comps - remainder_G(u, nl, cs).comps
    rhs = divergence_form_apply(SPEC, cs.g, u.comps) - np.asarray(
        nl.F(u.comps, du))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9


def test_remainder_envelope_bound_stable_over_bands():
    # per-band remainder sizes dominated by a stable multiple of the
    # state's envelope
    from quasilin.spaces import block_hs_norms, make_envelope
    nl = make_nonlinearity(1, "conformal", alpha=0.5, forcing="u_squared",
                           beta=1.0)
    u = gaussian_field(SPEC, 0.4, 0.7, modulation=[2.0])
    env = make_envelope(block_hs_norms(u, 2.51))
    G = remainder_G(u, nl)
    blocks = block_hs_norms(G, 2.51)
    mask = env.c > 1e-9 * np.max(env.c)
    consts = blocks[mask] / env.c[mask]
    assert np.all(np.isfinite(consts))
    assert np.max(consts) <= 50.0 * max(np.median(consts), 1e-12)


# ---------------------------------------------------------------------------
# conjugation
# ---------------------------------------------------------------------------

def _coeffs(u_amp=0.9, mod=2.0):
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    u = gaussian_field(SPEC, u_amp, 1.0, modulation=[mod])
    return linearized_coeffs(u, nl)


def test_conjugation_identity_without_coupling(rng):
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    cs = linearized_coeffs(Field.zeros(SPEC), nl)
    op = build_conjugation(cs)
    w = random_field(SPEC, rng)
    assert np.max(np.abs(apply_conjugation(op, w).comps - w.comps)) == 0.0
    assert op.operator_norm == 0.0


def test_conjugation_round_trip(rng):
    cs = _coeffs()
    op = build_conjugation(cs)
    assert op.operator_norm <= 0.5
    w = random_field(SPEC, rng)
    back = invert_conjugation(op, apply_conjugation(op, w))
    assert np.max(np.abs(back.comps - w.comps)) <= 1e-10


def test_conjugation_band_magnitude_oracle(rng):
    # constant coupling on a single high band: |R wbar| tracks the symbol
    # magnitude |bt| 2^{-k} / 2 within a factor of two
    btval = 0.3
    k = SPEC.k_max
    cs = CoefficientSet(
        spec=SPEC, g=np.ones((1, 1) + SPEC.shape),
        b=np.zeros((1,) + SPEC.shape, complex),
        bt=np.full((1,) + SPEC.shape, btval, complex),
        c=np.zeros(SPEC.shape, complex), ct=np.zeros(SPEC.shape, complex),
        c0=0.05, ellipticity_min=1.0)
    op = build_conjugation(cs, ell0=1)
    wk = lp_project(random_field(SPEC, rng), k)
    ratio = (l2_norm(Field(SPEC, op.apply_R(np.conj(wk.comps))))
             / l2_norm(wk))
    target = btval * 2.0 ** (-k) / 2.0
    assert target / 2.0 <= ratio <= 2.0 * target


def test_conjugation_removes_principal_coupling(rng):
    # the conjugated equation's conjugate-gradient coupling drops below
    # 2^{-ell0} of the unconjugated size on high-band data
    spec = GridSpec(1, 256, 3)
    nl = make_nonlinearity(1, "conformal", alpha=1.0)
    u = gaussian_field(spec, 0.9, 0.8)
    cs = linearized_coeffs(u, nl)
    op = build_conjugation(cs)
    k = spec.k_max
    wk = lp_project(random_field(spec, rng), k)
    from quasilin.grid import _deriv_arr

    def A2(v):
        return second_order_para(spec, cs.g, v)

    def Tbt_grad(v):
        return _para_arrays(spec, cs.bt[0], _deriv_arr(spec, v, 0))

    vb = np.conj(wk.comps)
    E = A2(op.apply_R(vb)) + op.apply_R(A2(vb)) - Tbt_grad(vb)
    num = np.sqrt(np.sum(np.abs(E) ** 2))
    den = np.sqrt(np.sum(np.abs(Tbt_grad(vb)) ** 2))
    assert num / den <= 2.0 ** (-op.ell0)


def test_conjugation_dense_matches_separable(rng):
    cs = _coeffs()
    op = build_conjugation(cs)
    dense = ConjugationOp(
        spec=SPEC, ell0=op.ell0, coeff_bands={}, mults={}, operator_norm=0.0,
        dense_kernels=_dense_kernels(cs, range(max(op.ell0, 1), SPEC.k_max + 1)))
    v = np.conj(random_field(SPEC, rng).comps)
    assert np.max(np.abs(op.apply_R(v) - dense.apply_R(v))) <= 1e-14


def test_conjugation_flags_noncontracting():
    # absurdly large coupling cannot be tamed at any floor
    cs = CoefficientSet(
        spec=SPEC, g=np.ones((1, 1) + SPEC.shape),
        b=np.zeros((1,) + SPEC.shape, complex),
        bt=np.full((1,) + SPEC.shape, 5e4, complex),
        c=np.zeros(SPEC.shape, complex), ct=np.zeros(SPEC.shape, complex),
        c0=0.05, ellipticity_min=1.0)
    with pytest.raises(RuntimeError, match="not contracting"):
        build_conjugation(cs, ell0=1)
