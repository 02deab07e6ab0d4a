"""Fast self-check suite behind the CLI verify mode.

Each check returns its worst measured deviation together with the tolerance
it was held to, so a failing run points at the number that moved.  The
suite is intentionally quick (seconds); the full oracle-backed battery
lives in the test suite.
"""

from __future__ import annotations

import numpy as np

from .grid import (
    Field,
    GridSpec,
    cube_partition,
    from_frequency,
    gaussian_field,
    inner,
    l2_norm,
    lp_project,
    random_field,
    spectral_derivative,
    to_frequency,
)
from .hamilton import FlatMetric, PhasePoint, conformal_bump_metric, flow_step, hamiltonian
from .model import (
    build_conjugation,
    apply_conjugation,
    invert_conjugation,
    divergence_form_apply,
    linearized_coeffs,
    make_nonlinearity,
    paradiff_operator,
    paraproduct,
    remainder_G,
    second_order_para,
)
from .spaces import check_envelope, make_envelope

__all__ = ["property_suite"]


def _check(value, tol):
    return {"ok": bool(value <= tol), "worst": float(value), "tol": float(tol)}


def property_suite(rng: np.random.Generator) -> dict:
    checks = {}

    spec1 = GridSpec(1, 256, 4)
    spec2 = GridSpec(2, 64, 5)

    # transforms: round trip and Plancherel
    worst_rt, worst_pl = 0.0, 0.0
    for spec in (spec1, spec2):
        f = random_field(spec, rng)
        rt = from_frequency(to_frequency(f))
        worst_rt = max(worst_rt, float(np.max(np.abs(rt.comps - f.comps))))
        F = to_frequency(f)
        l2f = np.sqrt(np.sum(np.abs(F.comps) ** 2)
                      * (2 * np.pi) ** (-spec.d) * (2 * np.pi / spec.box) ** spec.d)
        worst_pl = max(worst_pl, abs(l2_norm(f) - l2f) / l2_norm(f))
    checks["transform_round_trip"] = _check(worst_rt, 1e-12)
    checks["plancherel"] = _check(worst_pl, 1e-12)

    # dyadic partition of unity and band disjointness
    worst_pu, worst_dj = 0.0, 0.0
    for spec in (spec1, spec2):
        f = random_field(spec, rng)
        total = np.zeros(spec.shape, dtype=complex)
        for k in range(spec.k_max + 1):
            total += lp_project(f, k).comps[0]
        worst_pu = max(worst_pu, float(np.max(np.abs(total - f.comps[0]))))
        g = lp_project(lp_project(f, 0), 2)
        worst_dj = max(worst_dj, float(np.max(np.abs(g.comps))))
    checks["lp_partition_of_unity"] = _check(worst_pu, 1e-10)
    checks["lp_band_disjointness"] = _check(worst_dj, 1e-12)

    # cube partitions
    worst = 0.0
    for spec in (spec1, spec2):
        for j in range(spec.J + 1):
            total = sum(w for _, w in cube_partition(spec, j))
            worst = max(worst, float(np.max(np.abs(total - 1.0))))
    checks["cube_partition_of_unity"] = _check(worst, 1e-12)

    # spectral derivative on an exact mode
    L = spec1.box
    g1 = Field.from_function(spec1, lambda x: np.sin(2 * np.pi * x / L))
    dg = spectral_derivative(g1, 0)
    exact = (2 * np.pi / L) * np.cos(2 * np.pi * spec1.mesh()[0] / L)
    checks["spectral_derivative"] = _check(
        float(np.max(np.abs(dg.comps[0] - exact))), 1e-10)

    # envelopes on random block data
    worst = 0.0
    for _ in range(20):
        a = np.abs(rng.standard_normal(9)) * rng.uniform(size=9)
        env = make_envelope(a)
        res = check_envelope(env, a)
        if not res["ok"]:
            worst = max(worst, 1.0)
    checks["envelope_admissibility"] = _check(worst, 0.0)

    # paraproduct trichotomy: residual of the rearrangement identity
    a = random_field(spec1, rng)
    b = random_field(spec1, rng)
    full = a.comps[0] * b.comps[0]
    tri = (paraproduct(a, b).comps[0] + paraproduct(b, a).comps[0])
    remainder = full - tri
    # reassemble by explicit double sum over the complementary index set
    pieces = [lp_project(a, j).comps[0] for j in range(spec1.k_max + 1)]
    piecesb = [lp_project(b, k).comps[0] for k in range(spec1.k_max + 1)]
    acc = np.zeros_like(full)
    for j in range(spec1.k_max + 1):
        for k in range(spec1.k_max + 1):
            lowhigh_ab = k >= 4 and j <= k - 4
            lowhigh_ba = j >= 4 and k <= j - 4
            if not lowhigh_ab and not lowhigh_ba:
                acc += pieces[j] * piecesb[k]
    checks["paraproduct_trichotomy"] = _check(
        float(np.max(np.abs(remainder - acc))), 1e-9)

    # operator identities on a nontrivial state
    nl = make_nonlinearity(1, "conformal", alpha=0.7, forcing="u_squared",
                           beta=0.5)
    u = gaussian_field(spec1, 0.5, 1.2, modulation=[3.0])
    cs = linearized_coeffs(u, nl)
    du = np.stack([spectral_derivative(u, ax).comps for ax in range(1)])
    lhs = paradiff_operator(cs, u).comps - remainder_G(u, nl, cs).comps
    rhs = divergence_form_apply(spec1, cs.g, u.comps) - np.asarray(nl.F(u.comps, du))
    checks["splitting_identity"] = _check(
        float(np.max(np.abs(lhs - rhs))), 1e-9)

    w = random_field(spec1, rng)
    Aw = second_order_para(spec1, cs.g, w.comps)
    val = inner(Field(spec1, Aw), w)
    checks["symmetrized_realness"] = _check(
        abs(val.imag) / max(abs(val.real), 1e-30), 1e-10)

    # conjugation round trip
    op = build_conjugation(cs)
    sw = apply_conjugation(op, w)
    back = invert_conjugation(op, sw)
    checks["conjugation_round_trip"] = _check(
        float(np.max(np.abs(back.comps - w.comps))), 1e-10)

    # flow invariants
    flat = FlatMetric(2)
    p = PhasePoint([0.3, -0.4], [0.6, 0.8])
    q = flow_step(flat, p, 1.3)
    straight = float(np.max(np.abs(q.x - (p.x + 2 * 1.3 * p.xi))))
    checks["flat_flow_straight"] = _check(straight, 1e-10)

    bump = conformal_bump_metric(2, 0.5, 2.0)
    p2 = PhasePoint([-5.0, 1.0], [1.0, 0.0])
    a0 = hamiltonian(bump, p2.x, p2.xi)
    q2 = flow_step(bump, p2, 2.0)
    drift = abs(hamiltonian(bump, q2.x, q2.xi) - a0)
    checks["hamiltonian_conservation"] = _check(drift, 1e-8)

    q3 = flow_step(bump, PhasePoint(q2.x, -q2.xi), 2.0)
    rev = float(np.max(np.abs(q3.x - p2.x)) + np.max(np.abs(q3.xi + p2.xi)))
    checks["flow_time_reversal"] = _check(rev, 1e-8)

    return checks
