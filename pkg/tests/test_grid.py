"""Substrate checks: transforms, band filters, cube partitions."""

import numpy as np
import pytest

from quasilin.grid import (
    Field,
    FrequencyField,
    GridSpec,
    band_profile,
    cube_centers,
    cube_partition,
    from_frequency,
    gaussian_field,
    inner,
    l2_norm,
    lp_project,
    lp_project_le,
    lp_project_range,
    random_field,
    spectral_derivative,
    to_frequency,
)

SPEC1 = GridSpec(1, 256, 4)
SPEC2 = GridSpec(2, 64, 5)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(3, 64, 4)
    with pytest.raises(ValueError):
        GridSpec(1, 100, 4)
    assert 2 ** SPEC1.k_max <= np.pi * SPEC1.n / SPEC1.box + 1e-9


def test_field_shape_mismatch():
    with pytest.raises(ValueError):
        Field(SPEC1, np.zeros(128))
    with pytest.raises(ValueError):
        Field(SPEC1, np.full(SPEC1.shape, np.nan))


@pytest.mark.parametrize("spec", [SPEC1, SPEC2])
def test_round_trip(spec, rng):
    f = random_field(spec, rng)
    back = from_frequency(to_frequency(f))
    assert np.max(np.abs(back.comps - f.comps)) <= 1e-12


def test_constant_is_mode_zero():
    c = Field(SPEC1, np.ones(SPEC1.shape))
    C = to_frequency(c)
    mags = np.abs(C.comps[0])
    assert mags[0] == pytest.approx(SPEC1.box)
    assert np.sum(mags) - mags[0] <= 1e-12


def test_gaussian_matches_closed_form():
    # The box transform of the periodized Gaussian equals the line transform
    # of the Gaussian evaluated at grid frequencies, up to aliasing that the
    # chosen width makes negligible.
    spec = SPEC1
    sigma = 1.0
    x = spec.mesh()[0]
    vals = np.zeros(spec.shape)
    for shift in (-2, -1, 0, 1, 2):
        vals += np.exp(-((x + shift * spec.box) ** 2) / (2 * sigma ** 2))
    f = Field(spec, vals)
    F = to_frequency(f)
    xi = spec.freq_mesh()[0]
    closed = sigma * np.sqrt(2 * np.pi) * np.exp(-(sigma * xi) ** 2 / 2.0)
    assert np.max(np.abs(F.comps[0] - closed)) <= 1e-8


@pytest.mark.parametrize("spec", [SPEC1, SPEC2])
def test_plancherel(spec, rng):
    f = random_field(spec, rng)
    F = to_frequency(f)
    freq_side = np.sqrt(np.sum(np.abs(F.comps) ** 2)
                        * (2 * np.pi / spec.box) ** spec.d
                        / (2 * np.pi) ** spec.d)
    assert abs(freq_side - l2_norm(f)) <= 1e-12 * l2_norm(f)


def test_derivative_eigenfunction():
    spec = SPEC1
    xi0 = 2 * np.pi * 5 / spec.box
    f = Field.from_function(spec, lambda x: np.exp(1j * xi0 * x))
    df = spectral_derivative(f, 0)
    assert np.max(np.abs(df.comps - 1j * xi0 * f.comps)) <= 1e-10


def test_derivative_constant_and_sine():
    spec = SPEC1
    const = Field(spec, np.ones(spec.shape))
    assert np.max(np.abs(spectral_derivative(const, 0).comps)) <= 1e-13
    L = spec.box
    f = Field.from_function(spec, lambda x: np.sin(2 * np.pi * x / L))
    df = spectral_derivative(f, 0)
    exact = (2 * np.pi / L) * np.cos(2 * np.pi * spec.mesh()[0] / L)
    assert np.max(np.abs(df.comps[0] - exact)) <= 1e-10


def test_derivative_axis_bounds():
    with pytest.raises(ValueError):
        spectral_derivative(random_field(SPEC1, np.random.default_rng(0)), 1)


@pytest.mark.parametrize("spec", [SPEC1, SPEC2])
def test_lp_partition_of_unity(spec, rng):
    f = random_field(spec, rng)
    total = np.zeros(spec.shape, dtype=complex)
    for k in range(spec.k_max + 1):
        total += lp_project(f, k).comps[0]
    assert np.max(np.abs(total - f.comps[0])) <= 1e-11


def test_band_disjointness(rng):
    f = random_field(SPEC1, rng)
    for j, k in [(0, 2), (1, 3), (2, 4), (0, 5)]:
        g = lp_project(lp_project(f, k), j)
        assert np.max(np.abs(g.comps)) <= 1e-12


def test_pure_mode_band_selection():
    # a representable mode on band k's plateau passes unchanged and bands
    # two away annihilate it
    spec = SPEC1
    k = 3
    target = 1.2 * 2.0 ** k                  # interior of the band plateau
    xi_axis = spec.freq_axis()
    mode = xi_axis[np.argmin(np.abs(xi_axis - target))]
    f = Field.from_function(spec, lambda x: np.exp(1j * mode * x))
    passed = lp_project(f, k)
    assert np.max(np.abs(passed.comps - f.comps)) <= 1e-10
    for kk in (k - 2, k + 2):
        if 0 <= kk <= spec.k_max:
            killed = lp_project(f, kk)
            assert np.max(np.abs(killed.comps)) <= 1e-12


def test_lp_blocks_match_masked_transform_oracle(rng):
    # dyadic block L2 sizes against a direct masked-transform computation
    spec = SPEC1
    f = gaussian_field(spec, 1.0, 0.5)
    F = to_frequency(f)
    for k in range(spec.k_max + 1):
        ours = l2_norm(lp_project(f, k))
        masked = FrequencyField(spec, F.comps * band_profile(spec, k))
        direct = l2_norm(from_frequency(masked))
        assert abs(ours - direct) <= 1e-10


def test_lp_ranges(rng):
    f = random_field(SPEC1, rng)
    lo = lp_project_le(f, 2)
    rng_piece = lp_project_range(f, 3, SPEC1.k_max)
    assert np.max(np.abs(lo.comps + rng_piece.comps - f.comps)) <= 1e-11
    assert np.max(np.abs(lp_project_range(f, 4, 3).comps)) == 0.0


@pytest.mark.parametrize("spec", [SPEC1, SPEC2])
def test_cube_partition_sums_and_sign(spec):
    for j in range(spec.J + 1):
        parts = cube_partition(spec, j)
        total = sum(w for _, w in parts)
        assert np.max(np.abs(total - 1.0)) <= 1e-12
        for _, w in parts:
            assert np.min(w) >= 0.0


def test_cube_degenerate_scale():
    parts = cube_partition(SPEC1, SPEC1.J)
    assert len(parts) == 1
    assert np.all(parts[0][1] == 1.0)
    parts = cube_partition(SPEC1, SPEC1.J + 3)
    assert len(parts) == 1


def test_cube_support_scan():
    # at scale J-2 in d=1 there are 4 cubes, each weight inside a width-2*side
    # window around its center
    spec = SPEC1
    j = spec.J - 2
    side = 2.0 ** j
    parts = cube_partition(spec, j)
    centers = cube_centers(spec, j)
    assert len(parts) == 4
    x = spec.mesh()[0]
    for (idx, w), c in zip(parts, centers):
        dist = np.abs((x - c[0] + spec.box / 2) % spec.box - spec.box / 2)
        assert np.max(w[dist >= side]) <= 1e-15


def test_inner_product_conjugate_symmetry(rng):
    f = random_field(SPEC1, rng)
    g = random_field(SPEC1, rng)
    assert inner(f, g) == pytest.approx(np.conj(inner(g, f)))
