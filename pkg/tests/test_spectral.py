import math

import numpy as np
import pytest

from stochns.spectral import (
    NoiseOperator,
    SpectralField,
    StokesModel,
    analyze,
    apply_semigroup,
    bilinear,
    diagonal_model,
    divergence_residual,
    fourier_model,
    fractional_power,
    from_modal,
    inner,
    leray_project,
    lp_norm,
    lr_lp_constant,
    random_field,
    read_snapshot,
    smoothing_constant,
    sobolev_norm,
    synthesize,
    to_physical,
    from_physical,
    write_snapshot,
    zero_field,
)


def _raw(model, entries):
    c = np.zeros(model.storage_shape, dtype=complex)
    for k, vec in entries.items():
        c[(slice(None),) + tuple(k)] = vec
    return c


def test_eigenvalues_sorted_and_positive(model2, model3):
    for m in (model2, model3):
        lam = m.eigenvalues
        assert lam[0] > 0 and np.all(np.diff(lam) >= 0)


def test_diagonal_eigenvalues_exact():
    m = diagonal_model(3, 50)
    assert np.array_equal(m.eigenvalues, np.arange(1, 51) ** (2 / 3))
    assert diagonal_model(2, 10).eigenvalues[3] == 4.0


def test_fourier_mode_count_and_prefix():
    m = fourier_model(2, 8)
    kh = m.halfspace_wavevectors
    assert m.n_modes == 2 * kh.shape[0]  # one polarisation, cos and sin
    # a smaller radius is a prefix of the larger enumeration
    small = fourier_model(2, 4)
    assert np.array_equal(small.halfspace_wavevectors, kh[: small.halfspace_wavevectors.shape[0]])
    assert np.array_equal(small.eigenvalues, m.eigenvalues[: small.n_modes])
    assert m.modes_within(4) == small.n_modes


def test_leray_examples():
    m = fourier_model(2, 3)
    raw = _raw(m, {(1, 0): [1, 1], (-1, 0): [1, 1]})
    out = leray_project(raw, m).coeffs
    assert np.allclose(out[:, 1, 0], [0, 1]) and np.allclose(out[:, -1, 0], [0, 1])
    grad = m.wavenumbers * (0.3 + 0.2j) * m.mask
    assert np.abs(leray_project(grad, m).coeffs).max() < 1e-15


def test_leray_idempotent_bitwise(model2):
    rng = np.random.default_rng(0)
    raw = rng.standard_normal(model2.storage_shape) + 1j * rng.standard_normal(model2.storage_shape)
    once = leray_project(raw, model2)
    assert np.array_equal(leray_project(once).coeffs, once.coeffs)
    assert divergence_residual(once) < 1e-14


def test_semigroup_single_mode():
    m = diagonal_model(2, 8)
    e = np.zeros(8)
    e[3] = 1.0  # lambda_4 = 4
    out = apply_semigroup(0.5, SpectralField(m, e))
    assert out.coeffs[3] == pytest.approx(math.exp(-2.0), rel=1e-15)
    assert out.coeffs[3] == pytest.approx(0.135335283236612691894, rel=1e-15)


def test_semigroup_identity_composition_and_contraction(model2):
    u = random_field(model2, np.random.default_rng(2))
    assert np.array_equal(apply_semigroup(0.0, u).coeffs, u.coeffs)
    a = apply_semigroup(0.3, apply_semigroup(0.2, u))
    b = apply_semigroup(0.5, u)
    assert np.allclose(a.coeffs, b.coeffs, rtol=1e-13, atol=1e-16)
    norms = [apply_semigroup(t, u).l2_norm() for t in (0, 0.01, 0.1, 1)]
    assert all(x >= y for x, y in zip(norms, norms[1:]))
    with pytest.raises(ValueError):
        apply_semigroup(-1.0, u)


def test_semigroup_mode_decay_exact(model2):
    j = 37
    e = from_modal(model2, np.eye(model2.n_modes)[j])
    t = 0.07
    ratio = apply_semigroup(t, e).l2_norm() / e.l2_norm()
    assert ratio == pytest.approx(math.exp(-model2.eigenvalues[j] * t), rel=1e-13)


def test_fractional_power(model2):
    u = random_field(model2, np.random.default_rng(3))
    assert np.array_equal(fractional_power(0.0, u).coeffs, u.coeffs)
    back = fractional_power(-0.5, fractional_power(0.5, u))
    assert np.allclose(back.coeffs, u.coeffs, rtol=1e-14, atol=1e-17)
    m = diagonal_model(2, 8)
    e = np.zeros(8)
    e[3] = 1.0
    assert fractional_power(1.0, SpectralField(m, e)).coeffs[3] == pytest.approx(4.0)


def test_modal_roundtrip(model2, model3):
    for m in (model2, model3):
        c = np.random.default_rng(4).standard_normal(m.n_modes)
        assert np.allclose(analyze(m, synthesize(m, c)), c, atol=1e-13)
        f = from_modal(m, c)
        assert f.l2_norm() == pytest.approx(np.linalg.norm(c), rel=1e-12)
        assert divergence_residual(f) < 1e-14


def test_physical_roundtrip(model2):
    u = random_field(model2, np.random.default_rng(5))
    back = from_physical(model2, to_physical(u))
    assert np.allclose(back.coeffs, u.coeffs, atol=1e-15)


def test_lp_norm_examples():
    m = fourier_model(2, 2)
    assert lp_norm(zero_field(m), 4) == 0.0
    # u(x) = (sin x2, 0): coefficients -i/2 at k=(0,1), +i/2 at k=(0,-1)
    u = SpectralField(m, _raw(m, {(0, 1): [-0.5j, 0], (0, -1): [0.5j, 0]}))
    assert lp_norm(u, 4) == pytest.approx(1.96154263030034406811, rel=1e-13)
    assert lp_norm(u, 2) == pytest.approx(math.sqrt(2 * math.pi**2), rel=1e-13)
    with pytest.raises(ValueError):
        lp_norm(u, 1.5)


def test_lp2_matches_parseval(model2, model3):
    for m in (model2, model3):
        u = random_field(m, np.random.default_rng(6))
        assert lp_norm(u, 2) == pytest.approx(u.l2_norm(), rel=1e-10)


def test_sobolev_single_mode(model2):
    j = 11
    e = from_modal(model2, np.eye(model2.n_modes)[j])
    for s in (0.0, 0.5, 1.0, 2.0):
        assert sobolev_norm(e, s) == pytest.approx(model2.eigenvalues[j] ** (s / 2), rel=1e-13)
    u = random_field(model2, np.random.default_rng(7))
    assert sobolev_norm(u, 0.0) == pytest.approx(u.l2_norm())
    assert sobolev_norm(u, 0.5) <= sobolev_norm(u, 1.0)


def test_bilinear_two_mode_oracle():
    # u = a cos(k1.x), v = b cos(k2.x):  B(u, v) = -P (u.grad) v = P b (a.k2) sin(k2.x) cos(k1.x),
    # so B(k1 +- k2) = -+ (i/4) (a.k2) P b with k1 = (1,0), a = (0,1), k2 = (0,2), b = (1,0)
    m = fourier_model(2, 4)
    u = SpectralField(m, _raw(m, {(1, 0): [0, 0.5], (-1, 0): [0, 0.5]}))
    v = SpectralField(m, _raw(m, {(0, 2): [0.5, 0], (0, -2): [0.5, 0]}))
    b = bilinear(u, v).coeffs
    plus = -0.5j * np.array([0.8, -0.4])
    minus = 0.5j * np.array([0.8, 0.4])
    expected = _raw(m, {(1, 2): plus, (-1, -2): plus.conj(), (1, -2): minus, (-1, 2): minus.conj()})
    assert np.allclose(b, expected, atol=1e-15)


def test_bilinear_zero_and_mismatch(model2):
    u = random_field(model2, np.random.default_rng(8))
    z = zero_field(model2)
    assert np.abs(bilinear(z, u).coeffs).max() == 0 and np.abs(bilinear(u, z).coeffs).max() == 0
    with pytest.raises(ValueError):
        bilinear(u, random_field(fourier_model(2, 8), np.random.default_rng(0)))


@pytest.mark.parametrize("m", [fourier_model(2, 16), fourier_model(3, 8)], ids=["d2", "d3"])
def test_energy_identities(m):
    rng = np.random.default_rng(9)
    for _ in range(5):
        u, v, w = (random_field(m, rng, decay=1.0) for _ in range(3))
        scale = u.l2_norm() * v.l2_norm() * w.l2_norm() * m.size
        assert abs(inner(bilinear(u, v), v)) <= 1e-12 * scale
        assert abs(inner(bilinear(u, v), w) + inner(bilinear(u, w), v)) <= 1e-12 * scale
        assert divergence_residual(bilinear(u, v)) < 1e-12


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
def test_smoothing_constant_bounded(model2, alpha):
    rng = np.random.default_rng(10)
    fields = [random_field(model2, rng, decay=d) for d in (0.0, 1.0, 2.0)]
    c = smoothing_constant(model2, alpha, np.logspace(-4, 0, 17), fields)
    assert 0 < c <= (alpha / math.e) ** alpha * (1 + 1e-6)


def test_lr_lp_constant_finite(model2):
    rng = np.random.default_rng(11)
    fields = [random_field(model2, rng, decay=d) for d in (0.0, 2.0)]
    c = lr_lp_constant(model2, 2.0, 4.0, np.logspace(-3, 0, 7), fields)
    assert math.isfinite(c) and c > 0


def test_noise_operator_multipliers():
    m = diagonal_model(2, 5)
    assert np.allclose(NoiseOperator(0.0).multipliers(m), 1.0)
    assert np.allclose(NoiseOperator(2.0).multipliers(m), 1 / np.arange(1, 6))


def test_snapshot_roundtrip(tmp_path, model2):
    u = random_field(model2, np.random.default_rng(12))
    path = write_snapshot(u, tmp_path / "u.snap")
    back = read_snapshot(path)
    assert back.model == model2 and np.array_equal(back.coeffs, u.coeffs)
    d = diagonal_model(2, 7)
    f = SpectralField(d, np.arange(7.0))
    assert np.array_equal(read_snapshot(write_snapshot(f, tmp_path / "d.snap")).coeffs, f.coeffs)


def test_model_validation():
    with pytest.raises(ValueError):
        StokesModel(4, "fourier_periodic", 4)
    with pytest.raises(ValueError):
        StokesModel(2, "fourier_periodic", 4, viscosity=0.0)
    with pytest.raises(ValueError):
        leray_project(zero_field(diagonal_model(2, 3)))
