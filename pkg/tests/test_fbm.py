import json
import math

import numpy as np
import pytest
from scipy import stats

from stochns.fbm import (
    CylindricalPath,
    HurstGrid,
    _embedding_paths,
    circulant_eigenvalues,
    covariance_check,
    fbm_covariance,
    fgn_autocovariance,
    read_paths,
    refine_cylindrical,
    sample_cylindrical,
    sample_fbm,
    sample_fbm_cholesky,
    write_paths,
)


@pytest.mark.parametrize(
    "t,s,h,expected",
    [(1.0, 1.0, 0.3, 1.0), (2.0, 3.0, 0.5, 2.0), (1.0, 2.0, 0.75, 1.41421356237309504880)],
)
def test_covariance_values(t, s, h, expected):
    assert fbm_covariance(t, s, h) == pytest.approx(expected, rel=1e-14)


def test_covariance_symmetric_and_diagonal():
    t = np.linspace(0, 3, 7)
    c = fbm_covariance(t[:, None], t[None, :], 0.37)
    assert np.array_equal(c, c.T)
    assert np.allclose(np.diag(c), t**0.74, rtol=1e-14)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_covariance_rejects_bad_hurst(bad):
    with pytest.raises(ValueError):
        fbm_covariance(1.0, 1.0, bad)


def test_covariance_rejects_negative_time():
    with pytest.raises(ValueError):
        fbm_covariance(-1.0, 1.0, 0.5)


@pytest.mark.parametrize(
    "k,h,expected", [(0, 0.4, 1.0), (1, 0.5, 0.0), (1, 0.75, 0.41421356237309504880)]
)
def test_fgn_autocovariance_values(k, h, expected):
    assert fgn_autocovariance(k, h, 1.0) == pytest.approx(expected, abs=1e-15)


def test_fgn_is_second_difference_of_covariance():
    h, dt = 0.63, 0.25
    k = np.arange(1, 9)
    t = lambda i: i * dt
    direct = (
        fbm_covariance(t(k + 1), t(1), h) - fbm_covariance(t(k), t(1), h)
        - fbm_covariance(t(k + 1), t(0), h) + fbm_covariance(t(k), t(0), h)
    )
    assert np.allclose(fgn_autocovariance(k, h, dt), direct, rtol=1e-12)


@pytest.mark.parametrize("h", [0.1, 0.3, 0.5, 0.75, 0.95])
def test_embedding_is_exact_in_law(h):
    # the generator is linear in the normals; its implied covariance must be the exact one
    grid = HurstGrid(h, 2.0, 32)
    basis = np.eye(2 * grid.n_steps)
    paths = _embedding_paths(grid, basis)[:, 1:]
    implied = paths.T @ paths
    t = grid.times[1:]
    exact = fbm_covariance(t[:, None], t[None, :], h)
    assert np.allclose(implied, exact, rtol=1e-10, atol=1e-12)


def test_circulant_eigenvalues_nonnegative():
    for h in (0.05, 0.5, 0.99):
        assert circulant_eigenvalues(h, 128, 1 / 128).min() >= 0


def test_sample_deterministic_and_starts_at_zero():
    grid = HurstGrid(0.7, 1.0, 64)
    a, b = sample_fbm(grid, 5), sample_fbm(grid, 5)
    assert a.values[0] == 0.0
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_fbm(grid, 6).values)


def test_single_mode_cylindrical_matches_scalar():
    grid = HurstGrid(0.6, 1.0, 32)
    assert np.array_equal(sample_cylindrical(grid, 1, 9).paths[0], sample_fbm(grid, 9, stream=0).values)


def test_mode_extension_is_bit_stable():
    grid = HurstGrid(0.6, 1.0, 32)
    small = sample_cylindrical(grid, 8, 3)
    big = sample_cylindrical(grid, 16, 3)
    assert np.array_equal(big.paths[:8], small.paths)
    assert np.array_equal(big.truncate(8).paths, small.paths)


def test_endpoint_variance_and_lag_correlations():
    n = 10_000
    grid = HurstGrid(0.75, 1.0, 16)
    paths = sample_cylindrical(grid, n, 21).paths
    end = paths[:, -1]
    var = end.var()
    se = math.sqrt(2.0 / n)  # Var of a sample variance with unit true variance
    assert abs(var - 1.0) < 4 * se
    inc = np.diff(sample_cylindrical(HurstGrid(0.75, 16.0, 16), n, 22).paths, axis=1)
    rho = np.mean(inc[:, 0] * inc[:, 1]) / np.mean(inc[:, 0] ** 2)
    assert abs(rho - 0.41421356) < 4 / math.sqrt(n)
    inc = np.diff(sample_cylindrical(HurstGrid(0.5, 16.0, 16), n, 23).paths, axis=1)
    rho = np.mean(inc[:, 0] * inc[:, 1]) / np.mean(inc[:, 0] ** 2)
    assert abs(rho) < 4 / math.sqrt(n)


def test_modes_independent():
    n = 10_000
    grid = HurstGrid(0.4, 1.0, 8)
    paths = sample_cylindrical(grid, 2 * n, 4).paths[:, -1].reshape(n, 2)
    cross = np.mean(paths[:, 0] * paths[:, 1])
    assert abs(cross) < 4 / math.sqrt(n)


def test_self_similarity():
    n = 10_000
    a = sample_cylindrical(HurstGrid(0.3, 1.0, 8), n, 1).paths[:, -1].var()
    b = sample_cylindrical(HurstGrid(0.3, 2.0, 8), n, 2).paths[:, -1].var()
    target = 2**0.6
    # delta-method standard error of the ratio of two independent sample variances
    se = target * math.sqrt(4.0 / n)
    assert abs(b / a - target) < 4 * se


def test_circulant_and_cholesky_agree_in_law():
    grid = HurstGrid(0.8, 1.0, 32)
    n = 4000
    circ = sample_cylindrical(grid, n, 11, method="circulant").paths[:, -1]
    chol = sample_cylindrical(grid, n, 12, method="cholesky").paths[:, -1]
    assert stats.ks_2samp(circ, chol).pvalue > 0.01
    assert sample_fbm_cholesky(grid, 3).values[0] == 0.0


def test_covariance_check_small():
    check = covariance_check(HurstGrid(0.3, 1.0, 16), 10_000, 5)
    assert check.passed and check.n_pairs == 16 * 17 // 2


def test_refinement_copies_coarse_points_and_is_deterministic():
    grid = HurstGrid(0.7, 1.0, 16)
    noise = sample_cylindrical(grid, 4, 2)
    fine = refine_cylindrical(noise, 1.0, 64)
    assert np.array_equal(fine.paths[:, ::4], noise.paths)
    again = refine_cylindrical(noise, 1.0, 64)
    assert np.array_equal(fine.paths, again.paths)
    short = refine_cylindrical(noise, 1e-3, 64)
    assert short.grid.t_final == 1e-3 and short.paths.shape == (4, 65)


def test_refinement_has_exact_joint_law():
    # refined values on a sub-interval must follow the unconditional fBm law
    h = 0.75
    n = 6000
    noise = sample_cylindrical(HurstGrid(h, 1.0, 4), n, 8)
    fine = refine_cylindrical(noise, 0.1, 4)
    t = fine.grid.times[1:]
    emp = fine.paths[:, 1:].T @ fine.paths[:, 1:] / n
    exact = fbm_covariance(t[:, None], t[None, :], h)
    se = np.sqrt((exact * exact + np.outer(np.diag(exact), np.diag(exact))) / n)
    assert np.all(np.abs(emp - exact) < 5 * se)


def test_refinement_beyond_horizon_rejected():
    noise = sample_cylindrical(HurstGrid(0.5, 1.0, 4), 1, 0)
    with pytest.raises(ValueError):
        refine_cylindrical(noise, 2.0, 8)


def test_path_dump_roundtrip(tmp_path):
    noise = sample_cylindrical(HurstGrid(0.35, 2.0, 10), 3, 17)
    bin_path, json_path = write_paths(noise, tmp_path / "noise", "test")
    raw = np.fromfile(bin_path, dtype="<f8").reshape(3, 11)
    assert np.array_equal(raw, noise.paths)
    meta = json.loads(json_path.read_text())
    assert set(meta) == {"seed", "hurst", "t_final", "n_steps", "n_modes", "generator", "code_version"}
    back = read_paths(tmp_path / "noise")
    assert isinstance(back, CylindricalPath)
    assert np.array_equal(back.paths, noise.paths) and back.grid == noise.grid


def test_grid_validation():
    with pytest.raises(ValueError):
        HurstGrid(0.5, 0.0, 10)
    with pytest.raises(ValueError):
        HurstGrid(0.5, 1.0, 0)
    g = HurstGrid(0.5, 2.0, 8)
    assert g.dt == 0.25 and g.times[0] == 0.0 and g.times[-1] == 2.0
