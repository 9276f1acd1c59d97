import json
import math
from dataclasses import replace

import numpy as np
import pytest

from stochns.convolution import convolve
from stochns.solver import (
    SolveConfig,
    calibrate_M,
    compute_K0,
    compute_tau,
    contraction_ratio,
    duhamel_step,
    noise_hash,
    phi_functions,
    picard_step,
    sample_noise,
    solve_direct,
    solve_local,
    uniqueness_probe,
    write_diagnostics,
)
from stochns.spectral import (
    NoiseOperator,
    SpectralField,
    apply_semigroup,
    diagonal_model,
    divergence_residual,
    fourier_model,
    lp_norm,
    random_field,
    zero_field,
)


@pytest.fixture(scope="module")
def small():
    model = fourier_model(2, 4)
    u0 = random_field(model, np.random.default_rng(1), decay=2.0)
    u0 = SpectralField(model, u0.coeffs / lp_norm(u0, 4))
    return SolveConfig(model, NoiseOperator(1.5), 0.75, 4.0, 1.0, 64, seed=7, u0=u0, local_steps=32)


def test_tau_reference_values():
    assert compute_tau(4, 2, 1.0, 1.0, 1.0) == pytest.approx(3.90625e-7, rel=1e-14)
    assert compute_tau(6, 3, 1.0, 1.0, 1.0) == pytest.approx(3.90625e-7, rel=1e-14)
    assert compute_tau(4, 2, 1.0, 0.0, 2.5) == 2.5
    assert compute_tau(4, 2, 1e-9, 1.0, 0.5) == 0.5


def test_tau_domain():
    with pytest.raises(ValueError):
        compute_tau(2, 2, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        compute_tau(4, 2, 0.0, 1.0, 1.0)


def test_contraction_ratio_at_tau():
    for p, d, M, K0 in [(4, 2, 1.0, 1.0), (6, 3, 2.0, 0.3), (10, 2, 0.5, 7.0)]:
        tau = compute_tau(p, d, M, K0, 1.0)
        assert tau < 1.0
        assert contraction_ratio(p, d, M, K0, tau) == pytest.approx(0.6, rel=1e-12)


def test_phi_functions():
    p1, p2 = phi_functions(np.array([0.0, 1e-9, 0.49999, 0.50001, 3.0, 50.0]))
    assert p1[0] == 1.0 and p2[0] == 0.5
    x = np.array([0.49999, 0.50001, 3.0, 50.0])
    np.testing.assert_allclose(p1[2:], -np.expm1(-x) / x, rtol=1e-14)
    np.testing.assert_allclose(p2[2:], (x + np.expm1(-x)) / x**2, rtol=1e-12)
    assert abs(p1[2] - p1[3]) < 1e-5


@pytest.mark.parametrize("scheme", ["trapezoid", "euler"])
def test_duhamel_constant_forcing(scheme):
    # w' = -w + c, w(0) = 0 has w(h) = c (1 - e^-h)
    for h in (1e-4, 0.3, 2.0):
        w = duhamel_step(np.zeros(1), np.full(1, 3.0), np.full(1, 3.0), np.ones(1), h, scheme)
        assert w[0] == pytest.approx(3.0 * -math.expm1(-h), rel=1e-13)


def test_trapezoid_exact_for_linear_forcing():
    # w' = -r w + t has w(t) = t/r - (1 - e^{-rt})/r^2
    r, h = 2.0, 0.25
    w = np.zeros(1)
    for n in range(8):
        w = duhamel_step(w, np.array([n * h]), np.array([(n + 1) * h]), np.array([r]), h)
    t = 8 * h
    assert w[0] == pytest.approx(t / r + math.expm1(-r * t) / r**2, rel=1e-12)


def test_config_validation(small):
    with pytest.raises(ValueError):
        replace(small, p_exponent=2.0)
    with pytest.raises(ValueError):
        replace(small, M_constant=-1.0)
    with pytest.raises(ValueError):
        replace(small, M_constant="guess")
    with pytest.raises(ValueError):
        replace(small, scheme="rk4")
    with pytest.raises(ValueError):
        SolveConfig(diagonal_model(2, 4), NoiseOperator(), 0.7, 4.0)
    with pytest.raises(ValueError):
        replace(small, u0=zero_field(fourier_model(2, 3)))
    assert small.to_dict()["seed"] == 7


def test_K0(small):
    z = convolve(sample_noise(small), small.model, NoiseOperator(1.5, amplitude=0.0))
    assert compute_K0(small.u0, z, 4.0) == pytest.approx(1.0, rel=1e-12)
    assert compute_K0(None, z, 4.0) == 0.0
    z2 = convolve(sample_noise(small), small.model, small.noise_operator)
    assert compute_K0(None, z2, 4.0) > 0


def test_picard_step_linear_and_zero(small):
    model = small.model
    shape = (9,) + model.storage_shape
    zeros = np.zeros(shape, dtype=complex)
    assert np.all(picard_step(zeros, zeros, zero_field(model), model, 0.01) == 0)
    lin = picard_step(zeros, zeros, small.u0, model, 0.01, nonlinear=False)
    for n in (0, 4, 8):
        np.testing.assert_allclose(lin[n], apply_semigroup(0.01 * n, small.u0).coeffs, atol=1e-15)
    with pytest.raises(ValueError):
        picard_step(zeros[:3], zeros, small.u0, model, 0.01)


def test_trivial_problem_converges_immediately(small):
    cfg = replace(small, u0=None, noise_operator=NoiseOperator(1.5, amplitude=0.0))
    sol = solve_local(cfg)
    d = sol.diagnostics
    assert d.K0 == 0 and d.tau == 1.0
    assert d.iteration_gaps == [0.0] and d.converged
    assert np.all(sol.u == 0)


def test_local_solution_properties(small):
    sol = solve_local(small)
    d = sol.diagnostics
    assert d.converged and d.status == "converged"
    assert d.K0 >= 1.0 - 1e-12
    assert d.tau == pytest.approx(compute_tau(4, 2, 1.0, d.K0, 1.0), rel=1e-15)
    assert d.C0 == pytest.approx(0.6)
    assert d.contraction_ok()
    assert d.bound_ok and d.sup_v_norm <= 2.1 * d.K0
    assert d.n_local_steps == 32
    assert sol.times[-1] == pytest.approx(d.tau, rel=1e-12)
    assert max(divergence_residual(sol.state(n)) for n in range(len(sol.times))) < 1e-12
    np.testing.assert_array_equal(sol.u[0], small.u0.coeffs + sol.z.coefficients[0])


def test_gap_ratios_and_contraction_flag():
    from stochns.solver import SolveDiagnostics

    def diag(gaps):
        return SolveDiagnostics(1, 1, 0.6, 1, 1, gaps, True, None, 0, True, 1)

    assert diag([1.0, 0.5, 0.3, 0.1]).contraction_ok()
    assert not diag([1.0, 0.5, 0.4, 0.1]).contraction_ok()
    assert diag([1.0, 1.0, 0.0, 0.0]).contraction_ok()
    np.testing.assert_allclose(diag([1.0, 0.5, 0.25]).gap_ratios, [0.5, 0.5])


def test_direct_linear_is_semigroup_plus_noise(small):
    z = convolve(sample_noise(small), small.model, small.noise_operator)
    sol = solve_direct(small, z=z, nonlinear=False)
    assert sol.status == "completed"
    for n in (0, 17, 64):
        expect = apply_semigroup(z.times[n], small.u0).coeffs + z.coefficients[n]
        np.testing.assert_allclose(sol.u[n], expect, atol=1e-13)


def test_direct_no_blowup_in_2d(small):
    sol = solve_direct(small)
    assert sol.status == "completed" and sol.blowup_index is None
    assert np.all(np.isfinite(sol.lp_norms))


def test_direct_blowup_guard(small):
    big = SpectralField(small.model, small.u0.coeffs * 1e4)
    cfg = replace(small, u0=big, noise_operator=NoiseOperator(1.5, amplitude=0.0), n_steps=8)
    sol = solve_direct(cfg)
    assert sol.status == "numerical_blowup"
    assert sol.blowup_index == len(sol.times) - 1


def test_uniqueness_small(small):
    assert uniqueness_probe(small) <= 10 * small.picard_tol


def test_euler_scheme_runs(small):
    sol = solve_local(replace(small, scheme="euler"))
    assert sol.diagnostics.converged


def test_calibrated_M():
    model = fourier_model(2, 4)
    M = calibrate_M(model, 4.0, seed=0, n_fields=2)
    assert math.isfinite(M) and M > 0
    assert M == calibrate_M(model, 4.0, seed=0, n_fields=2)
    with pytest.raises(ValueError):
        calibrate_M(model, 3.0)


def test_noise_hash(small):
    h = noise_hash(sample_noise(small))
    assert len(h) == 64 and h == noise_hash(sample_noise(small))
    assert h != noise_hash(sample_noise(replace(small, seed=8)))


def test_write_diagnostics(small, tmp_path):
    sol = solve_local(small)
    data = json.loads(write_diagnostics(sol.diagnostics, tmp_path / "d.json").read_text())
    assert data["contraction_ok"] is True
    assert data["admissibility"]["admissible"] in (True, False)
    assert len(data["iteration_gaps"]) == len(sol.diagnostics.iteration_gaps)
