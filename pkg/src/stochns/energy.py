"""Energy audit for ``v = u - z`` in two dimensions.

Testing the equation for ``v`` against ``v`` gives

    (1/2) d/dt ||v||^2 + nu ||grad v||^2 = <B(v + z, z), v>,

because ``<B(w, v), v> = 0`` for divergence-free ``w``.  Ladyzhenskaya's
inequality ``||w||_4 <= C_L ||w||_2^(1/2) ||grad w||_2^(1/2)`` and Young's
inequality turn the right side into ``C ||z||_4^4 (||v||^2 + 1)``, whose
Gronwall envelope bounds ``||v||^2`` for all time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.optimize

from .convolution import ConvolutionTrajectory, convolve
from .spectral import (
    StokesModel,
    _bilinear_coeffs,
    _lp_norms,
    _physical,
    _project,
    _sobolev_sq,
    analyze,
    from_modal,
    from_physical,
    lp_grid_size,
    random_field,
    synthesize,
)

__all__ = [
    "EnergyLedger",
    "InterpolationNorms",
    "gronwall_envelope",
    "energy_audit",
    "interpolation_exponents",
    "interpolation_norms",
    "ladyzhenskaya_ratio",
    "ladyzhenskaya_constant",
    "gronwall_constant",
    "write_energy_csv",
    "AuditRun",
    "audit_run",
]

ENVELOPE_RTOL = 1e-12


@dataclass
class EnergyLedger:
    times: np.ndarray
    v_l2_sq: np.ndarray
    grad_v_sq: np.ndarray
    z_l4_fourth: np.ndarray
    gronwall_envelope: np.ndarray
    residuals: np.ndarray
    trilinear_defect: np.ndarray = field(repr=False)
    C_constant: float = 1.0
    p_exponent: float | None = None

    @property
    def pointwise_pass(self) -> np.ndarray:
        return self.v_l2_sq <= self.gronwall_envelope * (1 + ENVELOPE_RTOL)

    @property
    def passed(self) -> bool:
        return bool(self.pointwise_pass.all())

    @property
    def verdict(self) -> str:
        base = "pass" if self.passed else "fail"
        if self.p_exponent is not None and self.p_exponent < 4:
            return base + " (outside stated range p >= 4)"
        return base

    @property
    def residual_norm(self) -> float:
        """Discrete ``L^2`` in time norm of the residuals."""
        dt = np.diff(self.times)
        return float(math.sqrt((self.residuals[:-1] ** 2 * dt).sum()))


def gronwall_envelope(E0: float, a: np.ndarray, dt: float, C: float) -> np.ndarray:
    """``E_{n+1} = (E_n + C a_n dt) exp(C a_n dt)`` with ``a`` frozen at the left end of each step.

    Each step is the integral-form Gronwall bound for ``E' <= C a (E + 1)``;
    it dominates the exact solution ``(E_n + 1) exp(C a_n dt) - 1``.
    """
    out = np.empty(a.size)
    out[0] = E0
    growth = C * np.asarray(a[:-1], dtype=float) * dt
    for n, g in enumerate(growth):
        out[n + 1] = (out[n] + g) * math.exp(g)
    return out


def _pairing(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    return np.real((a * b.conj()).reshape(n, -1).sum(axis=1))


def energy_audit(
    v: np.ndarray, z: ConvolutionTrajectory, C: float = 1.0, p_exponent: float | None = None
) -> EnergyLedger:
    """Energy ledger for coefficient arrays ``v`` of shape ``(n_t,) + storage`` on the grid of ``z``."""
    model = z.model
    if model.dim != 2 or not model.is_fourier:
        raise ValueError("the energy audit is two-dimensional and needs the fourier_periodic backend")
    v = np.asarray(v)
    zc = z.coefficients
    if v.shape != zc.shape:
        raise ValueError("v and z must share the grid and the model")
    if C <= 0:
        raise ValueError("C must be positive")
    dt = z.grid.dt
    vv = _sobolev_sq(model, v, 0.0)
    gv = _sobolev_sq(model, v, 1.0)
    z4 = _lp_norms(model, zc, 4.0) ** 4
    w = v + zc
    scale = (2 * np.pi) ** model.dim
    forcing = scale * _pairing(_bilinear_coeffs(model, w, zc), v)
    transport = scale * _pairing(_bilinear_coeffs(model, w, v), v)
    size = np.sqrt(_sobolev_sq(model, w, 0.0) * gv * vv) + np.finfo(float).tiny
    residuals = np.diff(vv) / dt + 2 * model.viscosity * gv[:-1] - 2 * forcing[:-1]
    envelope = gronwall_envelope(float(vv[0]), z4, dt, C)
    return EnergyLedger(
        times=z.times,
        v_l2_sq=vv,
        grad_v_sq=gv,
        z_l4_fourth=z4,
        gronwall_envelope=envelope,
        residuals=np.append(residuals, np.nan),
        trilinear_defect=np.abs(transport) / size,
        C_constant=float(C),
        p_exponent=p_exponent,
    )


def interpolation_exponents(p: float, d: int) -> tuple[float, float]:
    """``(r, s)`` with ``L^inf L^2 cap L^2 H^1 subset L^r H^s``."""
    if d == 2:
        if not p > 2:
            raise ValueError("d = 2 needs p > 2")
        return 2 * p / (p - 2), 1 - 2 / p
    if d == 3:
        if not 2 < p <= 6:
            raise ValueError("d = 3 needs 2 < p <= 6")
        return 4 * p / (3 * (p - 2)), 3 * (p - 2) / (2 * p)
    raise ValueError("d must be 2 or 3")


@dataclass
class InterpolationNorms:
    r: float
    s: float
    theta: float
    lr_hs: float
    linf_l2: float
    l2_h1: float

    @property
    def bound(self) -> float:
        return self.linf_l2 ** (1 - self.theta) * self.l2_h1**self.theta

    @property
    def holds(self) -> bool:
        return self.lr_hs <= self.bound * (1 + 1e-12)


def interpolation_norms(v: np.ndarray, model: StokesModel, dt: float, p: float) -> InterpolationNorms:
    """Discrete ``||v||_{L^r_t H^s}`` against ``||v||_{L^inf L^2}^(1-theta) ||v||_{L^2 H^1}^theta``.

    Time integrals use left-point sums over the ``n_t - 1`` steps, the same
    rule for every norm, so the inequality is exact on the discrete data.
    """
    r, s = interpolation_exponents(p, model.dim)
    theta = 2 / r
    v = np.asarray(v)
    hs = _sobolev_sq(model, v, s) ** 0.5
    l2 = _sobolev_sq(model, v, 0.0) ** 0.5
    h1 = _sobolev_sq(model, v, 1.0) ** 0.5
    steps = slice(0, max(1, v.shape[0] - 1))
    return InterpolationNorms(
        r=r,
        s=s,
        theta=theta,
        lr_hs=float((dt * (hs[steps] ** r).sum()) ** (1 / r)),
        linf_l2=float(l2.max()),
        l2_h1=float((dt * (h1[steps] ** 2).sum()) ** 0.5),
    )


def ladyzhenskaya_ratio(model: StokesModel, coeffs: np.ndarray) -> np.ndarray:
    """``||w||_4 / (||w||_2^(1/2) ||grad w||_2^(1/2))`` for a batch of fields."""
    coeffs = np.asarray(coeffs)
    if coeffs.ndim == model.dim + 1:
        coeffs = coeffs[None]
    l4 = _lp_norms(model, coeffs, 4.0)
    l2 = _sobolev_sq(model, coeffs, 0.0) ** 0.25
    h1 = _sobolev_sq(model, coeffs, 1.0) ** 0.25
    return l4 / (l2 * h1)


def _bump(model: StokesModel, width: float, rng: np.random.Generator) -> np.ndarray:
    """Leray projection of a localised Gaussian vector bump."""
    k = model.wavenumbers
    envelope = np.exp(-0.5 * width**2 * model.ksq)
    direction = rng.standard_normal(model.dim)
    shift = np.exp(-1j * np.tensordot(rng.uniform(0, 2 * np.pi, model.dim), k, axes=1))
    raw = direction.reshape((-1,) + (1,) * model.dim) * envelope * shift
    return _project(model, raw.astype(complex))


def _log_ratio4(model: StokesModel, c: np.ndarray) -> tuple[float, np.ndarray]:
    """``log(||w||_4^4 / (||w||_2^2 ||grad w||_2^2))`` and its gradient in modal coordinates."""
    lam = model.eigenvalues
    coeffs = synthesize(model, c)
    n_grid = lp_grid_size(model, 4.0)
    w = _physical(model, coeffs, n_grid)
    mag2 = (w**2).sum(axis=0)
    cell = (2 * np.pi / n_grid) ** model.dim
    l4 = cell * (mag2**2).sum()
    l2 = c @ c
    h1 = (lam * c) @ c
    cubic = from_physical(model, mag2 * w).coeffs
    grad_l4 = 4 * analyze(model, _project(model, cubic))
    value = math.log(l4) - math.log(l2) - math.log(h1)
    return value, grad_l4 / l4 - 2 * c / l2 - 2 * lam * c / h1


def ladyzhenskaya_constant(model: StokesModel, seed: int = 0, n_fields: int = 32, polish: bool = True) -> float:
    """Empirical sup of the Ladyzhenskaya ratio on the truncated space.

    Candidates are single modes, random fields and projected Gaussian bumps;
    the best one is then improved by L-BFGS ascent on the ratio.  The result
    is a lower estimate of the true constant.
    """
    if model.dim != 2:
        raise ValueError("the calibration is two-dimensional")
    rng = np.random.default_rng(seed)
    batch = [from_modal(model, np.eye(model.n_modes)[j]).coeffs for j in range(min(model.n_modes, 8))]
    batch += [random_field(model, rng, decay=d).coeffs for d in np.linspace(0.5, 4.0, n_fields // 2)]
    widths = np.geomspace(1.0 / model.size, 1.0, n_fields - n_fields // 2)
    batch += [_bump(model, w, rng) for w in widths]
    batch = np.stack(batch)
    ratios = ladyzhenskaya_ratio(model, batch)
    best = float(ratios.max())
    if not polish:
        return best
    start = analyze(model, batch[int(ratios.argmax())])
    start /= np.linalg.norm(start)

    def objective(c):
        val, grad = _log_ratio4(model, c)
        return -val, -grad

    res = scipy.optimize.minimize(objective, start, jac=True, method="L-BFGS-B", options={"maxiter": 200})
    polished = float(ladyzhenskaya_ratio(model, synthesize(model, res.x))[0])
    return max(best, polished)


def gronwall_constant(c_lady: float) -> float:
    """``C = max(27/4 C_L^4, 1)`` from Young's inequality with exponents 4/3 and 4."""
    return max(27.0 / 4.0 * c_lady**4, 1.0)


def write_energy_csv(ledger: EnergyLedger, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "v_l2_sq", "grad_v_sq", "z_l4_fourth", "envelope", "residual", "pass"])
        for row in zip(
            ledger.times,
            ledger.v_l2_sq,
            ledger.grad_v_sq,
            ledger.z_l4_fourth,
            ledger.gronwall_envelope,
            ledger.residuals,
            ledger.pointwise_pass,
        ):
            w.writerow([repr(float(x)) for x in row[:-1]] + [int(row[-1])])
    return path


@dataclass
class AuditRun:
    ledgers: list[EnergyLedger]
    n_steps: list[int]
    residual_norms: np.ndarray
    control: EnergyLedger
    interpolation: InterpolationNorms | None
    blowup: bool

    @property
    def ratios(self) -> np.ndarray:
        return self.residual_norms[:-1] / self.residual_norms[1:]

    @property
    def control_monotone(self) -> bool:
        return bool(np.all(np.diff(self.control.v_l2_sq) <= 0))


def audit_run(config, C: float, refinements: int = 3) -> AuditRun:
    """Audit direct runs on ``[0, t_final]`` at ``n_steps * 2^i``, ``i = 0..refinements``.

    The noise is sampled once on the finest grid so every level sees the same
    path.  A run with the noise switched off serves as the dissipation control.
    Interpolation norms are taken on the coarsest level.
    """
    from .solver import sample_noise, solve_direct

    model = config.model
    fine_cfg = replace(config, n_steps=config.n_steps * 2**refinements)
    z_fine = convolve(sample_noise(fine_cfg), model, config.noise_operator, config.quadrature_order)
    ledgers, steps, coarse_v = [], [], None
    blowup = False
    for i in range(refinements, -1, -1):
        z = z_fine.subsample(2**i)
        run = solve_direct(fine_cfg, z=z)
        if run.status != "completed":
            blowup = True
            break
        v = run.u - z.coefficients
        coarse_v = v if coarse_v is None else coarse_v
        ledgers.append(energy_audit(v, z, C, config.p_exponent))
        steps.append(len(z) - 1)
    quiet = replace(config, noise_operator=replace(config.noise_operator, amplitude=0.0))
    z0 = convolve(sample_noise(quiet), model, quiet.noise_operator, quiet.quadrature_order)
    control = energy_audit(solve_direct(quiet, z=z0).u - z0.coefficients, z0, C, config.p_exponent)
    interp = None
    if coarse_v is not None:
        interp = interpolation_norms(coarse_v, model, config.t_final / config.n_steps, config.p_exponent)
    return AuditRun(ledgers, steps, np.array([l.residual_norm for l in ledgers]), control, interp, blowup)
