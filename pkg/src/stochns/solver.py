"""Local mild L^p solutions by Picard iteration on ``v = u - z``.

The iteration is

    v^{j+1}(t) = S(t) u0 + int_0^t S(t-s) B(z(s) + v^j(s)) ds,

with the Duhamel integral advanced step by step with exponential quadrature,
so the stiff linear part is integrated exactly in every mode.  The local
horizon ``tau`` and contraction ratio ``C0`` come from the random constant
``K0 = max(||u0||_p, sup_t ||z(t)||_p)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .convolution import ConvolutionTrajectory, convolve
from .estimates import AdmissibilityReport, check_admissibility
from .fbm import CylindricalPath, HurstGrid, refine_cylindrical, sample_cylindrical
from .spectral import (
    NoiseOperator,
    SpectralField,
    StokesModel,
    _bilinear_coeffs,
    _lp_norms,
    lp_norm,
    lr_lp_constant,
    random_field,
    smoothing_constant,
    zero_field,
)

__all__ = [
    "SolveConfig",
    "SolveDiagnostics",
    "LocalSolution",
    "DirectSolution",
    "phi_functions",
    "duhamel_step",
    "compute_K0",
    "compute_tau",
    "contraction_ratio",
    "calibrate_M",
    "sample_noise",
    "local_convolution",
    "picard_step",
    "solve_local",
    "solve_direct",
    "uniqueness_probe",
    "seed_contrast",
    "CrossValidation",
    "cross_validate",
    "noise_hash",
    "write_diagnostics",
]

BOUND_SLACK = 0.05
BLOWUP_FACTOR = 1e6
SCHEMES = ("trapezoid", "euler")


@dataclass(frozen=True)
class SolveConfig:
    model: StokesModel
    noise_operator: NoiseOperator
    hurst: float
    p_exponent: float
    t_final: float = 1.0
    n_steps: int = 256
    seed: int = 0
    M_constant: float | str = 1.0
    max_picard_iters: int = 50
    picard_tol: float = 1e-12
    u0: SpectralField | None = None
    scheme: str = "trapezoid"
    local_steps: int = 64
    quadrature_order: int = 4

    def __post_init__(self) -> None:
        if not self.model.is_fourier:
            raise ValueError("the solver needs the fourier_periodic backend")
        if not self.p_exponent > self.model.dim:
            raise ValueError(f"p_exponent must exceed the dimension {self.model.dim}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if isinstance(self.M_constant, str):
            if self.M_constant != "calibrated":
                raise ValueError("M_constant must be positive or 'calibrated'")
        elif not self.M_constant > 0:
            raise ValueError("M_constant must be positive")
        if self.u0 is not None and self.u0.model != self.model:
            raise ValueError("u0 lives on a different model")
        if self.max_picard_iters < 1 or self.local_steps < 1 or self.n_steps < 1:
            raise ValueError("iteration and step counts must be positive")

    @property
    def grid(self) -> HurstGrid:
        return HurstGrid(self.hurst, self.t_final, self.n_steps)

    @property
    def initial(self) -> SpectralField:
        return self.u0 if self.u0 is not None else zero_field(self.model)

    def to_dict(self) -> dict:
        m = self.model
        return {
            "dim": m.dim,
            "backend": m.backend,
            "size": m.size,
            "viscosity": m.viscosity,
            "q_exponent": self.noise_operator.q_exponent,
            "amplitude": self.noise_operator.amplitude,
            "hurst": self.hurst,
            "p_exponent": self.p_exponent,
            "t_final": self.t_final,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "M_constant": self.M_constant,
            "max_picard_iters": self.max_picard_iters,
            "picard_tol": self.picard_tol,
            "u0_l2": self.initial.l2_norm(),
            "scheme": self.scheme,
            "local_steps": self.local_steps,
            "quadrature_order": self.quadrature_order,
        }


@dataclass
class SolveDiagnostics:
    K0: float
    tau: float
    C0: float
    M: float
    horizon: float
    iteration_gaps: list[float]
    converged: bool
    admissibility: AdmissibilityReport
    sup_v_norm: float
    bound_ok: bool
    n_local_steps: int
    status: str = "converged"
    reason: str = ""

    @property
    def gap_ratios(self) -> np.ndarray:
        g = np.asarray(self.iteration_gaps)
        with np.errstate(divide="ignore", invalid="ignore"):
            return g[1:] / g[:-1]

    def contraction_ok(self, slack: float = BOUND_SLACK) -> bool:
        """``gap[j+1] <= (C0 + slack) gap[j]`` for ``j >= 1`` while gaps are nonzero."""
        g = np.asarray(self.iteration_gaps)
        for j in range(1, g.size - 1):
            if g[j] == 0:
                break
            if g[j + 1] > (self.C0 + slack) * g[j]:
                return False
        return True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["admissibility"] = self.admissibility.to_dict()
        out["contraction_ok"] = self.contraction_ok()
        return out


@dataclass(eq=False)
class LocalSolution:
    """``u = v + z`` on the local grid over ``[0, horizon]``; coefficient arrays ``(n_t,) + storage``."""

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z: ConvolutionTrajectory
    diagnostics: SolveDiagnostics

    def state(self, n: int) -> SpectralField:
        return SpectralField(self.z.model, np.array(self.u[n]))

    def final(self) -> SpectralField:
        return self.state(len(self.times) - 1)


@dataclass(eq=False)
class DirectSolution:
    times: np.ndarray
    u: np.ndarray
    K0: float
    status: str = "completed"
    blowup_index: int | None = None
    lp_norms: np.ndarray = field(default=None, repr=False)

    def state(self, model: StokesModel, n: int) -> SpectralField:
        return SpectralField(model, np.array(self.u[n]))


def phi_functions(x) -> tuple[np.ndarray, np.ndarray]:
    """``phi1 = (1 - e^-x)/x`` and ``phi2 = (x - 1 + e^-x)/x^2``, series near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    xs = np.where(small, x, 0.0)
    p1s = np.zeros_like(xs)
    p2s = np.zeros_like(xs)
    term = np.ones_like(xs)
    fact1, fact2 = 1.0, 2.0
    for k in range(16):
        p1s += term / fact1
        p2s += term / fact2
        term = term * (-xs)
        fact1 *= k + 2
        fact2 *= k + 3
    xl = np.where(small, 1.0, x)
    p1 = np.where(small, p1s, -np.expm1(-xl) / xl)
    p2 = np.where(small, p2s, (xl + np.expm1(-xl)) / xl**2)
    return p1, p2


def duhamel_step(w, f_now, f_next, rates, dt: float, scheme: str = "trapezoid"):
    """One exponential-quadrature step of ``w' = -rate w + f``."""
    x = np.asarray(rates, dtype=float) * dt
    p1, p2 = phi_functions(x)
    decay = np.exp(-x)
    if scheme == "euler":
        return decay * w + dt * p1 * f_now
    return decay * w + dt * ((p1 - p2) * f_now + p2 * f_next)


def compute_K0(u0: SpectralField | None, z: ConvolutionTrajectory, p: float) -> float:
    """``max(||u0||_p, max_n ||z(t_n)||_p)``."""
    base = lp_norm(u0, p) if u0 is not None else 0.0
    if u0 is not None and u0.model != z.model:
        raise ValueError("u0 and z live on different models")
    return float(max(base, _lp_norms(z.model, z.coefficients, p).max()))


def compute_tau(p: float, d: int, M: float, K0: float, T: float) -> float:
    """``min(T, ((p - d) / (20 p M K0))^(2p/(p-d)))``."""
    if not p > d:
        raise ValueError(f"need p > d, got p={p}, d={d}")
    if M <= 0 or K0 < 0 or T <= 0:
        raise ValueError("need M > 0, K0 >= 0, T > 0")
    if K0 == 0:
        return float(T)
    return float(min(T, ((p - d) / (20.0 * p * M * K0)) ** (2.0 * p / (p - d))))


def contraction_ratio(p: float, d: int, M: float, K0: float, tau: float) -> float:
    """``C0 = 12 p M K0 / (p - d) * tau^(1/2 - d/(2p))``."""
    return float(12.0 * p * M * K0 / (p - d) * tau ** (0.5 - d / (2.0 * p)))


def calibrate_M(model: StokesModel, p: float, seed: int = 0, n_fields: int = 4) -> float:
    """Measured constant for ``||S(t) A^(1/2) w||_p <= M t^(-1/2 - d/(2p)) ||w||_(p/2)``.

    Taken as the product of the empirical ``L^(p/2) -> L^p`` smoothing constant
    and the ``A^(1/2) S(t)`` constant, each maximised over random fields and
    a logarithmic time grid.
    """
    if p < 4:
        raise ValueError("calibration needs p >= 4 so that p/2 >= 2")
    rng = np.random.default_rng(seed)
    fields = [random_field(model, rng, decay=d) for d in np.linspace(0.0, 2.0, n_fields)]
    times = np.logspace(-4, 0, 9)
    return float(lr_lp_constant(model, p / 2, p, times, fields) * smoothing_constant(model, 0.5, times, fields))


def _resolve_M(config: SolveConfig) -> float:
    if config.M_constant == "calibrated":
        return calibrate_M(config.model, config.p_exponent, config.seed)
    return float(config.M_constant)


def sample_noise(config: SolveConfig) -> CylindricalPath:
    return sample_cylindrical(config.grid, config.model.n_modes, config.seed)


def local_convolution(config: SolveConfig, noise: CylindricalPath, horizon: float) -> ConvolutionTrajectory:
    """``z`` on ``[0, horizon]`` with at least ``local_steps`` steps.

    The configured grid is reused when it already reaches the horizon with
    enough points; otherwise the noise is refined pathwise onto a new grid.
    """
    grid = noise.grid
    if horizon >= grid.t_final and grid.n_steps >= config.local_steps:
        return convolve(noise, config.model, config.noise_operator, config.quadrature_order)
    fine = refine_cylindrical(noise, min(horizon, grid.t_final), config.local_steps)
    return convolve(fine, config.model, config.noise_operator, config.quadrature_order)


def _nonlinear(model: StokesModel, u: np.ndarray) -> np.ndarray:
    return _bilinear_coeffs(model, u, u)


def picard_step(
    v_prev: np.ndarray,
    z: np.ndarray,
    u0: SpectralField,
    model: StokesModel,
    dt: float,
    scheme: str = "trapezoid",
    nonlinear: bool = True,
) -> np.ndarray:
    """``S(t_n) u0 + int_0^{t_n} S(t_n - s) B(z + v_prev) ds`` on every grid point."""
    if v_prev.shape != z.shape or v_prev.shape[1:] != model.storage_shape:
        raise ValueError("v_prev and z must share the grid and the model storage shape")
    if u0.model != model:
        raise ValueError("u0 lives on a different model")
    n_t = v_prev.shape[0]
    rates = model.viscosity * model.storage_eigenvalues
    forcing = _nonlinear(model, z + v_prev) if nonlinear else np.zeros_like(v_prev)
    out = np.empty(v_prev.shape, dtype=np.result_type(v_prev, u0.coeffs, complex))
    out[0] = u0.coeffs
    for n in range(n_t - 1):
        out[n + 1] = duhamel_step(out[n], forcing[n], forcing[n + 1], rates, dt, scheme)
    return out


def solve_local(
    config: SolveConfig,
    init: str = "u0",
    z: ConvolutionTrajectory | None = None,
    horizon: float | None = None,
    nonlinear: bool = True,
    K0: float | None = None,
) -> LocalSolution:
    """Picard iteration on ``[0, tau]`` until the sup-grid ``L^p`` gap drops below ``picard_tol``.

    ``z`` may be supplied on a ready-made local grid (its horizon is then
    used as-is); ``horizon`` caps ``tau`` so that several runs can share one
    interval.  ``init`` is ``"u0"`` (constant in time) or ``"zero"``.
    """
    if init not in ("u0", "zero"):
        raise ValueError("init must be 'u0' or 'zero'")
    model, p, d = config.model, config.p_exponent, config.model.dim
    u0 = config.initial
    M = _resolve_M(config)
    if K0 is None:
        full = z if z is not None else convolve(sample_noise(config), model, config.noise_operator, config.quadrature_order)
        K0 = compute_K0(u0, full, p)
    tau = compute_tau(p, d, M, K0, config.t_final)
    C0 = contraction_ratio(p, d, M, K0, tau)
    if z is None:
        span = tau if horizon is None else min(tau, horizon)
        noise = sample_noise(config)
        z = local_convolution(config, noise, span)
    span = float(z.times[-1])
    zc = z.coefficients
    dt = z.grid.dt

    v = np.broadcast_to(u0.coeffs, zc.shape).copy() if init == "u0" else np.zeros_like(zc)
    sup_v = float(_lp_norms(model, v, p).max())
    gaps: list[float] = []
    converged = False
    for _ in range(config.max_picard_iters):
        nxt = picard_step(v, zc, u0, model, dt, config.scheme, nonlinear)
        gaps.append(float(_lp_norms(model, nxt - v, p).max()))
        sup_v = max(sup_v, float(_lp_norms(model, nxt, p).max()))
        v = nxt
        if gaps[-1] <= config.picard_tol:
            converged = True
            break
    bound_ok = sup_v <= 2.0 * K0 * (1 + BOUND_SLACK) or K0 == 0
    status, reason = "converged", ""
    if not converged:
        status, reason = "not_converged", f"gap {gaps[-1]:.3e} > tol after {len(gaps)} iterations"
    elif not bound_ok:
        status, reason = "bound_violated", f"sup ||v||_p = {sup_v:.6e} > 2.1 K0"
    diag = SolveDiagnostics(
        K0=K0,
        tau=tau,
        C0=C0,
        M=M,
        horizon=span,
        iteration_gaps=gaps,
        converged=converged,
        admissibility=check_admissibility(d, p, config.noise_operator.q_exponent, config.hurst),
        sup_v_norm=sup_v,
        bound_ok=bool(bound_ok),
        n_local_steps=len(z) - 1,
        status=status,
        reason=reason,
    )
    return LocalSolution(z.times, v + zc, v, z, diag)


def solve_direct(config: SolveConfig, z: ConvolutionTrajectory | None = None, nonlinear: bool = True) -> DirectSolution:
    """Exponential Euler on ``u`` itself driven by the same ``z``.

    ``u_{n+1} = S(dt) u_n + dt phi1 B(u_n, u_n) + z_{n+1} - S(dt) z_n``.
    Halts with status ``"numerical_blowup"`` once ``||u||_p > 1e6 K0``.
    """
    model, p = config.model, config.p_exponent
    u0 = config.initial
    if z is None:
        z = convolve(sample_noise(config), model, config.noise_operator, config.quadrature_order)
    zc = z.coefficients
    K0 = compute_K0(u0, z, p)
    guard = BLOWUP_FACTOR * max(K0, np.finfo(float).tiny)
    dt = z.grid.dt
    x = model.viscosity * model.storage_eigenvalues * dt
    decay = np.exp(-x)
    p1, _ = phi_functions(x)
    u = np.zeros_like(zc)
    u[0] = u0.coeffs
    norms = np.full(len(z), np.nan)
    norms[0] = lp_norm(u0, p)
    for n in range(len(z) - 1):
        f = _nonlinear(model, u[n]) if nonlinear else 0.0
        u[n + 1] = decay * u[n] + dt * p1 * f + zc[n + 1] - decay * zc[n]
        norms[n + 1] = _lp_norms(model, u[n + 1][None], p)[0]
        if not np.isfinite(norms[n + 1]) or norms[n + 1] > guard:
            return DirectSolution(z.times[: n + 2], u[: n + 2], K0, "numerical_blowup", n + 1, norms[: n + 2])
    return DirectSolution(z.times, u, K0, "completed", None, norms)


def _sup_distance(model: StokesModel, a: np.ndarray, b: np.ndarray, p: float) -> float:
    return float(_lp_norms(model, a - b, p).max())


def uniqueness_probe(config: SolveConfig) -> float:
    """Sup-grid ``L^p`` distance between runs started from ``v0 = u0`` and ``v0 = 0``."""
    a = solve_local(config, init="u0")
    b = solve_local(config, init="zero", z=a.z, K0=a.diagnostics.K0)
    return _sup_distance(config.model, a.u, b.u, config.p_exponent)


def seed_contrast(config: SolveConfig, other_seed: int) -> float:
    """Same distance for two different seeds on their common horizon."""
    other = replace(config, seed=other_seed)
    a0 = solve_local(config)
    b0 = solve_local(other)
    span = min(a0.diagnostics.horizon, b0.diagnostics.horizon)
    a = solve_local(config, horizon=span)
    b = solve_local(other, horizon=span)
    return _sup_distance(config.model, a.u, b.u, config.p_exponent)


@dataclass
class CrossValidation:
    n_steps: list[int]
    errors: np.ndarray
    K0: float
    horizon: float

    @property
    def ratios(self) -> np.ndarray:
        return self.errors[:-1] / self.errors[1:]


def cross_validate(config: SolveConfig, finest_steps: int = 512, levels: int = 4) -> CrossValidation:
    """``||u_picard - u_direct||_p`` at the horizon as the step count doubles.

    ``z`` is computed once on the finest local grid and subsampled, so every
    level sees the same noise and only the time discretisation changes.
    """
    if finest_steps % 2 ** (levels - 1):
        raise ValueError("finest_steps must be divisible by 2^(levels-1)")
    fine = replace(config, local_steps=finest_steps)
    base = solve_local(fine)
    K0 = base.diagnostics.K0
    steps, errors = [], []
    for i in range(levels - 1, -1, -1):
        z = base.z.subsample(2**i)
        a = solve_local(fine, z=z, K0=K0)
        b = solve_direct(fine, z=z)
        diff = SpectralField(config.model, a.u[-1] - b.u[-1])
        steps.append(len(z) - 1)
        errors.append(lp_norm(diff, config.p_exponent))
    return CrossValidation(steps, np.array(errors), K0, base.diagnostics.horizon)


def noise_hash(noise: CylindricalPath) -> str:
    """SHA-256 of the little-endian path matrix."""
    data = np.ascontiguousarray(noise.paths, dtype="<f8").tobytes()
    return hashlib.sha256(data).hexdigest()


def write_diagnostics(diag: SolveDiagnostics, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(diag.to_dict(), indent=2, default=float))
    return path
