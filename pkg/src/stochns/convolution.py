"""Pathwise stochastic convolution ``z(t) = int_0^t S(t-s) Phi dW(s)`` and regularity probes.

Every eigenmode is an independent scalar problem ``dz = -r z dt + phi d beta``
with ``r = nu * lambda_j``.  One step of the recursion is

    z(t+h) = exp(-r h) z(t) + phi * I,
    I = beta(t+h) - exp(-r h) beta(t) - r int_t^{t+h} exp(-r (t+h-s)) beta(s) ds,

i.e. the stochastic integral after integration by parts.  The remaining
ordinary integral uses the trapezoid rule on ``quadrature_order`` sub-intervals
with ``beta`` linear between grid points, so the step collapses to
``I = b1 * beta(t+h) - b0 * beta(t)`` with per-mode weights.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .fbm import CylindricalPath, HurstGrid, mode_generator
from .spectral import NoiseOperator, SpectralField, StokesModel, synthesize, write_snapshot

__all__ = [
    "ConvolutionTrajectory",
    "RegularityReport",
    "HolderEstimate",
    "step_weights",
    "convolve_modes",
    "convolve",
    "convolve_exact_ou",
    "ou_variance",
    "regularity_probe",
    "holder_probe",
    "write_trajectory",
    "write_regularity_csv",
]

DIVERGENCE_RATIO = 0.9
_OU_PURPOSE = 2


@dataclass(frozen=True, eq=False)
class ConvolutionTrajectory:
    """Stochastic convolution on a grid, stored as modal coefficients ``(n_steps + 1, n_modes)``."""

    model: StokesModel
    noise_operator: NoiseOperator
    grid: HurstGrid
    modal: np.ndarray
    quadrature_order: int = 4

    def __post_init__(self) -> None:
        self.modal.setflags(write=False)

    def __len__(self) -> int:
        return self.modal.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @cached_property
    def coefficients(self) -> np.ndarray:
        """Coefficient storage for every grid point, shape ``(n_t,) + model.storage_shape``."""
        out = synthesize(self.model, self.modal)
        out.setflags(write=False)
        return out

    def state(self, n: int) -> SpectralField:
        return SpectralField(self.model, np.array(self.coefficients[n]))

    @property
    def states(self) -> list[SpectralField]:
        return [self.state(n) for n in range(len(self))]

    def subsample(self, stride: int) -> ConvolutionTrajectory:
        """Every ``stride``-th grid point; the noise realisation is unchanged."""
        if self.grid.n_steps % stride:
            raise ValueError("stride must divide n_steps")
        grid = HurstGrid(self.grid.hurst, self.grid.t_final, self.grid.n_steps // stride)
        return ConvolutionTrajectory(
            self.model, self.noise_operator, grid, np.array(self.modal[::stride]), self.quadrature_order
        )

    def scaled(self, factor: float) -> ConvolutionTrajectory:
        return ConvolutionTrajectory(
            self.model, self.noise_operator, self.grid, self.modal * factor, self.quadrature_order
        )


def step_weights(rates: np.ndarray, dt: float, quadrature_order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-mode ``(decay, b0, b1)`` so that ``I = b1 * beta_next - b0 * beta_prev``."""
    if quadrature_order < 1:
        raise ValueError("quadrature_order must be >= 1")
    rates = np.asarray(rates, dtype=float)
    theta = np.linspace(0.0, 1.0, quadrature_order + 1)
    w = np.full(theta.size, dt / quadrature_order)
    w[[0, -1]] *= 0.5
    kernel = np.exp(-np.outer(rates, (1.0 - theta)) * dt) * w
    a = kernel @ (1.0 - theta)
    b = kernel @ theta
    decay = np.exp(-rates * dt)
    return decay, decay + rates * a, 1.0 - rates * b


def convolve_modes(
    paths: np.ndarray, rates: np.ndarray, multipliers: np.ndarray, dt: float, quadrature_order: int = 4
) -> np.ndarray:
    """Recursive convolution for paths ``(n_modes, n_t)``; returns ``(n_t, n_modes)``."""
    paths = np.asarray(paths, dtype=float)
    n_modes, n_t = paths.shape
    decay, b0, b1 = step_weights(rates, dt, quadrature_order)
    phi = np.asarray(multipliers, dtype=float)
    beta = paths.T
    out = np.zeros((n_t, n_modes))
    for n in range(n_t - 1):
        out[n + 1] = decay * out[n] + phi * (b1 * beta[n + 1] - b0 * beta[n])
    return out


def convolve(
    noise: CylindricalPath,
    model: StokesModel,
    noise_operator: NoiseOperator,
    quadrature_order: int = 4,
) -> ConvolutionTrajectory:
    """Stochastic convolution driven by the first ``model.n_modes`` noise paths."""
    if noise.n_modes < model.n_modes:
        raise ValueError(f"noise has {noise.n_modes} modes, model needs {model.n_modes}")
    rates = model.viscosity * model.eigenvalues
    phi = noise_operator.multipliers(model)
    modal = convolve_modes(noise.paths[: model.n_modes], rates, phi, noise.grid.dt, quadrature_order)
    return ConvolutionTrajectory(model, noise_operator, noise.grid, modal, quadrature_order)


def ou_variance(rate, h):
    """``int_0^h exp(-2 r s) ds``, stable as ``r -> 0``."""
    rate = np.asarray(rate, dtype=float)
    x = 2.0 * rate * h
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, rate)
    return np.where(small, h * (1 - 0.5 * x), -np.expm1(-x) / (2.0 * safe))


def convolve_exact_ou(
    grid: HurstGrid, model: StokesModel, noise_operator: NoiseOperator, seed: int
) -> ConvolutionTrajectory:
    """Exact-in-law sampler for ``H = 1/2`` (Gaussian OU transition per step)."""
    if grid.hurst != 0.5:
        raise ValueError("the exact OU sampler is only valid for hurst = 0.5")
    rates = model.viscosity * model.eigenvalues
    phi = noise_operator.multipliers(model)
    decay = np.exp(-rates * grid.dt)
    sd = phi * np.sqrt(ou_variance(rates, grid.dt))
    xi = np.empty((model.n_modes, grid.n_steps))
    for j in range(model.n_modes):
        xi[j] = mode_generator(seed, j, _OU_PURPOSE).standard_normal(grid.n_steps)
    out = np.zeros((grid.n_steps + 1, model.n_modes))
    for n in range(grid.n_steps):
        out[n + 1] = decay * out[n] + sd * xi[:, n]
    return ConvolutionTrajectory(model, noise_operator, grid, out, 0)


@dataclass
class RegularityReport:
    """Sup-in-time ``H^alpha`` norm of ``z`` under successive mode truncations."""

    alpha: float
    levels: list[int]
    mode_counts: list[int]
    sup_norms: np.ndarray
    increments: np.ndarray
    ratios: np.ndarray
    threshold: float
    convergent: bool
    n_paths: int = 1

    @property
    def divergent(self) -> bool:
        """Every increment ratio at or above the threshold."""
        return bool(self.ratios.size > 0 and np.all(self.ratios >= self.threshold))

    @property
    def mean_ratio(self) -> float:
        """Geometric mean of the increment ratios."""
        return float((self.increments[-1] / self.increments[0]) ** (1.0 / self.ratios.size))


def _weighted_cumsum(traj: ConvolutionTrajectory, alpha: float) -> np.ndarray:
    lam = traj.model.eigenvalues
    return np.cumsum(traj.modal**2 * lam**alpha, axis=1)


def regularity_probe(
    trajectory: ConvolutionTrajectory | list[ConvolutionTrajectory],
    alpha: float,
    n_levels: int = 5,
    threshold: float = DIVERGENCE_RATIO,
) -> RegularityReport:
    """Refinement curve of ``sup_t ||z(t)||_{H^alpha}`` as the truncation doubles.

    Levels are the wavenumber radii ``K / 2^i`` on the Fourier backend and mode
    counts ``J / 2^i`` on the diagonal backend, finest last.  Passing several
    trajectories averages the curve over the ensemble.  The curve is called
    convergent when every ratio of successive increments is below
    ``threshold``.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    trajs = [trajectory] if isinstance(trajectory, ConvolutionTrajectory) else list(trajectory)
    model = trajs[0].model
    top = model.size
    levels = sorted({max(1, top >> i) for i in range(n_levels)})
    if model.is_fourier:
        counts = [model.modes_within(k) for k in levels]
    else:
        counts = list(levels)
    sups = np.zeros(len(levels))
    for traj in trajs:
        if traj.model != model:
            raise ValueError("ensemble members must share one model")
        csum = _weighted_cumsum(traj, alpha)
        sups += [math.sqrt(csum[:, c - 1].max()) if c else 0.0 for c in counts]
    sups /= len(trajs)
    inc = np.diff(sups)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = inc[1:] / inc[:-1]
    convergent = bool(ratios.size > 0 and np.all(ratios < threshold))
    return RegularityReport(alpha, levels, counts, sups, inc, ratios, threshold, convergent, len(trajs))


@dataclass
class HolderEstimate:
    exponent: float
    stderr: float
    lags: np.ndarray = field(repr=False)
    rms: np.ndarray = field(repr=False)
    degenerate: bool = False

    @property
    def band(self) -> tuple[float, float]:
        return self.exponent - 2 * self.stderr, self.exponent + 2 * self.stderr


def holder_probe(
    trajectories: ConvolutionTrajectory | list[ConvolutionTrajectory],
    alpha: float = 0.0,
    max_lag_fraction: float = 1.0 / 16,
) -> HolderEstimate:
    """Temporal Hölder exponent from the log-log slope of RMS increments over dyadic lags.

    Increments are pooled over all start times and all given trajectories.
    The band is two regression standard errors.
    """
    if isinstance(trajectories, ConvolutionTrajectory):
        trajectories = [trajectories]
    first = trajectories[0]
    n_t = len(first)
    lam = first.model.eigenvalues ** alpha
    max_lag = max(1, int(max_lag_fraction * (n_t - 1)))
    lags = []
    lag = 1
    while lag <= max_lag:
        lags.append(lag)
        lag *= 2
    lags = np.array(lags)
    ms = np.zeros(lags.size)
    for traj in trajectories:
        z = traj.modal
        for i, l in enumerate(lags):
            dz = z[l:] - z[:-l]
            ms[i] += float(((dz**2) * lam).sum(axis=1).mean())
    ms /= len(trajectories)
    h = lags * first.grid.dt
    if lags.size < 2 or np.any(ms <= 0):
        return HolderEstimate(math.nan, math.nan, h, np.sqrt(ms), degenerate=True)
    x = np.log(h)
    y = 0.5 * np.log(ms)
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    slope = float(coef[0])
    if lags.size > 2:
        resid = y - np.polyval(coef, x)
        s2 = float(resid @ resid) / (lags.size - 2)
        stderr = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    else:
        stderr = 0.0
    return HolderEstimate(slope, stderr, h, np.sqrt(ms))


def write_trajectory(traj: ConvolutionTrajectory, directory: str | Path, manifest: dict | None = None) -> Path:
    """One field snapshot per grid point plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for n in range(len(traj)):
        write_snapshot(traj.state(n), directory / f"state_{n:06d}.snap")
    meta = {
        "n_states": len(traj),
        "hurst": traj.grid.hurst,
        "t_final": traj.grid.t_final,
        "n_steps": traj.grid.n_steps,
        "q_exponent": traj.noise_operator.q_exponent,
        "quadrature_order": traj.quadrature_order,
    }
    meta.update(manifest or {})
    (directory / "manifest.json").write_text(json.dumps(meta, indent=2))
    return directory


def write_regularity_csv(report: RegularityReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["J", "sup_norm"])
        for level, val in zip(report.levels, report.sup_norms):
            w.writerow([level, repr(float(val))])
    return path
