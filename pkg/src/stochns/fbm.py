"""Fractional Brownian motion on a uniform time grid.

Scalar paths are generated exactly in law by circulant embedding of the
fractional Gaussian noise (Davies-Harte), with a dense Cholesky factorisation
of the fBm covariance as fallback and test oracle.  Cylindrical noise is a
stack of independent scalar paths, one per eigenmode, each drawn from its own
counter-based (Philox) substream keyed by ``(seed, mode_index)`` so that
adding modes never changes the paths of existing ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg

__all__ = [
    "HurstGrid",
    "ModePath",
    "CylindricalPath",
    "EmbeddingError",
    "fbm_covariance",
    "fgn_autocovariance",
    "circulant_eigenvalues",
    "sample_fbm",
    "sample_fbm_cholesky",
    "sample_cylindrical",
    "refine_cylindrical",
    "mode_generator",
    "write_paths",
    "read_paths",
    "CovarianceCheck",
    "covariance_check",
]

#: relative size below which negative embedding eigenvalues count as round-off
EMBEDDING_CLAMP = 1e-12

_REFINE_PURPOSE = 1


class EmbeddingError(ValueError):
    """Raised when neither circulant embedding nor Cholesky yields a valid factor."""


def _check_hurst(hurst: float) -> None:
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must lie in (0, 1), got {hurst!r}")


@dataclass(frozen=True)
class HurstGrid:
    """Hurst parameter together with the uniform grid ``t_k = k * t_final / n_steps``."""

    hurst: float
    t_final: float
    n_steps: int

    def __post_init__(self) -> None:
        _check_hurst(self.hurst)
        if not self.t_final > 0:
            raise ValueError(f"t_final must be positive, got {self.t_final!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class ModePath:
    grid: HurstGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values.setflags(write=False)


@dataclass(frozen=True)
class CylindricalPath:
    """Independent fBm paths, row ``i`` driving eigenmode ``i``.

    ``paths`` has shape ``(n_modes, n_steps + 1)``.
    """

    grid: HurstGrid
    paths: np.ndarray
    seed: int
    stream_ids: tuple[int, ...] = field(default=())
    generator: str = "circulant"

    def __post_init__(self) -> None:
        if not self.stream_ids:
            object.__setattr__(self, "stream_ids", tuple(range(self.paths.shape[0])))
        self.paths.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return self.paths.shape[0]

    def mode(self, index: int) -> ModePath:
        return ModePath(self.grid, np.array(self.paths[index]))

    def truncate(self, n_modes: int) -> CylindricalPath:
        if n_modes > self.n_modes:
            raise ValueError(f"cannot truncate {self.n_modes} modes to {n_modes}")
        return CylindricalPath(
            self.grid,
            np.array(self.paths[:n_modes]),
            self.seed,
            self.stream_ids[:n_modes],
            self.generator,
        )


def fbm_covariance(t, s, hurst: float):
    """Covariance ``E[B(t) B(s)] = (t^2H + s^2H - |t-s|^2H) / 2``.

    Works elementwise on arrays.
    """
    _check_hurst(hurst)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("fbm_covariance is defined for t, s >= 0")
    h2 = 2.0 * hurst
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(k, hurst: float, dt: float = 1.0):
    """Autocovariance at lag ``k`` of the increments of fBm sampled with step ``dt``."""
    _check_hurst(hurst)
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("lag must be nonnegative")
    h2 = 2.0 * hurst
    out = 0.5 * dt**h2 * (np.abs(k + 1) ** h2 - 2.0 * np.abs(k) ** h2 + np.abs(k - 1) ** h2)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def circulant_eigenvalues(hurst: float, n_steps: int, dt: float) -> np.ndarray:
    """Eigenvalues of the size ``2 * n_steps`` circulant embedding (rfft layout).

    Negative values within ``EMBEDDING_CLAMP`` of the largest are clamped to
    zero; larger negative values raise :class:`EmbeddingError`.
    """
    gamma = fgn_autocovariance(np.arange(n_steps + 1), hurst, dt)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.rfft(row).real
    floor = -EMBEDDING_CLAMP * eig.max()
    if eig.min() < floor:
        raise EmbeddingError(
            f"negative circulant eigenvalue {eig.min():.3e} for H={hurst}, N={n_steps}"
        )
    eig = np.maximum(eig, 0.0)
    eig.setflags(write=False)
    return eig


@lru_cache(maxsize=16)
def _cholesky_factor(hurst: float, n_steps: int, dt: float) -> np.ndarray:
    times = np.arange(1, n_steps + 1) * dt
    cov = fbm_covariance(times[:, None], times[None, :], hurst)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise EmbeddingError(
            f"fBm covariance not positive definite for H={hurst}, N={n_steps}"
        ) from exc
    factor.setflags(write=False)
    return factor


def mode_generator(seed: int, stream: int, purpose: int = 0) -> np.random.Generator:
    """Philox generator for substream ``stream`` of ``seed``."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream ids must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def _embedding_paths(grid: HurstGrid, normals: np.ndarray) -> np.ndarray:
    """Map ``(m, 2N)`` standard normals to ``(m, N + 1)`` fBm paths."""
    n = grid.n_steps
    eig = circulant_eigenvalues(grid.hurst, n, grid.dt)
    spec = np.empty((normals.shape[0], n + 1), dtype=complex)
    spec[:, 0] = normals[:, 0]
    spec[:, n] = normals[:, 1]
    spec[:, 1:n] = (normals[:, 2 : n + 1] + 1j * normals[:, n + 1 :]) / np.sqrt(2.0)
    spec *= np.sqrt(eig * 2 * n)
    increments = np.fft.irfft(spec, n=2 * n, axis=1)[:, :n]
    out = np.zeros((normals.shape[0], n + 1))
    np.cumsum(increments, axis=1, out=out[:, 1:])
    return out


def _cholesky_paths(grid: HurstGrid, normals: np.ndarray) -> np.ndarray:
    factor = _cholesky_factor(grid.hurst, grid.n_steps, grid.dt)
    out = np.zeros((normals.shape[0], grid.n_steps + 1))
    out[:, 1:] = normals[:, : grid.n_steps] @ factor.T
    return out


def _draw(grid: HurstGrid, seed: int, streams, method: str) -> tuple[np.ndarray, str]:
    n = grid.n_steps
    normals = np.empty((len(streams), 2 * n))
    for row, stream in enumerate(streams):
        normals[row] = mode_generator(seed, stream).standard_normal(2 * n)
    if method == "circulant":
        try:
            return _embedding_paths(grid, normals), "circulant"
        except EmbeddingError:
            method = "cholesky"
    if method == "cholesky":
        return _cholesky_paths(grid, normals), "cholesky"
    raise ValueError(f"unknown generation method {method!r}")


def sample_fbm(grid: HurstGrid, seed: int, stream: int = 0, method: str = "circulant") -> ModePath:
    """One fBm path on ``grid``, deterministic in ``(seed, stream, grid)``."""
    paths, _ = _draw(grid, seed, [stream], method)
    return ModePath(grid, paths[0])


def sample_fbm_cholesky(grid: HurstGrid, seed: int, stream: int = 0) -> ModePath:
    return sample_fbm(grid, seed, stream, method="cholesky")


def sample_cylindrical(
    grid: HurstGrid, n_modes: int, seed: int, method: str = "circulant"
) -> CylindricalPath:
    """``n_modes`` independent fBm paths; mode ``i`` uses substream ``i``."""
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    streams = tuple(range(n_modes))
    paths, used = _draw(grid, seed, streams, method)
    return CylindricalPath(grid, paths, int(seed), streams, used)


def refine_cylindrical(noise: CylindricalPath, t_final: float, n_steps: int) -> CylindricalPath:
    """Sample the same paths on a finer uniform grid over ``[0, t_final]``.

    The new values are drawn from the exact Gaussian conditional law given
    every value already on the coarse grid, so the result is a pathwise
    refinement rather than a fresh sample.  Randomness comes from a separate
    substream of each mode.
    """
    coarse = noise.grid
    if t_final > coarse.t_final * (1 + 1e-12):
        raise ValueError("refinement horizon exceeds the sampled interval")
    fine = HurstGrid(coarse.hurst, t_final, n_steps)
    ct = coarse.times[1:]
    ft = fine.times[1:]

    # fine points that coincide with coarse ones are copied, not resampled
    idx = np.searchsorted(ct, ft)
    idx_c = np.clip(idx, 0, ct.size - 1)
    tol = 1e-12 * coarse.t_final
    hit = np.abs(ct[idx_c] - ft) <= tol
    idx_m = np.clip(idx - 1, 0, ct.size - 1)
    hit_m = (idx > 0) & (np.abs(ct[idx_m] - ft) <= tol)
    copy_from = np.where(hit, idx_c, np.where(hit_m, idx_m, -1))
    free = copy_from < 0

    h = coarse.hurst
    cov_cc = fbm_covariance(ct[:, None], ct[None, :], h)
    fr = ft[free]
    cov_fc = fbm_covariance(fr[:, None], ct[None, :], h)
    cov_ff = fbm_covariance(fr[:, None], fr[None, :], h)
    chol = scipy.linalg.cho_factor(cov_cc, lower=True)
    gain = scipy.linalg.cho_solve(chol, cov_fc.T).T
    cond = cov_ff - gain @ cov_fc.T
    cond = 0.5 * (cond + cond.T)
    w, v = np.linalg.eigh(cond)
    w = np.where(w > EMBEDDING_CLAMP * max(w.max(), 0.0), w, 0.0)
    root = v * np.sqrt(w)

    out = np.zeros((noise.n_modes, n_steps + 1))
    coarse_vals = noise.paths[:, 1:]
    out[:, 1:][:, ~free] = coarse_vals[:, copy_from[~free]]
    n_free = int(free.sum())
    if n_free:
        normals = np.empty((noise.n_modes, n_free))
        for row, stream in enumerate(noise.stream_ids):
            normals[row] = mode_generator(noise.seed, stream, _REFINE_PURPOSE).standard_normal(n_free)
        out[:, 1:][:, free] = coarse_vals @ gain.T + normals @ root.T
    return CylindricalPath(fine, out, noise.seed, noise.stream_ids, noise.generator + "+bridge")


@dataclass
class CovarianceCheck:
    """Entrywise comparison of an empirical covariance with the exact one."""

    hurst: float
    n_paths: int
    n_pairs: int
    fraction_within: float
    max_z: float
    n_sigma: float

    @property
    def passed(self) -> bool:
        return self.fraction_within >= 0.99


def covariance_check(
    grid: HurstGrid, n_paths: int, seed: int, n_sigma: float = 5.0, method: str = "circulant"
) -> CovarianceCheck:
    """Share of entry pairs ``t_i <= t_j`` whose empirical covariance lies within
    ``n_sigma`` Monte-Carlo standard errors of the exact value.

    The standard error of each entry comes from the sample variance of the
    products ``B(t_i) B(t_j)``.
    """
    paths = sample_cylindrical(grid, n_paths, seed, method).paths[:, 1:]
    t = grid.times[1:]
    exact = fbm_covariance(t[:, None], t[None, :], grid.hurst)
    mean = paths.T @ paths / n_paths
    sq = paths**2
    second = sq.T @ sq / n_paths
    se = np.sqrt(np.maximum(second - mean**2, 0.0) / n_paths)
    iu = np.triu_indices(t.size)
    zscore = np.abs(mean - exact)[iu] / se[iu]
    return CovarianceCheck(
        hurst=grid.hurst,
        n_paths=n_paths,
        n_pairs=int(zscore.size),
        fraction_within=float((zscore <= n_sigma).mean()),
        max_z=float(zscore.max()),
        n_sigma=n_sigma,
    )


def write_paths(noise: CylindricalPath, stem: str | Path, code_version: str = "") -> tuple[Path, Path]:
    """Dump paths as little-endian float64, row-major ``(mode, time)``, plus a JSON manifest."""
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    np.ascontiguousarray(noise.paths, dtype="<f8").tofile(bin_path)
    manifest = {
        "seed": noise.seed,
        "hurst": noise.grid.hurst,
        "t_final": noise.grid.t_final,
        "n_steps": noise.grid.n_steps,
        "n_modes": noise.n_modes,
        "generator": noise.generator,
        "code_version": code_version,
    }
    json_path.write_text(json.dumps(manifest, indent=2))
    return bin_path, json_path


def read_paths(stem: str | Path) -> CylindricalPath:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    grid = HurstGrid(meta["hurst"], meta["t_final"], meta["n_steps"])
    data = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    paths = data.reshape(meta["n_modes"], meta["n_steps"] + 1).astype(float)
    return CylindricalPath(grid, paths, meta["seed"], generator=meta["generator"])
