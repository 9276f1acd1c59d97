"""Spectral Stokes model: divergence-free fields, semigroup, Leray projection, bilinear term.

Two backends share one interface.

``fourier_periodic``
    Zero-mean, divergence-free vector fields on the torus ``[0, 2 pi)^d``,
    truncated to the ball ``0 < |k|^2 <= K^2``.  Coefficients are stored as a
    complex array of shape ``(d, n, ..., n)`` with ``n = 2K + 1`` in numpy FFT
    order, normalised so that ``u(x) = sum_k u_hat(k) exp(i k.x)``.  The
    Stokes operator is ``-Laplace`` with eigenvalues ``|k|^2``.

``abstract_diagonal``
    A bare eigenbasis with ``lambda_j = j^(2/d)``, ``j = 1..J``; coefficients
    are a real vector of length ``J``.

Real orthonormal modes (used by the noise and by snapshots) are enumerated by
wavevector ``k`` in the half space (first nonzero component positive), sorted
by ``(|k|^2, k)`` lexicographically, then by polarisation, then cos before
sin.  The basis function for ``(k, a, cos)`` is
``sqrt(2) cos(k.x) p_a(k) / (2 pi)^(d/2)`` where the polarisations are

* ``d = 2``: ``p(k) = (-k2, k1) / |k|``;
* ``d = 3``: ``p_1 = k x e_m / |k x e_m|`` with ``e_m`` the axis of smallest
  ``|k_m|`` (lowest index on ties) and ``p_2 = k x p_1 / |k|``.

Because truncation is spherical, the mode list of radius ``K`` is a prefix of
the list for any larger radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft

__all__ = [
    "StokesModel",
    "SpectralField",
    "NoiseOperator",
    "fourier_model",
    "diagonal_model",
    "zero_field",
    "from_modal",
    "synthesize",
    "analyze",
    "modal_coefficients",
    "random_field",
    "leray_project",
    "apply_semigroup",
    "fractional_power",
    "bilinear",
    "inner",
    "lp_norm",
    "sobolev_norm",
    "to_physical",
    "from_physical",
    "divergence_residual",
    "dealias_size",
    "lp_grid_size",
    "smoothing_constant",
    "lr_lp_constant",
    "write_snapshot",
    "read_snapshot",
]

_SNAP = 1e-13
FOURIER = "fourier_periodic"
DIAGONAL = "abstract_diagonal"


@dataclass(frozen=True)
class StokesModel:
    """Eigen-description of the (surrogate) Stokes operator.

    ``size`` is the maximal wavenumber ``K`` for the Fourier backend and the
    number of modes ``J`` for the diagonal backend.
    """

    dim: int
    backend: str
    size: int
    viscosity: float = 1.0

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        if self.backend not in (FOURIER, DIAGONAL):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.size < 1:
            raise ValueError("size must be >= 1")
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")

    @property
    def is_fourier(self) -> bool:
        return self.backend == FOURIER

    @property
    def n(self) -> int:
        """Storage points per axis (Fourier backend)."""
        return 2 * self.size + 1

    @property
    def storage_shape(self) -> tuple[int, ...]:
        if self.is_fourier:
            return (self.dim,) + (self.n,) * self.dim
        return (self.size,)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavevectors, shape ``(d, n, ..., n)``."""
        axis = np.fft.fftfreq(self.n, 1.0 / self.n).round().astype(int)
        return np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"))

    @cached_property
    def ksq(self) -> np.ndarray:
        return (self.wavenumbers**2).sum(axis=0)

    @cached_property
    def mask(self) -> np.ndarray:
        return (self.ksq > 0) & (self.ksq <= self.size**2)

    @cached_property
    def _halfspace(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sorted half-space wavevectors with flat indices of k and -k and polarisations."""
        d = self.dim
        k = self.wavenumbers.reshape(d, -1).T
        ksq = self.ksq.ravel()
        inside = self.mask.ravel()
        first = np.zeros(k.shape[0], dtype=int)
        for axis in range(d - 1, -1, -1):
            first = np.where(k[:, axis] != 0, k[:, axis], first)
        half = np.flatnonzero(inside & (first > 0))
        keys = [k[half, a] for a in range(d - 1, -1, -1)] + [ksq[half]]
        half = half[np.lexsort(keys)]
        kh = k[half]
        neg_index = np.ravel_multi_index(tuple((-kh % self.n).T), (self.n,) * d)
        return kh, half, neg_index, _polarisations(kh)

    @property
    def halfspace_wavevectors(self) -> np.ndarray:
        return self._halfspace[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalue of each real mode, nondecreasing."""
        if self.is_fourier:
            kh = self._halfspace[0]
            lam = (kh**2).sum(axis=1).astype(float)
            out = np.repeat(lam, 2 * (self.dim - 1))
        else:
            out = np.arange(1, self.size + 1, dtype=float) ** (2.0 / self.dim)
        out.setflags(write=False)
        return out

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @cached_property
    def storage_eigenvalues(self) -> np.ndarray:
        """Eigenvalues broadcastable against the coefficient storage."""
        if self.is_fourier:
            return self.ksq.astype(float)
        return self.eigenvalues

    def modes_within(self, radius: float) -> int:
        """Number of leading real modes with ``lambda <= radius^2``."""
        return int(np.searchsorted(self.eigenvalues, radius**2 * (1 + 1e-12), side="right"))

    def with_size(self, size: int) -> StokesModel:
        return StokesModel(self.dim, self.backend, size, self.viscosity)


def _polarisations(kh: np.ndarray) -> np.ndarray:
    d = kh.shape[1]
    kf = kh.astype(float)
    norm = np.linalg.norm(kf, axis=1)
    if d == 2:
        p = np.stack([-kf[:, 1], kf[:, 0]], axis=1) / norm[:, None]
        return p[:, None, :]
    axis = np.argmin(np.abs(kh), axis=1)
    e = np.eye(3)[axis]
    p1 = np.cross(kf, e)
    p1 /= np.linalg.norm(p1, axis=1)[:, None]
    p2 = np.cross(kf, p1) / norm[:, None]
    return np.stack([p1, p2], axis=1)


def fourier_model(dim: int, max_wavenumber: int, viscosity: float = 1.0) -> StokesModel:
    return StokesModel(dim, FOURIER, max_wavenumber, viscosity)


def diagonal_model(dim: int, n_modes: int, viscosity: float = 1.0) -> StokesModel:
    return StokesModel(dim, DIAGONAL, n_modes, viscosity)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable field on a :class:`StokesModel`."""

    model: StokesModel
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.coeffs.shape != self.model.storage_shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match model {self.model.storage_shape}"
            )
        self.coeffs.setflags(write=False)

    def _same(self, other: SpectralField) -> None:
        if other.model != self.model:
            raise ValueError("fields live on different models")

    def __add__(self, other: SpectralField) -> SpectralField:
        self._same(other)
        return SpectralField(self.model, self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        self._same(other)
        return SpectralField(self.model, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> SpectralField:
        return SpectralField(self.model, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> SpectralField:
        return SpectralField(self.model, -self.coeffs)

    def l2_norm(self) -> float:
        return sobolev_norm(self, 0.0)


@dataclass(frozen=True)
class NoiseOperator:
    """Noise covariance operator ``Phi = A^(-q/2)``; ``q = 0`` is cylindrical noise."""

    q_exponent: float = 0.0
    amplitude: float = 1.0

    def multipliers(self, model: StokesModel) -> np.ndarray:
        return self.amplitude * model.eigenvalues ** (-0.5 * self.q_exponent)


def zero_field(model: StokesModel) -> SpectralField:
    dtype = complex if model.is_fourier else float
    return SpectralField(model, np.zeros(model.storage_shape, dtype=dtype))


def _norm_const(d: int) -> float:
    return math.sqrt(2.0) * (2.0 * math.pi) ** (d / 2)


def synthesize(model: StokesModel, modal: np.ndarray) -> np.ndarray:
    """Coefficient storage for real modal vectors of shape ``(..., n_modes)``."""
    modal = np.asarray(modal, dtype=float)
    if modal.shape[-1] != model.n_modes:
        raise ValueError(f"expected {model.n_modes} modal coefficients, got {modal.shape[-1]}")
    if not model.is_fourier:
        return modal.copy()
    d = model.dim
    batch = modal.shape[:-1]
    kh, pos, neg, pol = model._halfspace
    m = modal.reshape(batch + (kh.shape[0], d - 1, 2))
    amp = (m[..., 0] - 1j * m[..., 1]) / _norm_const(d)
    vec = np.einsum("...ha,had->...dh", amp, pol)
    out = np.zeros(batch + (d, model.n**d), dtype=complex)
    out[..., pos] = vec
    out[..., neg] = vec.conj()
    return out.reshape(batch + model.storage_shape)


def analyze(model: StokesModel, coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`synthesize` on divergence-free, real fields."""
    if not model.is_fourier:
        return np.asarray(coeffs, dtype=float).copy()
    d = model.dim
    batch = coeffs.shape[: coeffs.ndim - d - 1]
    kh, pos, _, pol = model._halfspace
    flat = coeffs.reshape(batch + (d, model.n**d))[..., pos]
    proj = np.einsum("...dh,had->...ha", flat, pol) * _norm_const(d)
    out = np.stack([proj.real, -proj.imag], axis=-1)
    return out.reshape(batch + (model.n_modes,))


def from_modal(model: StokesModel, modal) -> SpectralField:
    return SpectralField(model, synthesize(model, modal))


def modal_coefficients(field: SpectralField) -> np.ndarray:
    return analyze(field.model, field.coeffs)


def random_field(
    model: StokesModel, rng: np.random.Generator, decay: float = 1.0, scale: float = 1.0
) -> SpectralField:
    """Gaussian random field with modal standard deviation ``scale * lambda^(-decay/2)``."""
    modal = rng.standard_normal(model.n_modes) * scale * model.eigenvalues ** (-0.5 * decay)
    return from_modal(model, modal)


def _require_fourier(model: StokesModel, what: str) -> None:
    if not model.is_fourier:
        raise ValueError(f"{what} needs the fourier_periodic backend")


def leray_project(field: SpectralField | np.ndarray, model: StokesModel | None = None) -> SpectralField:
    """Remove the gradient part: ``u(k) <- u(k) - k (k.u(k)) / |k|^2``; zero mode dropped.

    Accepts a :class:`SpectralField` or a raw coefficient array with ``model``.
    Modes outside the truncation ball are discarded as well.
    """
    if isinstance(field, SpectralField):
        model, coeffs = field.model, field.coeffs
    else:
        coeffs = np.asarray(field)
    _require_fourier(model, "leray_project")
    return SpectralField(model, _project(model, coeffs))


def _project(model: StokesModel, coeffs: np.ndarray) -> np.ndarray:
    k = model.wavenumbers
    ksq = np.where(model.ksq > 0, model.ksq, 1)
    axis = -model.dim - 1
    kdotu = (k * coeffs).sum(axis=axis, keepdims=True)
    # modes already divergence-free up to round-off are left untouched, which
    # makes the projection exactly idempotent
    size = np.sqrt(ksq * (np.abs(coeffs) ** 2).sum(axis=axis, keepdims=True))
    kdotu = np.where(np.abs(kdotu) <= _SNAP * size, 0.0, kdotu)
    out = coeffs - k * kdotu / ksq
    return np.where(model.mask, out, 0.0)


def apply_semigroup(t: float, field: SpectralField) -> SpectralField:
    """``S(t) = exp(-nu t A)`` applied mode by mode."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    model = field.model
    factor = np.exp(-model.viscosity * t * model.storage_eigenvalues)
    return SpectralField(model, field.coeffs * factor)


def fractional_power(beta: float, field: SpectralField) -> SpectralField:
    model = field.model
    lam = model.storage_eigenvalues
    if model.is_fourier:
        factor = np.where(model.ksq > 0, np.where(lam > 0, lam, 1.0) ** beta, 0.0)
    else:
        factor = lam**beta
    return SpectralField(model, field.coeffs * factor)


def dealias_size(model: StokesModel) -> int:
    """Collocation points per axis removing all quadratic aliasing (``> 3K``)."""
    return scipy.fft.next_fast_len(3 * model.size + 1)


def lp_grid_size(model: StokesModel, p: float) -> int:
    """Grid size that integrates ``|u|^p`` exactly when ``p`` is an even integer."""
    return scipy.fft.next_fast_len(max(3 * model.size + 1, int(math.ceil(p)) * model.size + 1))


def _embed_index(model: StokesModel, n_grid: int) -> np.ndarray:
    axis = np.fft.fftfreq(model.n, 1.0 / model.n).round().astype(int)
    return axis % n_grid


def _pad(model: StokesModel, coeffs: np.ndarray, n_grid: int) -> np.ndarray:
    d = model.dim
    idx = _embed_index(model, n_grid)
    out = np.zeros(coeffs.shape[:-d] + (n_grid,) * d, dtype=complex)
    out[(Ellipsis,) + np.ix_(*([idx] * d))] = coeffs
    return out


def _crop(model: StokesModel, full: np.ndarray) -> np.ndarray:
    d = model.dim
    idx = _embed_index(model, full.shape[-1])
    return full[(Ellipsis,) + np.ix_(*([idx] * d))]


def to_physical(field: SpectralField, n_grid: int | None = None) -> np.ndarray:
    """Velocity on the uniform ``n_grid^d`` collocation grid, shape ``(d, n_grid, ...)``."""
    return _physical(field.model, field.coeffs, n_grid)


def _physical(model: StokesModel, coeffs: np.ndarray, n_grid: int | None = None) -> np.ndarray:
    _require_fourier(model, "physical transform")
    n_grid = n_grid or dealias_size(model)
    d = model.dim
    axes = tuple(range(-d, 0))
    full = _pad(model, coeffs, n_grid)
    return scipy.fft.ifftn(full, axes=axes, norm="forward").real


def from_physical(model: StokesModel, values: np.ndarray) -> SpectralField:
    """Truncate a physical-space vector field to the model (no projection)."""
    _require_fourier(model, "physical transform")
    d = model.dim
    full = scipy.fft.fftn(values, axes=tuple(range(-d, 0)), norm="forward")
    return SpectralField(model, np.where(model.mask, _crop(model, full), 0.0))


def _bilinear_coeffs(model: StokesModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = model.dim
    n_grid = dealias_size(model)
    axes = tuple(range(-d, 0))
    ug = _physical(model, u, n_grid)
    vg = _physical(model, v, n_grid)
    space = (slice(None),) * d
    tensor = ug[(Ellipsis, slice(None), None) + space] * vg[(Ellipsis, None, slice(None)) + space]
    that = _crop(model, scipy.fft.fftn(tensor, axes=axes, norm="forward"))
    k = model.wavenumbers
    div = 1j * (k[:, None] * that).sum(axis=-d - 2)
    return _project(model, -div)


def bilinear(u: SpectralField, v: SpectralField) -> SpectralField:
    """``B(u, v) = -P div(u (x) v) = -P (u . grad) v``, pseudo-spectral with exact quadratic dealiasing."""
    _require_fourier(u.model, "bilinear")
    if u.model != v.model:
        raise ValueError("bilinear needs both fields on the same model")
    return SpectralField(u.model, _bilinear_coeffs(u.model, u.coeffs, v.coeffs))


def inner(u: SpectralField, v: SpectralField) -> float:
    """L2 inner product."""
    if u.model != v.model:
        raise ValueError("fields live on different models")
    if u.model.is_fourier:
        return float((2 * np.pi) ** u.model.dim * np.real(np.vdot(v.coeffs, u.coeffs)))
    return float(np.dot(u.coeffs, v.coeffs))


def lp_norm(field: SpectralField, p: float) -> float:
    """L^p norm by uniform collocation quadrature on the torus."""
    if p < 2:
        raise ValueError("lp_norm supports p >= 2 only")
    return float(_lp_norms(field.model, field.coeffs[None], p)[0])


def _lp_norms(model: StokesModel, coeffs: np.ndarray, p: float) -> np.ndarray:
    """L^p norms of a batch of coefficient arrays ``(m, d, n, ...)``."""
    _require_fourier(model, "lp_norm")
    d = model.dim
    n_grid = lp_grid_size(model, p)
    weight = (2 * np.pi / n_grid) ** d
    out = np.empty(coeffs.shape[0])
    for i, c in enumerate(coeffs):
        mag2 = (_physical(model, c, n_grid) ** 2).sum(axis=0)
        out[i] = (weight * (mag2 ** (p / 2)).sum()) ** (1.0 / p)
    return out


def sobolev_norm(field: SpectralField, s: float) -> float:
    """``(sum_j lambda_j^s |c_j|^2)^(1/2)``; ``s = 0`` is the L2 norm."""
    return float(_sobolev_sq(field.model, field.coeffs, s) ** 0.5)


def _sobolev_sq(model: StokesModel, coeffs: np.ndarray, s: float) -> np.ndarray:
    d = model.dim
    if model.is_fourier:
        lam = np.where(model.mask, model.ksq, 1).astype(float)
        weight = np.where(model.mask, lam**s, 0.0)
        axes = tuple(range(-d - 1, 0))
        return (2 * np.pi) ** d * (weight * np.abs(coeffs) ** 2).sum(axis=axes)
    return (model.eigenvalues**s * coeffs**2).sum(axis=-1)


def divergence_residual(field: SpectralField) -> float:
    """``max |k.u(k)| / max(|k| |u(k)|)``; zero for exactly divergence-free fields."""
    model = field.model
    _require_fourier(model, "divergence_residual")
    k = model.wavenumbers
    kdotu = np.abs((k * field.coeffs).sum(axis=0))
    scale = (np.sqrt(model.ksq) * np.sqrt((np.abs(field.coeffs) ** 2).sum(axis=0))).max()
    return float(kdotu.max() / scale) if scale > 0 else 0.0


def smoothing_constant(
    model: StokesModel, alpha: float, times: np.ndarray, fields: list[SpectralField]
) -> float:
    """Empirical ``sup t^alpha ||A^alpha S(t) u||_2 / ||u||_2`` over ``times`` and ``fields``."""
    best = 0.0
    for u in fields:
        base = u.l2_norm()
        for t in times:
            val = t**alpha * fractional_power(alpha, apply_semigroup(t, u)).l2_norm() / base
            best = max(best, val)
    return best


def lr_lp_constant(
    model: StokesModel, r: float, p: float, times: np.ndarray, fields: list[SpectralField]
) -> float:
    """Empirical ``sup t^((d/2)(1/r - 1/p)) ||S(t) u||_p / ||u||_r``."""
    expo = 0.5 * model.dim * (1.0 / r - 1.0 / p)
    best = 0.0
    for u in fields:
        base = lp_norm(u, r)
        for t in times:
            best = max(best, t**expo * lp_norm(apply_semigroup(t, u), p) / base)
    return best


def _snapshot_header(model: StokesModel) -> dict:
    header = {
        "backend": model.backend,
        "d": model.dim,
        "viscosity": model.viscosity,
        "dtype": "<f8",
    }
    if model.is_fourier:
        header["K"] = model.size
        header["n_wavevectors"] = int(model.halfspace_wavevectors.shape[0])
        header["layout"] = (
            "half-space wavevectors sorted by (|k|^2, k lexicographic); "
            "per wavevector d components of u_hat(k) as (real, imag)"
        )
    else:
        header["J"] = model.size
        header["layout"] = "real coefficient per mode j = 1..J"
    return header


def write_snapshot(field: SpectralField, path: str | Path) -> Path:
    """JSON header line, newline, then the little-endian float64 coefficient block."""
    model = field.model
    if model.is_fourier:
        _, pos, _, _ = model._halfspace
        flat = field.coeffs.reshape(model.dim, -1)[:, pos].T
        block = np.stack([flat.real, flat.imag], axis=-1)
    else:
        block = field.coeffs
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(json.dumps(_snapshot_header(model)).encode() + b"\n")
        fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return path


def read_snapshot(path: str | Path) -> SpectralField:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    header = json.loads(head)
    data = np.frombuffer(body, dtype="<f8")
    if header["backend"] == FOURIER:
        model = fourier_model(header["d"], header["K"], header["viscosity"])
        _, pos, neg, _ = model._halfspace
        block = data.reshape(-1, model.dim, 2)
        vec = (block[..., 0] + 1j * block[..., 1]).T
        coeffs = np.zeros((model.dim, model.n**model.dim), dtype=complex)
        coeffs[:, pos] = vec
        coeffs[:, neg] = vec.conj()
        return SpectralField(model, coeffs.reshape(model.storage_shape))
    model = diagonal_model(header["d"], header["J"], header["viscosity"])
    return SpectralField(model, data.copy())
