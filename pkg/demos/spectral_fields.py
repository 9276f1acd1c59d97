"""
Divergence-free fields on the torus
===================================

The Fourier backend stores solenoidal velocity fields by their Fourier
coefficients inside a ball of radius K.  Here we build a field, project
an arbitrary one, apply the Stokes semigroup and check the identities of
the convection term.
"""

import numpy as np

from stochns.spectral import (
    apply_semigroup,
    bilinear,
    divergence_residual,
    fourier_model,
    inner,
    leray_project,
    lp_norm,
    random_field,
    sobolev_norm,
)

model = fourier_model(dim=2, max_wavenumber=16)
print("real modes:", model.n_modes, "smallest eigenvalues:", model.eigenvalues[:6])

rng = np.random.default_rng(0)
u = random_field(model, rng, decay=2.0)
print(f"||u||_2 = {u.l2_norm():.4f}  ||u||_4 = {lp_norm(u, 4):.4f}  ||u||_H1 = {sobolev_norm(u, 1):.4f}")

# Projection removes the gradient part and is exactly idempotent.
raw = rng.standard_normal(model.storage_shape) + 1j * rng.standard_normal(model.storage_shape)
p = leray_project(raw, model)
print("divergence after projection:", divergence_residual(p))
print("idempotent:", np.array_equal(leray_project(p).coeffs, p.coeffs))

# The semigroup damps high wavenumbers first.
for t in (0.0, 0.01, 0.1):
    print(f"t={t:<5} ||S(t)u||_H1 = {sobolev_norm(apply_semigroup(t, u), 1):.4f}")

# Convection conserves energy: <B(u, v), v> vanishes.
v = random_field(model, rng, decay=1.0)
print(f"<B(u,v),v> = {inner(bilinear(u, v), v):.2e}")
