"""Symmetric positive definite matrix square root through the power series
of sqrt(1 - x).

The input is normalised by its Frobenius norm so the spectrum lands in
(0, 1], where the series

    sqrt(G) = I + sum_j c_j (I - G)^j,   c_j = -(1*3*...*(2j-3)) / (2^j j!)

converges; the result is rescaled by the square root of the norm.  The
empty product makes c_1 = -1/2.  Convergence is geometric with rate
1 - lambda_min(G / ||G||_F), so badly conditioned inputs need many terms:
the default budget of 5000 covers condition numbers into the hundreds for
small dimensions, and running out of budget raises with the residual
instead of returning a silently inaccurate root.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SpdError", "check_spd", "sqrt_coefficient", "spd_sqrt_series",
           "random_spd"]


class SpdError(ValueError):
    """Input is not symmetric positive definite."""


def check_spd(mat, sym_tol: float = 1e-12) -> np.ndarray:
    """Validate symmetry (to ``sym_tol``) and positive definiteness.

    Definiteness is established by attempting a Cholesky factorisation of
    the symmetrised matrix, which succeeds exactly for positive definite
    inputs.  Returns the symmetrised array.
    """
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SpdError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SpdError("matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > sym_tol * scale:
        raise SpdError("matrix is not symmetric to the required tolerance")
    sym = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise SpdError("matrix is not positive definite "
                       "(Cholesky factorisation failed)") from None
    return sym


def sqrt_coefficient(j: int) -> float:
    """j-th coefficient of the Maclaurin series of sqrt(1 - x), j >= 1."""
    if j < 1:
        raise ValueError("coefficient index must be >= 1")
    c = -0.5
    for m in range(1, j):
        c *= (2 * m - 1) / (2.0 * (m + 1))
    return c


def spd_sqrt_series(gamma_mat, n_terms: int = 5000, tol: float = 1e-14) -> np.ndarray:
    """Series square root: returns symmetric positive definite r with r @ r
    close to the input.

    The iteration stops once the Frobenius norm of the added term drops
    below ``tol`` (on the normalised matrix); exhausting ``n_terms`` first
    raises :class:`SpdError` with the residual achieved, which happens when
    the normalised spectrum touches zero.
    """
    g = check_spd(gamma_mat)
    d = g.shape[0]
    nrm = float(np.linalg.norm(g))
    g_hat = g / nrm
    eye = np.eye(d)
    m = eye - g_hat

    q = eye.copy()
    power = eye.copy()
    c = 1.0
    converged = False
    for j in range(1, n_terms + 1):
        if j == 1:
            c = -0.5
        else:
            c *= (2 * (j - 1) - 1) / (2.0 * j)
        power = power @ m
        term = c * power
        q += term
        if float(np.linalg.norm(term)) < tol:
            converged = True
            break
    if not converged:
        resid = float(np.linalg.norm(q @ q - g_hat))
        raise SpdError(
            f"series did not converge within {n_terms} terms "
            f"(normalised residual {resid:.3e}); the spectrum is too close "
            "to zero for this budget"
        )
    r = q * np.sqrt(nrm)
    r = 0.5 * (r + r.T)
    return check_spd(r)


def random_spd(rng, d: int, cond: float, scale: float = 1.0) -> np.ndarray:
    """Random SPD matrix with the prescribed condition number.

    Eigenvalues are log-spaced between scale/cond and scale and rotated by
    a Haar-ish orthogonal matrix drawn from ``rng``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if cond < 1.0:
        raise ValueError("cond must be >= 1")
    a = rng.standard_normal((d, d))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    eigs = np.logspace(np.log10(scale / cond), np.log10(scale), d)
    m = (q * eigs) @ q.T
    return 0.5 * (m + m.T)
