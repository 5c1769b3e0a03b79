"""Small dense Hermitian positive-definite kernels.

Every function accepts a single ``(n, n)`` matrix or a stack of shape
``(..., n, n)`` and broadcasts over the leading axes.
"""

import numpy as np
from numba import njit

__all__ = [
    "NotPositiveDefiniteError",
    "hermitize",
    "geometric_mean",
    "inverse_geometric_mean",
    "hermitian_solve",
    "hermitian_inv",
    "psd_floor",
    "inv_logdet",
]


class NotPositiveDefiniteError(ValueError):
    pass


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return ``(a + a^H) / 2``."""
    return 0.5 * (a + np.swapaxes(a, -1, -2).conj())


def _check_square_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != a.shape[-2] or b.shape[-1] != b.shape[-2]:
        raise ValueError("expected square matrices, got {} and {}".format(a.shape, b.shape))
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("dimension mismatch: {} vs {}".format(a.shape[-1], b.shape[-1]))


def _pd_eigh(a: np.ndarray, name: str):
    lamb, u = np.linalg.eigh(hermitize(a))
    if np.any(lamb[..., 0] <= 0):
        raise NotPositiveDefiniteError(
            "{} is not positive definite (min eigenvalue {:.3e})".format(name, lamb[..., 0].min())
        )
    return lamb, u


def _from_eig(lamb: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u * lamb[..., None, :]) @ np.swapaxes(u, -1, -2).conj()


def geometric_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    r"""Geometric mean ``a # b`` of Hermitian positive-definite matrices.

    The result is the unique positive-definite ``X`` solving ``X a^{-1} X = b``,

    .. math::
        a \# b = a^{1/2} (a^{-1/2} b a^{-1/2})^{1/2} a^{1/2}.

    Args:
        a (numpy.ndarray): Hermitian PD matrices of shape ``(..., n, n)``.
        b (numpy.ndarray): Hermitian PD matrices of the same shape.

    Returns:
        numpy.ndarray of shape ``(..., n, n)``, Hermitian to machine precision.

    Raises:
        NotPositiveDefiniteError: if either operand has a non-positive eigenvalue.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _check_square_pair(a, b)
    lamb, u = _pd_eigh(a, "a")
    _pd_eigh(b, "b")
    sqrt_lamb = np.sqrt(lamb)
    a_half = _from_eig(sqrt_lamb, u)
    a_mhalf = _from_eig(1.0 / sqrt_lamb, u)
    mu, w = np.linalg.eigh(hermitize(a_mhalf @ b @ a_mhalf))
    middle = _from_eig(np.sqrt(np.maximum(mu, 0.0)), w)
    return hermitize(a_half @ middle @ a_half)


def inverse_geometric_mean(g: np.ndarray, c: np.ndarray) -> np.ndarray:
    r"""Compute ``g^{-1} # c`` without forming ``g^{-1}``.

    Uses ``g^{-1} \# c = g^{-1/2} (g^{1/2} c g^{1/2})^{1/2} g^{-1/2}``, i.e. the
    PD solution of ``X g X = c``.
    """
    g = np.asarray(g)
    c = np.asarray(c)
    _check_square_pair(g, c)
    lamb, u = _pd_eigh(g, "g")
    sqrt_lamb = np.sqrt(lamb)
    g_half = _from_eig(sqrt_lamb, u)
    g_mhalf = _from_eig(1.0 / sqrt_lamb, u)
    mu, w = np.linalg.eigh(hermitize(g_half @ c @ g_half))
    middle = _from_eig(np.sqrt(np.maximum(mu, 0.0)), w)
    return hermitize(g_mhalf @ middle @ g_mhalf)


def hermitian_solve(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve ``a x = y`` for Hermitian positive-definite ``a``.

    ``y`` is a vector ``(..., n)`` or a matrix of right-hand sides ``(..., n, r)``.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    vector = y.ndim == a.ndim - 1
    try:
        chol = np.linalg.cholesky(hermitize(a))
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("matrix is singular or not positive definite") from e
    diag = np.abs(np.diagonal(chol, axis1=-2, axis2=-1))
    if np.any(diag.min(axis=-1) <= np.finfo(float).eps * diag.max(axis=-1)):
        raise NotPositiveDefiniteError("matrix is singular to working precision")
    rhs = y[..., None] if vector else y
    z = np.linalg.solve(chol, rhs)
    x = np.linalg.solve(np.swapaxes(chol, -1, -2).conj(), z)
    return x[..., 0] if vector else x


def hermitian_inv(a: np.ndarray) -> np.ndarray:
    """Hermitian inverse of a stack of PD matrices."""
    return hermitize(np.linalg.inv(a))


def psd_floor(a: np.ndarray, eps_rel: float = 1e-7) -> np.ndarray:
    """Clamp eigenvalues of Hermitian matrices from below.

    The floor is ``eps_rel * trace(a) / n`` per matrix. When the trace is not
    positive the largest absolute eigenvalue is used as the reference instead.
    Matrices whose eigenvalues are already at or above the floor are returned
    untouched (up to hermitization).

    Args:
        a (numpy.ndarray): Hermitian matrices of shape ``(..., n, n)``.
        eps_rel (float): Relative floor. Default: ``1e-7``.

    Returns:
        numpy.ndarray of the same shape with every eigenvalue ``>= floor``.
    """
    a = hermitize(np.asarray(a))
    n = a.shape[-1]
    lamb, u = np.linalg.eigh(a)
    ref = np.real(np.trace(a, axis1=-2, axis2=-1)) / n
    ref = np.where(ref > 0, ref, np.abs(lamb).max(axis=-1))
    floor = eps_rel * ref
    need = lamb[..., 0] < floor
    if not np.any(need):
        return a
    out = a.copy()
    clamped = np.maximum(lamb[need], floor[need][..., None])
    out[need] = hermitize(_from_eig(clamped, u[need]))
    return out


@njit(cache=True)
def _chol_inv_kernel(r, p, logdet):
    n_mat, n, _ = r.shape
    low = np.zeros((n, n), dtype=np.complex128)
    low_inv = np.zeros((n, n), dtype=np.complex128)
    for b in range(n_mat):
        a = r[b]
        ld = 0.0
        ok = True
        for j in range(n):
            s = a[j, j].real
            for k in range(j):
                s -= low[j, k].real ** 2 + low[j, k].imag ** 2
            if not s > 0.0:
                ok = False
                break
            dj = np.sqrt(s)
            low[j, j] = dj
            ld += 2.0 * np.log(dj)
            for i in range(j + 1, n):
                t = a[i, j]
                for k in range(j):
                    t -= low[i, k] * np.conj(low[j, k])
                low[i, j] = t / dj
        if not ok:
            logdet[b] = np.nan
            continue
        logdet[b] = ld
        for j in range(n):
            low_inv[j, j] = 1.0 / low[j, j]
            for i in range(j + 1, n):
                t = 0j
                for k in range(j, i):
                    t -= low[i, k] * low_inv[k, j]
                low_inv[i, j] = t / low[i, i]
        for i in range(n):
            for j in range(i, n):
                t = 0j
                for k in range(j, n):
                    t += np.conj(low_inv[k, i]) * low_inv[k, j]
                p[b, i, j] = t
                p[b, j, i] = np.conj(t)


def inv_logdet(a: np.ndarray):
    """Cholesky-based inverse and log-determinant of a stack of Hermitian PD matrices.

    Only the lower triangle of each input is read. Matrices that are not
    numerically positive definite get ``logdet = nan`` (their inverse entries
    are then undefined).

    Returns:
        ``(inverse, logdet)`` with shapes ``(..., n, n)`` and ``(...)``.
    """
    a = np.asarray(a, dtype=np.complex128)
    shape = a.shape
    flat = np.ascontiguousarray(a.reshape((-1,) + shape[-2:]))
    p = np.empty_like(flat)
    logdet = np.empty(flat.shape[0])
    _chol_inv_kernel(flat, p, logdet)
    return p.reshape(shape), logdet.reshape(shape[:-2])
