"""Small dense eigenvalue solver: Householder Hessenberg reduction + Francis QR."""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DimensionError, NumericError

MAX_ORDER = 64


def eigenvalues(m, max_sweeps: int | None = None) -> np.ndarray:
    """All eigenvalues of a real square matrix, sorted by descending magnitude.

    Complex pairs come from the 2x2 blocks of the real Schur form. Raises
    :class:`NumericError` (with the partially deflated spectrum in
    ``.partial``) if the QR iteration does not converge within ``100 n`` sweeps.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"eigenvalues: expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > MAX_ORDER:
        raise DimensionError(f"eigenvalues: order {n} exceeds {MAX_ORDER}")
    if not np.all(np.isfinite(a)):
        raise NumericError("eigenvalues: non-finite matrix entries")
    if max_sweeps is None:
        max_sweeps = 100 * max(n, 1)
    h = kernels.hessenberg(a)
    wr, wi, ok = kernels.hqr(h, max_sweeps)
    lam = wr + 1j * wi
    if not ok:
        raise NumericError(f"QR iteration did not converge in {max_sweeps} sweeps", partial=lam)
    order = np.argsort(-np.abs(lam), kind="stable")
    return lam[order]


def eigen_magnitudes(m) -> np.ndarray:
    return np.abs(eigenvalues(m))
