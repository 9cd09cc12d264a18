"""Dense matrix helpers and a one-sided Jacobi thin SVD.

Matrices are plain 2-D ``float64`` numpy arrays. The SVD is written out by hand
(rather than delegated to LAPACK) so that the sign and ordering conventions are
fixed and the result is bit-reproducible for identical input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np

JACOBI_TOL = 1e-12
MAX_SWEEPS = 60


class SvdConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, off_norm: float):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(residual off-diagonal norm {off_norm:.3e})"
        )
        self.sweeps = sweeps
        self.off_norm = off_norm


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray      # m x r, orthonormal columns
    sigma: np.ndarray  # r, nonincreasing
    vt: np.ndarray     # r x n, orthonormal rows

    @property
    def r(self) -> int:
        return self.sigma.shape[0]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and coerce ``a`` to a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {a.shape}")
    check_finite(a, name)
    return a


def check_finite(a: np.ndarray, name: str = "array") -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} has non-finite entry {a[idx]!r} at index {idx}")


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    check_finite(a)
    return float(np.sqrt(np.sum(a * a)))


def concat_columns(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row mismatch: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def split_columns(a, left_cols: int) -> tuple[np.ndarray, np.ndarray]:
    a = as_matrix(a)
    if not 1 <= left_cols < a.shape[1]:
        raise ValueError(f"left_cols={left_cols} out of range for {a.shape[1]} columns")
    return a[:, :left_cols].copy(), a[:, left_cols:].copy()


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # n even; n - 1 rounds of n/2 disjoint pairs covering every pair once
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(w: np.ndarray, tol: float, max_sweeps: int):
    """Orthogonalize the columns of ``w`` (m x n, n <= m) by plane rotations.

    Returns the rotated columns and the accumulated orthogonal n x n matrix.
    """
    m, n = w.shape
    npad = n + (n % 2)
    work = np.zeros((m, npad))
    work[:, :n] = w
    v = np.eye(npad)
    if npad < 2:
        return work[:, :n], v[:n, :n]
    rounds = _round_robin(npad)
    # columns below this squared norm are numerically zero and never rotated
    negligible = (1e-18 * np.sqrt(np.sum(w * w))) ** 2
    off = 0.0
    for sweep in range(max_sweeps):
        rotated = False
        off_sq = 0.0
        for p, q in rounds:
            wp = work[:, p]
            wq = work[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            scale = np.sqrt(alpha) * np.sqrt(beta)
            active = (np.abs(gamma) > tol * scale) & (np.minimum(alpha, beta) > negligible)
            off_sq += float(np.sum(gamma[active] ** 2))
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            wp, wq = wp[:, active], wq[:, active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            work[:, p] = c * wp - s * wq
            work[:, q] = s * wp + c * wq
            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        off = np.sqrt(off_sq)
        if not rotated:
            return work[:, :n], v[:n, :n]
    raise SvdConvergenceError(max_sweeps, off)


def _complete_basis(q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``q`` not flagged in ``keep`` by an orthonormal
    completion built from standard basis vectors, in index order."""
    m = q.shape[0]
    out = q.copy()
    basis = [out[:, j] for j in range(out.shape[1]) if keep[j]]
    candidates = iter(range(m))
    for j in np.flatnonzero(~keep):
        for e in candidates:
            vec = np.zeros(m)
            vec[e] = 1.0
            for _ in range(2):
                for b in basis:
                    vec -= (b @ vec) * b
            norm = np.linalg.norm(vec)
            if norm > 0.5:
                vec /= norm
                out[:, j] = vec
                basis.append(vec)
                break
        else:  # pragma: no cover - cannot happen for k <= m
            raise RuntimeError("basis completion exhausted candidates")
    return out


def thin_svd(a, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS) -> SvdFactors:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with r = min(m, n).

    Singular values are sorted nonincreasing (stable for ties). Each column of
    ``u`` has its largest-magnitude entry nonnegative (first such entry on
    ties); the matching row of ``vt`` is flipped with it.
    """
    a = as_matrix(a, "a")
    m, n = a.shape
    transposed = n > m
    work = a.T if transposed else a
    cols, rot = _jacobi_columns(work, tol, max_sweeps)
    sigma = np.sqrt(np.einsum("ij,ij->j", cols, cols))
    smax = sigma.max()
    keep = sigma > np.finfo(np.float64).eps * smax if smax > 0 else np.zeros_like(sigma, bool)
    left = np.zeros_like(cols)
    left[:, keep] = cols[:, keep] / sigma[keep]
    left = _complete_basis(left, keep)

    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    left = left[:, order]
    rot = rot[:, order]
    if transposed:
        u, vt = rot, left.T
    else:
        u, vt = left, rot.T
    u = np.ascontiguousarray(u)
    vt = np.ascontiguousarray(vt)

    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivots, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u *= signs
    vt *= signs[:, None]
    return SvdFactors(u=u, sigma=sigma, vt=vt)


def reconstruct(f: SvdFactors) -> np.ndarray:
    u, sigma, vt = np.asarray(f.u), np.asarray(f.sigma), np.asarray(f.vt)
    if sigma.ndim != 1 or u.ndim != 2 or vt.ndim != 2:
        raise ValueError("malformed factors")
    if u.shape[1] != sigma.shape[0] or vt.shape[0] != sigma.shape[0]:
        raise ValueError(
            f"factor shapes inconsistent: u {u.shape}, sigma {sigma.shape}, vt {vt.shape}"
        )
    return (u * sigma) @ vt


def relative_error(approx, exact) -> float:
    return frobenius_norm(np.asarray(approx) - np.asarray(exact)) / max(frobenius_norm(exact), 1e-30)


def orthonormality_error(q: np.ndarray) -> float:
    """Max-abs deviation of ``q.T @ q`` from the identity."""
    return float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))


# --- plain-text serialization -------------------------------------------------

def format_matrix(a) -> str:
    a = as_matrix(a)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(f"{x:.17g}" for x in row) for row in a]
    return "\n".join(lines) + "\n"


def write_matrix(fh: TextIO, a) -> None:
    fh.write(format_matrix(a))


def read_matrix(fh: TextIO) -> np.ndarray:
    header = fh.readline().split()
    if len(header) != 2:
        raise ValueError(f"bad matrix header: {header!r}")
    rows, cols = int(header[0]), int(header[1])
    data = []
    for i in range(rows):
        vals = fh.readline().split()
        if len(vals) != cols:
            raise ValueError(f"row {i}: expected {cols} values, got {len(vals)}")
        data.append([float(x) for x in vals])
    return as_matrix(np.array(data, dtype=np.float64).reshape(rows, cols))


def parse_matrix(text: str) -> np.ndarray:
    import io

    return read_matrix(io.StringIO(text))
