"""Single-ground-set DPP over the quality/feature decomposition.

The kernel is L = diag(q) (Phi^T Phi) diag(q) where Phi has unit-norm
columns (one feature vector per item) and q holds per-item quality scores.
P(y) = det(L_y) / det(L + I), so a subset's log-probability is
logdet(L_y) - logdet(L + I).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ValidationError

QUALITY_FLOOR = 1e-6  # keeps log-likelihoods finite when a target item scores ~0
_UNIT_TOL = 1e-6
_GAIN_TIE_TOL = 1e-12  # greedy gains closer than this count as tied


@dataclass(frozen=True)
class DppKernel:
    """Decomposed DPP kernel over a ground set of N items.

    ``phi``: (D', N) feature matrix, columns renormalized to unit length at
    construction. ``q``: length-N qualities clamped up to QUALITY_FLOOR;
    values above 1 are rejected, matching the decomposition's q <= 1 regime.
    """

    phi: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.float64)
        q = np.array(self.q, dtype=np.float64)
        if phi.ndim != 2 or q.ndim != 1 or phi.shape[1] != q.shape[0]:
            raise ValidationError(
                f"phi must be (D', N) with q of length N, got {phi.shape} and {q.shape}"
            )
        if not (np.isfinite(phi).all() and np.isfinite(q).all()):
            raise DataError("kernel contains non-finite entries")
        norms = np.linalg.norm(phi, axis=0)
        if (norms == 0.0).any():
            raise DataError("zero feature column cannot be normalized")
        if (np.abs(norms - 1.0) > _UNIT_TOL).any():
            phi = phi / norms
        if (q > 1.0 + 1e-9).any():
            raise ValidationError(f"qualities must not exceed 1, max was {q.max()}")
        q = np.clip(q, QUALITY_FLOOR, 1.0)
        phi.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "q", q)

    @property
    def ground_size(self) -> int:
        return self.q.shape[0]

    def matrix(self) -> np.ndarray:
        """The induced (N, N) kernel L = diag(q) Phi^T Phi diag(q)."""
        scaled = self.phi * self.q
        return scaled.T @ scaled


def _logdet_psd(mat: np.ndarray) -> float | None:
    """logdet via Cholesky; None when the matrix is numerically singular."""
    if mat.shape[0] == 0:
        return 0.0
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None
    return 2.0 * float(np.log(np.diag(chol)).sum())


def normalizer_logdet(kernel: DppKernel) -> float:
    """logdet(L + I), the log partition function of the DPP."""
    mat = kernel.matrix()
    mat[np.diag_indices_from(mat)] += 1.0
    value = _logdet_psd(mat)
    if value is None:
        raise NumericError("factorization of L + I failed; kernel is corrupted")
    return value


def log_prob(kernel: DppKernel, subset) -> float:
    """Exact log P(y) = logdet(L_y) - logdet(L + I).

    The empty subset contributes logdet 1 = 0. A numerically singular L_y is
    a legitimately zero-probability subset and yields -inf rather than an
    exception.
    """
    idx = _check_subset(kernel, subset)
    mat = kernel.matrix()
    sub_logdet = _logdet_psd(mat[np.ix_(idx, idx)])
    if sub_logdet is None:
        return float("-inf")
    return sub_logdet - normalizer_logdet(kernel)


def logprob_grad_L(kernel: DppKernel, subset) -> np.ndarray:
    """Gradient of log P(y) with respect to the kernel matrix L.

    Equals (L_y)^{-1} scattered into the subset's rows/columns, minus
    (L + I)^{-1}; symmetric by construction.
    """
    idx = _check_subset(kernel, subset)
    mat = kernel.matrix()
    n = kernel.ground_size
    grad = np.zeros((n, n))
    if idx.size:
        sub = mat[np.ix_(idx, idx)]
        try:
            sub_inv = np.linalg.inv(sub)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"L_y is singular for subset {sorted(idx)}") from exc
        if not np.isfinite(sub_inv).all():
            raise NumericError(f"L_y is numerically singular for subset {sorted(idx)}")
        grad[np.ix_(idx, idx)] = sub_inv
    mat[np.diag_indices_from(mat)] += 1.0
    grad -= np.linalg.inv(mat)
    return 0.5 * (grad + grad.T)


def kernel_grads_from_L(kernel: DppKernel, grad_L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chain a symmetric dLoss/dL back to (dLoss/dphi, dLoss/dq).

    Uses L = A^T A with A = phi diag(q): dLoss/dA = 2 A G, then splits A
    into its phi and q factors. The caller owns any gradient through the
    column normalization of phi.
    """
    scaled = kernel.phi * kernel.q
    grad_a = 2.0 * scaled @ grad_L
    grad_phi = grad_a * kernel.q
    grad_q = np.einsum("dn,dn->n", kernel.phi, grad_a)
    return grad_phi, grad_q


def greedy_map(kernel, max_size: int | None = None, mode: str = "chol", fill: bool = False):
    """Greedy MAP: repeatedly add the item with the largest logdet gain.

    ``kernel`` is a DppKernel or any symmetric PSD matrix. Items are added
    while the best gain is non-negative (a strictly negative gain means
    every remaining item shrinks det(L_y)); note that a decomposed kernel
    with all q < 1 therefore selects nothing, which matches the exhaustive
    optimum. Gains within _GAIN_TIE_TOL count as tied and ties break on the
    smallest index, which keeps the two evaluation strategies' float noise
    from flipping the pick. ``mode`` selects incremental Cholesky updates
    ("chol") or from-scratch recomputation ("recompute"); both give
    identical selections.

    With ``fill=True`` the negative-gain stop is disabled: selection keeps
    taking the least-redundant item until ``max_size`` (or until every
    remaining item would make the subset singular). Budgeted diversity
    pickers want this mode; MAP inference does not.

    Returns the selected indices in selection order.
    """
    if isinstance(kernel, DppKernel):
        mat = kernel.matrix()
    else:
        mat = np.asarray(kernel, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError(f"kernel matrix must be square, got shape {mat.shape}")
        if not np.allclose(mat, mat.T, atol=1e-9):
            raise ValidationError("kernel matrix must be symmetric")
    n = mat.shape[0]
    if max_size is None:
        max_size = n
    if not (0 <= max_size <= n):
        raise ValidationError(f"max_size must lie in [0, {n}], got {max_size}")
    if mode not in ("chol", "recompute"):
        raise ValidationError(f"unknown greedy mode {mode!r}")
    selected: list[int] = []
    if mode == "chol":
        chol = np.zeros((0, 0))
        remaining = list(range(n))
        while len(selected) < max_size and remaining:
            best_gain = -np.inf
            best_item = -1
            best_col = None
            for j in remaining:
                if selected:
                    c = np.linalg.solve(chol, mat[selected, j])
                    residual = mat[j, j] - c @ c
                else:
                    c = np.zeros(0)
                    residual = mat[j, j]
                gain = np.log(residual) if residual > 0.0 else -np.inf
                if gain > best_gain + _GAIN_TIE_TOL:
                    best_gain, best_item, best_col = gain, j, c
            if best_gain == -np.inf or (best_gain < 0.0 and not fill):
                break
            k = len(selected)
            grown = np.zeros((k + 1, k + 1))
            grown[:k, :k] = chol
            grown[k, :k] = best_col
            grown[k, k] = np.sqrt(mat[best_item, best_item] - best_col @ best_col)
            chol = grown
            selected.append(best_item)
            remaining.remove(best_item)
        return selected
    # recompute mode: evaluate each candidate's logdet from scratch
    current = 0.0
    remaining = list(range(n))
    while len(selected) < max_size and remaining:
        best_gain = -np.inf
        best_item = -1
        for j in remaining:
            trial = selected + [j]
            trial_logdet = _logdet_psd(mat[np.ix_(trial, trial)])
            gain = -np.inf if trial_logdet is None else trial_logdet - current
            if gain > best_gain + _GAIN_TIE_TOL:
                best_gain, best_item = gain, j
        if best_gain == -np.inf or (best_gain < 0.0 and not fill):
            break
        selected.append(best_item)
        remaining.remove(best_item)
        current += best_gain
    return selected


def _check_subset(kernel: DppKernel, subset) -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in subset)), dtype=np.intp)
    if idx.size and (idx[0] < 0 or idx[-1] >= kernel.ground_size):
        raise ValidationError(
            f"subset {idx.tolist()} outside ground set of size {kernel.ground_size}"
        )
    return idx
