"""Matrix containers and the sparse product-chain operator.

Dense matrices are plain float64 ``numpy`` arrays (rows are vectors).
Sparse matrices are CSR, since every operation in this package is
row-oriented (operator application, per-row gradients, row sums).
``ProductChain`` represents a probability operator as an ordered list of
sparse factors that are applied right to left, so the full operator is
never materialized.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ValidationError

#: Row sums of a probability operator must match 1 within this tolerance.
ROW_STOCHASTIC_TOL = 1e-9


def as_dense(X, name: str = "matrix") -> np.ndarray:
    """Return ``X`` as a 2-D float64 array, checking that entries are finite."""
    A = np.ascontiguousarray(X, dtype=np.float64)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains non-finite entries")
    return A


def as_csr(A, name: str = "matrix") -> sp.csr_matrix:
    """Return ``A`` as a canonical float64 CSR matrix."""
    M = sp.csr_matrix(A, dtype=np.float64)
    M.sum_duplicates()
    M.sort_indices()
    if not np.all(np.isfinite(M.data)):
        raise ValidationError(f"{name} contains non-finite entries")
    return M


def validate_regularization_weights(p0, n: int | None = None) -> np.ndarray:
    """Check that ``p0`` is a nonnegative vector summing to 1 within 1e-12."""
    w = np.ascontiguousarray(p0, dtype=np.float64)
    if w.ndim != 1:
        raise ValidationError("regularization weights must be a vector")
    if n is not None and w.size != n:
        raise DimensionError(f"regularization weights have length {w.size}, expected {n}")
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("regularization weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError(f"regularization weights sum to {w.sum()!r}, expected 1")
    return w


def uniform_weights(n: int) -> np.ndarray:
    """The default regularization weights, 1/n for every item."""
    return np.full(n, 1.0 / n)


class ProductChain:
    """A linear operator given as a product (or weighted prefix sum) of sparse factors.

    ``factors[0]`` is applied to the input first, so the represented
    operator is ``factors[-1] @ ... @ factors[0]``.  When ``weights`` is
    given, the operator is instead the weighted sum of chain prefixes,
    ``sum_t weights[t] * (factors[t] @ ... @ factors[0])``; this is how
    averaged random-walk operators are stored without expanding matrix
    powers.  Application costs O(d * sum of factor nonzeros).
    """

    def __init__(self, factors, weights=None):
        if not factors:
            raise ValidationError("a product chain needs at least one factor")
        self.factors = [as_csr(f, name=f"factor {k}") for k, f in enumerate(factors)]
        for k in range(1, len(self.factors)):
            need = self.factors[k - 1].shape[0]
            got = self.factors[k].shape[1]
            if got != need:
                raise DimensionError(
                    f"factor {k} has {got} columns, but factor {k - 1} produces {need} rows"
                )
        if weights is None:
            self.weights = None
        else:
            w = np.ascontiguousarray(weights, dtype=np.float64)
            if w.shape != (len(self.factors),):
                raise DimensionError(
                    f"got {w.size} prefix weights for {len(self.factors)} factors"
                )
            if not np.all(np.isfinite(w)):
                raise ValidationError("prefix weights must be finite")
            for k, f in enumerate(self.factors):
                if f.shape[0] != f.shape[1] or f.shape != self.factors[0].shape:
                    raise DimensionError(
                        f"factor {k} must be square of fixed size in a weighted chain"
                    )
            self.weights = w

    @property
    def shape(self) -> tuple[int, int]:
        return (self.factors[-1].shape[0], self.factors[0].shape[1])

    @property
    def nnz(self) -> int:
        return sum(f.nnz for f in self.factors)

    def apply(self, X) -> np.ndarray:
        """Compute ``P @ X`` right to left without materializing the operator."""
        X = as_dense(X)
        if X.shape[0] != self.shape[1]:
            raise DimensionError(
                f"operand has {X.shape[0]} rows, factor 0 expects {self.shape[1]}"
            )
        if self.weights is None:
            out = X
            for f in self.factors:
                out = f @ out
            return out
        cur = X
        acc = np.zeros((self.shape[0], X.shape[1]))
        for w, f in zip(self.weights, self.factors):
            cur = f @ cur
            acc += w * cur
        return acc

    def apply_transpose(self, X) -> np.ndarray:
        """Compute ``P.T @ X`` as the reversed chain of transposed factors."""
        X = as_dense(X)
        if X.shape[0] != self.shape[0]:
            raise DimensionError(
                f"operand has {X.shape[0]} rows, transposed chain expects {self.shape[0]}"
            )
        if self.weights is None:
            out = X
            for f in reversed(self.factors):
                out = f.T @ out
            return out
        # Horner form of sum_t w_t (F_t ... F_0)^T X.
        acc = self.weights[-1] * X
        for t in range(len(self.factors) - 2, -1, -1):
            acc = self.weights[t] * X + self.factors[t + 1].T @ acc
        return self.factors[0].T @ acc

    def validate_stochastic(self, tol: float = ROW_STOCHASTIC_TOL) -> None:
        """Check the chain can serve as a probability operator.

        Eligibility is judged on the effective operator: all factor
        entries must be nonnegative and the operator must map the
        all-ones vector to itself within ``tol``.  Individual factors are
        not required to be row-stochastic on their own.
        """
        for k, f in enumerate(self.factors):
            if f.nnz and f.data.min() < 0:
                raise ValidationError(f"factor {k} has negative entries")
        ones = np.ones((self.shape[1], 1))
        sums = self.apply(ones).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
        if bad.size:
            raise ValidationError(
                f"operator is not row-stochastic: {bad.size} rows deviate, "
                f"first offenders {bad[:5].tolist()}"
            )


def as_chain(P) -> ProductChain:
    """Wrap a sparse/dense matrix as a one-factor chain; pass chains through."""
    if isinstance(P, ProductChain):
        return P
    return ProductChain([as_csr(P)])


def row_normalize(A) -> sp.csr_matrix:
    """Divide each row of a nonnegative sparse matrix by its sum.

    Rows that sum to zero cannot be normalized; for square matrices they
    are replaced by a unit self-loop so the result stays row-stochastic
    (a dangling node redistributes its mass to itself).
    """
    M = as_csr(A)
    if M.nnz and M.data.min() < 0:
        raise ValidationError("row_normalize requires nonnegative entries")
    sums = np.asarray(M.sum(axis=1)).ravel()
    empty = np.flatnonzero(sums == 0)
    if empty.size and M.shape[0] != M.shape[1]:
        raise ValidationError(
            f"cannot add self-loops to empty rows of a rectangular matrix: rows {empty[:5].tolist()}"
        )
    scale = np.ones_like(sums)
    nonempty = sums > 0
    scale[nonempty] = 1.0 / sums[nonempty]
    out = sp.diags(scale) @ M
    if empty.size:
        loops = sp.coo_matrix(
            (np.ones(empty.size), (empty, empty)), shape=M.shape
        )
        out = out + loops
    out = out.tocsr()
    out.sort_indices()
    return out


def rescale_embedding(X, mode: str) -> np.ndarray:
    """Rescale embedding rows.

    ``mode="average-norm-one"`` divides the whole matrix by the mean row
    norm; ``mode="unit-rows"`` normalizes each row to unit length and
    rejects zero rows.
    """
    X = as_dense(X, name="embedding")
    norms = np.linalg.norm(X, axis=1)
    if mode == "average-norm-one":
        mean = norms.mean()
        if mean == 0:
            raise ValidationError("embedding is identically zero")
        return X / mean
    if mode == "unit-rows":
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValidationError(
                f"cannot normalize zero rows to unit length: rows {zero.tolist()}"
            )
        return X / norms[:, None]
    raise ValidationError(f"unknown rescale mode {mode!r}")
