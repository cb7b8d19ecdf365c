"""Hankel and block-Hankel linear operators with rank-set geometry.

A window-``s`` Hankel matrix of a length-``n`` signal has shape
``(s+1, n-s)`` with entry ``(i, j) = y(i+j-1)`` (1-based, as usual in the
system identification literature; storage here is 0-based).  The block
operator concatenates the per-channel Hankel matrices horizontally, which
is how a shared linear recurrence across channels shows up as a single
rank bound.  All functions are pure; returned arrays are fresh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# Singular values below max(rows, cols) * sigma_1 * RANK_RTOL count as zero
# when deciding numerical rank.
RANK_RTOL = 1e-12


def _as_vector(y) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionError(f"expected a 1-d signal, got shape {y.shape}")
    return y


@dataclass(frozen=True)
class ChannelStack:
    """Stacked multichannel signal: channel i occupies data[i*n:(i+1)*n]."""

    data: np.ndarray
    n: int
    N: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=float)
        if self.n <= 0 or self.N <= 0:
            raise DimensionError("n and N must be positive")
        if data.ndim != 1 or data.size != self.N * self.n:
            raise DimensionError(
                f"stack of {self.N} channels x {self.n} samples needs length "
                f"{self.N * self.n}, got shape {self.data.shape}"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_channels(cls, channels) -> "ChannelStack":
        channels = [_as_vector(c) for c in channels]
        n = channels[0].size
        if any(c.size != n for c in channels):
            raise DimensionError("all channels must have equal length")
        return cls(np.concatenate(channels), n=n, N=len(channels))

    def channel(self, i: int) -> np.ndarray:
        """Return channel i (0-based) as a view of length n."""
        if not 0 <= i < self.N:
            raise IndexError(f"channel {i} out of range for N={self.N}")
        return self.data[i * self.n : (i + 1) * self.n]

    def channels(self):
        return [self.channel(i) for i in range(self.N)]

    def with_data(self, data) -> "ChannelStack":
        return ChannelStack(data, n=self.n, N=self.N)


@dataclass(frozen=True)
class RankSpec:
    """The constraint system: per-channel rank bounds plus one coupled bound.

    Requires r_i <= r <= floor((n-1)/2) so every Hankel window fits and the
    matrices are wide enough for the bounds to be attainable.
    """

    per_channel_ranks: tuple
    coupled_rank: int
    n: int

    def __post_init__(self):
        object.__setattr__(
            self, "per_channel_ranks", tuple(int(r) for r in self.per_channel_ranks)
        )
        r, n = self.coupled_rank, self.n
        if not self.per_channel_ranks:
            raise DimensionError("need at least one channel rank")
        if any(ri <= 0 for ri in self.per_channel_ranks) or r <= 0:
            raise DimensionError("rank bounds must be positive")
        if any(ri > r for ri in self.per_channel_ranks):
            raise DimensionError("per-channel ranks must not exceed the coupled rank")
        if r > (n - 1) // 2:
            raise DimensionError(f"coupled rank {r} exceeds floor((n-1)/2) for n={n}")

    @property
    def N(self) -> int:
        return len(self.per_channel_ranks)


@dataclass(frozen=True)
class HankelShape:
    """Shape (rows, cols) of a Hankel or block-Hankel matrix."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < self.rows - 1:
            raise DimensionError(
                f"invalid Hankel shape {self.rows}x{self.cols}: need cols >= rows-1"
            )

    @classmethod
    def single(cls, n: int, window: int) -> "HankelShape":
        return cls(rows=window + 1, cols=n - window)

    @classmethod
    def coupled(cls, n: int, N: int, window: int) -> "HankelShape":
        return cls(rows=window + 1, cols=N * (n - window))


def hankel_map(y, window: int) -> np.ndarray:
    """Window-`window` Hankel matrix of y: shape (window+1, n-window)."""
    y = _as_vector(y)
    n = y.size
    if window < 0 or window + 1 > n:
        raise DimensionError(f"window {window} does not fit a length-{n} signal")
    p, q = window + 1, n - window
    # Strided view copied into a fresh array: rows are shifted slices of y.
    out = np.empty((p, q))
    for i in range(p):
        out[i] = y[i : i + q]
    return out


def hankel_adjoint(Y) -> np.ndarray:
    """Adjoint of hankel_map: entry k is the sum of Y over anti-diagonal i+j=k."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise DimensionError("expected a matrix")
    p, q = Y.shape
    n = p + q - 1
    idx = np.arange(p)[:, None] + np.arange(q)[None, :]
    return np.bincount(idx.ravel(), weights=Y.ravel(), minlength=n)


def block_hankel_map(stack: ChannelStack, window: int) -> np.ndarray:
    """Horizontal concatenation of the per-channel Hankel matrices."""
    blocks = [hankel_map(c, window) for c in stack.channels()]
    return np.hstack(blocks)


def block_hankel_adjoint(W, N: int) -> ChannelStack:
    """Adjoint of block_hankel_map; channel i is the adjoint of the ith block."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise DimensionError("expected a matrix")
    p, cols = W.shape
    if N <= 0 or cols % N:
        raise DimensionError(f"{cols} columns do not split into {N} equal blocks")
    q = cols // N
    parts = [hankel_adjoint(W[:, i * q : (i + 1) * q]) for i in range(N)]
    return ChannelStack.from_channels(parts)


def rank_project(Y, k: int) -> np.ndarray:
    """Frobenius-nearest matrix of rank <= k (SVD truncation).

    With repeated singular values at the cut the result is whichever member
    of the optimal set the SVD routine selects; callers must not rely on a
    canonical choice.
    """
    Y = np.asarray(Y, dtype=float)
    if k < 0 or k > min(Y.shape):
        raise DimensionError(f"rank bound {k} invalid for shape {Y.shape}")
    if k == min(Y.shape):
        return Y.copy()
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    return (U[:, :k] * s[:k]) @ Vt[:k]


def rank_distance(Y, k: int) -> float:
    """Frobenius distance from Y to the set of matrices of rank <= k."""
    Y = np.asarray(Y, dtype=float)
    if k < 0 or k > min(Y.shape):
        raise DimensionError(f"rank bound {k} invalid for shape {Y.shape}")
    s = np.linalg.svd(Y, compute_uv=False)
    return float(np.sqrt(np.sum(s[k:] ** 2)))


def numerical_rank(s, dim: int | None = None) -> int:
    """Rank implied by singular values s under the package-wide tolerance.

    `dim` is the larger matrix dimension; defaults to len(s) when the caller
    only has the spectrum.
    """
    s = np.asarray(s, dtype=float)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    scale = (dim if dim is not None else s.size) * s[0] * RANK_RTOL
    return int(np.count_nonzero(s > scale))
