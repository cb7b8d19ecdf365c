"""Test-signal generation, weighted loss, and the constraint-violation metric.

Clean signals are trajectories of marginally stable linear systems: sums of
undamped sinusoids (conjugate pole pairs on the unit circle) plus an
optional +-1 real pole when the order is odd.  Two channels share a common
pole subset, which is exactly what the coupled rank constraint encodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, GenerationError
from .hankel import ChannelStack, RankSpec, hankel_map, rank_distance

GEN_FEAS_TOL = 1e-8
GEN_RETRY_CAP = 100


def default_weights(n: int) -> np.ndarray:
    """Per-sample weights: 1 on odd positions, 10 on even (1-based)."""
    w = np.ones(n)
    w[1::2] = 10.0
    return w


@dataclass(frozen=True)
class SystemSpec:
    """Experiment geometry: channel orders n1, n2, common order nc."""

    n1: int
    n2: int
    nc: int
    n: int
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n1 < 0 or self.n2 < 0 or self.nc < 0:
            raise DimensionError("orders must be nonnegative")
        if self.n1 + self.nc < 1 or self.n2 + self.nc < 1:
            raise DimensionError("each channel needs order at least 1")
        if self.n1 + self.n2 + self.nc > (self.n - 1) // 2:
            raise DimensionError(
                "total order exceeds floor((n-1)/2); the coupled constraint "
                "would be vacuous or ill-posed"
            )
        if self.sigma < 0:
            raise DimensionError("noise factor must be nonnegative")

    @property
    def m1(self) -> int:
        return self.n1 + self.nc

    @property
    def m2(self) -> int:
        return self.n2 + self.nc

    @property
    def m(self) -> int:
        return self.n1 + self.n2 + self.nc

    def rank_spec(self) -> RankSpec:
        return RankSpec(
            per_channel_ranks=(self.m1, self.m2), coupled_rank=self.m, n=self.n
        )


@dataclass
class WeightedLoss:
    """f(y) = sum_i 0.5 * ||y_i - ybar_i||_W^2 with diagonal per-channel W."""

    ybar: ChannelStack
    weights: np.ndarray  # length n, shared by all channels

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.ybar.n,):
            raise DimensionError("need one weight per sample")
        if np.any(self.weights <= 0):
            raise DimensionError("weights must be strictly positive")
        self._w_stacked = np.tile(self.weights, self.ybar.N)

    def value(self, y) -> float:
        d = np.asarray(y, dtype=float) - self.ybar.data
        return 0.5 * float(d @ (self._w_stacked * d))

    def grad(self, y) -> np.ndarray:
        d = np.asarray(y, dtype=float) - self.ybar.data
        return self._w_stacked * d


def _draw_poles(order: int, rng: np.random.Generator):
    """`order` unit-circle poles: conjugate pair angles plus an optional real
    pole (its sign drawn at random).  Returned as (angles, real_signs)."""
    pairs = order // 2
    angles = rng.uniform(0.0, np.pi, size=pairs)
    reals = []
    if order % 2:
        reals.append(-1.0 if rng.uniform() < 0.5 else 1.0)
    return list(angles), reals


def _mode_matrix(n: int, angles, reals) -> np.ndarray:
    t = np.arange(n)
    cols = []
    for th in angles:
        cols.append(np.cos(th * t))
        cols.append(np.sin(th * t))
    for rho in reals:
        cols.append(rho**t)
    return np.stack(cols, axis=1)


def generate_signals(spec: SystemSpec, rng: np.random.Generator | None = None):
    """Draw two clean channels with nc shared poles.

    Returns (y1, y2, poles) where poles maps "common"/"own1"/"own2" to
    (angles, real signs).  Both per-channel rank constraints and the coupled
    one are verified by SVD before returning; degenerate draws are retried.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    for _ in range(GEN_RETRY_CAP):
        common_angles, common_reals = _draw_poles(spec.nc, rng)
        own1_angles, own1_reals = _draw_poles(spec.n1, rng)
        own2_angles, own2_reals = _draw_poles(spec.n2, rng)
        # A real pole shared by accident merges two modes and silently drops
        # the realized order; flip the sign to keep the pole sets disjoint.
        for own in (own1_reals, own2_reals):
            if own and common_reals and own[0] == common_reals[0]:
                own[0] = -own[0]

        def build(own_angles, own_reals):
            basis = _mode_matrix(
                spec.n, common_angles + own_angles, common_reals + own_reals
            )
            y = basis @ rng.standard_normal(basis.shape[1])
            rms = np.sqrt(np.mean(y**2))
            if rms < 1e-8:
                return None
            return y / rms

        y1 = build(own1_angles, own1_reals)
        y2 = build(own2_angles, own2_reals)
        if y1 is None or y2 is None:
            continue

        ok = (
            rank_distance(hankel_map(y1, spec.m1), spec.m1)
            <= GEN_FEAS_TOL * np.linalg.norm(hankel_map(y1, spec.m1), "fro")
            and rank_distance(hankel_map(y2, spec.m2), spec.m2)
            <= GEN_FEAS_TOL * np.linalg.norm(hankel_map(y2, spec.m2), "fro")
        )
        coupled = np.hstack([hankel_map(y1, spec.m), hankel_map(y2, spec.m)])
        ok = ok and rank_distance(coupled, spec.m) <= GEN_FEAS_TOL * np.linalg.norm(
            coupled, "fro"
        )
        if ok:
            poles = {
                "common": (common_angles, common_reals),
                "own1": (own1_angles, own1_reals),
                "own2": (own2_angles, own2_reals),
            }
            return y1, y2, poles
    raise GenerationError(
        f"no feasible draw in {GEN_RETRY_CAP} attempts for {spec}"
    )


def add_noise(y, sigma: float, weights, seed: int) -> np.ndarray:
    """ybar = y + sigma * W^{-1/2} xi with iid standard normal xi."""
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(y.shape)
    return y + sigma * xi / np.sqrt(weights)


def _vio_component(M: np.ndarray, bound: int) -> float:
    """Frobenius distance to the rank set over the spectral norm; an
    all-zero matrix is feasible for any bound and contributes 0."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(s[bound:] ** 2)) / s[0])


def constraint_violation(stack: ChannelStack, spec: RankSpec):
    """(vio, components): per-channel components then the coupled one."""
    if stack.n != spec.n or stack.N != spec.N:
        raise DimensionError("stack and rank spec disagree on layout")
    comps = [
        _vio_component(hankel_map(stack.channel(i), r_i), r_i)
        for i, r_i in enumerate(spec.per_channel_ranks)
    ]
    coupled = np.hstack(
        [hankel_map(stack.channel(i), spec.coupled_rank) for i in range(spec.N)]
    )
    comps.append(_vio_component(coupled, spec.coupled_rank))
    return max(comps), tuple(comps)


def violation(y1, y2, spec: SystemSpec):
    """Constraint-violation metric of a two-channel solution.

    The max of three normalized rank-set distances: each channel at its own
    window, and the concatenated pair at the coupled window.
    """
    stack = ChannelStack.from_channels([y1, y2])
    if stack.n != spec.n:
        raise DimensionError(f"expected channels of length {spec.n}")
    vio, comps = constraint_violation(stack, spec.rank_spec())
    return vio, comps


@dataclass
class ExperimentInstance:
    """Everything one solver run needs: data, weights, constraints, seeds."""

    system: SystemSpec
    clean: ChannelStack
    ybar: ChannelStack
    loss: WeightedLoss
    rank_spec: RankSpec
    noise_seed: int
    poles: dict = field(repr=False, default_factory=dict)


def make_instance(spec: SystemSpec, noise_seed: int) -> ExperimentInstance:
    """Clean signals from spec.seed; the noise realization from noise_seed.

    Instances sharing a SystemSpec share the clean signals and differ only
    in noise, which is the batch protocol of the packaged experiment.
    """
    y1, y2, poles = generate_signals(spec)
    w = default_weights(spec.n)
    yb1 = add_noise(y1, spec.sigma, w, noise_seed)
    yb2 = add_noise(y2, spec.sigma, w, 2**31 + noise_seed)
    clean = ChannelStack.from_channels([y1, y2])
    ybar = ChannelStack.from_channels([yb1, yb2])
    return ExperimentInstance(
        system=spec,
        clean=clean,
        ybar=ybar,
        loss=WeightedLoss(ybar=ybar, weights=w),
        rank_spec=spec.rank_spec(),
        noise_seed=noise_seed,
        poles=poles,
    )
