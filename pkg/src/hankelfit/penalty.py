"""Quadratic-penalty subproblems over Hankel rank constraints.

The constrained program keeps some rank constraints as a hard feasible set
and moves the rest into a quadratic penalty on their rank-set distances.
Three splittings are supported:

  I   : per-channel constraints stay hard, the coupled one is penalized;
  II  : the coupled constraint stays hard, per-channel ones are penalized;
  III : everything is penalized, the feasible set is the whole space.

The penalty objective decomposes as a smooth term minus a convex term
(Moreau envelope of the rank-set indicator), which yields cheap
"gradient minus subgradient" steps.  The subproblem solver vnpg_major is a
nonmonotone proximal-gradient-type method whose prox step is replaced by a
pseudo-projection onto the hard set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, LineSearchError
from .hankel import RankSpec, hankel_adjoint, hankel_map, rank_project
from .projection import (
    DEFAULT_PROJECTION_OPTIONS,
    ProjectionOptions,
    StructureSetting,
    pseudo_project,
    pseudo_project_channels,
)

# A point counts as inside a rank set when the Frobenius distance is below
# FEAS_TOL * (1 + ||A(y)||_F): pseudo-projections are themselves only exact
# to roundoff, so a hard zero would be unattainable.
FEAS_TOL = 1e-8


@dataclass(frozen=True)
class ConstraintTerm:
    """One penalized map A_i(y) with its rank bound (the set C_i)."""

    kind: str  # "channel" | "coupled"
    channel: int | None
    window: int
    bound: int


@dataclass(frozen=True)
class PenaltyVariant:
    """One of the three hard/penalized splittings of the constraint system."""

    tag: str  # "I" | "II" | "III"
    spec: RankSpec

    def __post_init__(self):
        if self.tag not in ("I", "II", "III"):
            raise ValueError(f"unknown variant tag {self.tag!r}")

    @property
    def k(self) -> int:
        """Number of penalized constraints."""
        return {"I": 1, "II": self.spec.N, "III": self.spec.N + 1}[self.tag]

    @property
    def omega(self) -> str:
        """The hard feasible set: per-channel sets, the coupled set, or all
        of R^{Nn}."""
        return {"I": "per_channel", "II": "coupled", "III": "free"}[self.tag]

    @property
    def terms(self) -> tuple:
        spec = self.spec
        channel_terms = tuple(
            ConstraintTerm("channel", i, r_i, r_i)
            for i, r_i in enumerate(spec.per_channel_ranks)
        )
        coupled_term = ConstraintTerm("coupled", None, spec.coupled_rank, spec.coupled_rank)
        if self.tag == "I":
            return (coupled_term,)
        if self.tag == "II":
            return channel_terms
        return channel_terms + (coupled_term,)


def _term_matrix(term: ConstraintTerm, y: np.ndarray, spec: RankSpec) -> np.ndarray:
    n = spec.n
    if term.kind == "channel":
        c = term.channel
        return hankel_map(y[c * n : (c + 1) * n], term.window)
    blocks = [
        hankel_map(y[c * n : (c + 1) * n], term.window) for c in range(spec.N)
    ]
    return np.hstack(blocks)


def _term_adjoint(term: ConstraintTerm, M: np.ndarray, spec: RankSpec) -> np.ndarray:
    n = spec.n
    out = np.zeros(spec.N * n)
    if term.kind == "channel":
        c = term.channel
        out[c * n : (c + 1) * n] = hankel_adjoint(M)
        return out
    q1 = n - term.window
    for c in range(spec.N):
        out[c * n : (c + 1) * n] = hankel_adjoint(M[:, c * q1 : (c + 1) * q1])
    return out


@dataclass
class PenaltyObjective:
    """F_lambda = loss + sum_i dist^2(A_i(y), C_i)/(2 lambda) + indicator(Omega).

    `loss` provides value(y) and grad(y); lam is the penalty parameter.
    """

    lam: float
    variant: PenaltyVariant
    loss: object

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("penalty parameter must be positive")
        # Diagonal of sum_i A_i* A_i: each Hankel map scales sample k by its
        # anti-diagonal multiplicity, so the composite is a pointwise weight.
        counts = np.zeros(self.spec.N * self.spec.n)
        for term in self.variant.terms:
            counts += _counts_vector(term, self.spec)
        self._counts_total = counts

    @property
    def spec(self) -> RankSpec:
        return self.variant.spec


def _counts_vector(term: ConstraintTerm, spec: RankSpec) -> np.ndarray:
    n = spec.n
    p = term.window + 1
    q1 = n - term.window
    k = np.arange(n)
    per_sample = np.minimum.reduce([k + 1, np.full(n, p), np.full(n, q1), n - k])
    out = np.zeros(spec.N * n)
    if term.kind == "channel":
        c = term.channel
        out[c * n : (c + 1) * n] = per_sample
    else:
        out[:] = np.tile(per_sample, spec.N)
    return out


def _omega_distances(y: np.ndarray, obj: PenaltyObjective):
    """(distance, scale) pairs for every hard constraint at y."""
    spec = obj.spec
    out = []
    if obj.variant.omega == "per_channel":
        for i, r_i in enumerate(spec.per_channel_ranks):
            M = hankel_map(y[i * spec.n : (i + 1) * spec.n], r_i)
            s = np.linalg.svd(M, compute_uv=False)
            out.append((float(np.sqrt(np.sum(s[r_i:] ** 2))), float(np.sqrt(np.sum(s**2)))))
    elif obj.variant.omega == "coupled":
        blocks = [
            hankel_map(y[c * spec.n : (c + 1) * spec.n], spec.coupled_rank)
            for c in range(spec.N)
        ]
        s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
        out.append(
            (float(np.sqrt(np.sum(s[spec.coupled_rank :] ** 2))), float(np.sqrt(np.sum(s**2))))
        )
    return out


def in_omega(y, obj: PenaltyObjective) -> bool:
    """Feasibility for the hard set, within the package tolerance."""
    y = np.asarray(y, dtype=float)
    return all(
        dist <= FEAS_TOL * (1.0 + scale) for dist, scale in _omega_distances(y, obj)
    )


def penalty_value(y, obj: PenaltyObjective) -> float:
    """F_lambda(y); +inf outside the hard feasible set."""
    y = np.asarray(y, dtype=float)
    if not in_omega(y, obj):
        return np.inf
    total = float(obj.loss.value(y))
    for term in obj.variant.terms:
        s = np.linalg.svd(_term_matrix(term, y, obj.spec), compute_uv=False)
        total += float(np.sum(s[term.bound :] ** 2)) / (2.0 * obj.lam)
    return total


def xi_subgradient(y, obj: PenaltyObjective) -> np.ndarray:
    """Subgradient of the convex part: sum_i A_i*(P_{C_i}(A_i y)) / lambda.

    Deterministic given the SVD backend; with repeated singular values at a
    truncation boundary any member of the projection set is acceptable.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for term in obj.variant.terms:
        M = _term_matrix(term, y, obj.spec)
        out += _term_adjoint(term, rank_project(M, term.bound), obj.spec)
    return out / obj.lam


def smooth_part_grad(y, obj: PenaltyObjective) -> np.ndarray:
    """Gradient of the smooth part: grad loss + sum_i A_i*(A_i y) / lambda."""
    y = np.asarray(y, dtype=float)
    out = np.asarray(obj.loss.grad(y), dtype=float).copy()
    for term in obj.variant.terms:
        M = _term_matrix(term, y, obj.spec)
        out += _term_adjoint(term, M, obj.spec) / obj.lam
    return out


def _fast_direction(y: np.ndarray, obj: PenaltyObjective):
    """(grad h - xi, grad h) without forming adjoint matrices.

    grad h - xi = grad f + sum_i A_i*(A_i y - P_{C_i}(A_i y)) / lambda, and
    with rank bound p-1 the residual A_i y - P(A_i y) is the rank-one tail
    u0 (u0^T A_i y), whose adjoint is a convolution per channel block.
    """
    spec = obj.spec
    n = spec.n
    gf = np.asarray(obj.loss.grad(y), dtype=float)
    gh = gf + (obj._counts_total * y) / obj.lam
    resid = np.zeros_like(y)
    for term in obj.variant.terms:
        if term.bound != term.window:  # pragma: no cover - not used by variants
            resid += _term_adjoint(
                term,
                _term_matrix(term, y, spec)
                - rank_project(_term_matrix(term, y, spec), term.bound),
                spec,
            )
            continue
        M = _term_matrix(term, y, spec)
        _, U = np.linalg.eigh(M @ M.T)
        u0 = U[:, 0]
        w = u0 @ M
        if term.kind == "channel":
            c = term.channel
            resid[c * n : (c + 1) * n] += np.convolve(u0, w)
        else:
            q1 = n - term.window
            for c in range(spec.N):
                resid[c * n : (c + 1) * n] += np.convolve(
                    u0, w[c * q1 : (c + 1) * q1]
                )
    return gf + resid / obj.lam, gh


def _fast_value(y: np.ndarray, obj: PenaltyObjective) -> float:
    """F_lambda without the hard-set membership test.

    Valid for iterates produced by vnpg_step, which are feasible for the
    hard set by construction of the pseudo-projection.
    """
    total = float(obj.loss.value(y))
    for term in obj.variant.terms:
        s = np.linalg.svd(_term_matrix(term, y, obj.spec), compute_uv=False)
        total += float(np.sum(s[term.bound :] ** 2)) / (2.0 * obj.lam)
    return total


@dataclass(frozen=True)
class VnpgOptions:
    """Controls for the nonmonotone proximal-gradient subproblem solver."""

    l_min: float = 1e-8
    l_max: float = 1e8
    tau: float = 2.0
    c: float = 1e-4
    memory: int = 4
    max_iters: int = 10**8
    eps: float = 1e-5  # the per-stage tolerance epsilon_t
    rel_obj_tol: float = 1e-10
    projection: ProjectionOptions = DEFAULT_PROJECTION_OPTIONS

    def __post_init__(self):
        if not (self.l_max > self.l_min > 0):
            raise ValueError("need l_max > l_min > 0")
        if self.tau <= 1 or self.c <= 0 or self.memory < 0:
            raise ValueError("need tau > 1, c > 0, memory >= 0")


@dataclass
class VnpgTrace:
    """Per-iteration diagnostics of one vnpg_major run."""

    values: list = field(default_factory=list)  # F at each accepted iterate
    window_max: list = field(default_factory=list)  # nonmonotone reference
    accepted_l: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    stop_reason: str = ""
    exhausted_l: bool = False

    def replay_ok(self, c: float) -> bool:
        """Re-check the acceptance inequality at every recorded step."""
        for i, f_new in enumerate(self.values[1:]):
            bound = self.window_max[i] - 0.5 * c * self.step_norms[i] ** 2
            if f_new > bound:
                return False
        return True


@dataclass
class VnpgResult:
    y_final: np.ndarray
    y_extra: np.ndarray  # the iterate one step past y_final
    trace: VnpgTrace
    converged: bool


def vnpg_step(y, L, obj: PenaltyObjective, proj_opts=DEFAULT_PROJECTION_OPTIONS):
    """One trial step: pseudo-project the gradient target back onto the hard
    set, with the current iterate as the improvement reference.

    Returns (candidate, subproblem_converged).
    """
    y = np.asarray(y, dtype=float)
    xi = xi_subgradient(y, obj)
    gh = smooth_part_grad(y, obj)
    point, ok, _ = _prox_target(y, (gh - xi) / L, obj, proj_opts, None)
    return point, ok


def _prox_target(y, scaled_direction, obj, proj_opts, warm):
    """Pseudo-projection of the gradient target onto the hard set.

    `warm` carries kernel vectors from earlier solves at nearby targets;
    the improvement guarantee does not depend on them (pseudo_project falls
    back internally when a hint loses it).  Returns (point, ok, warm).
    """
    target = y - scaled_direction
    spec = obj.spec
    omega = obj.variant.omega
    if omega == "free":
        return target, True, None
    if omega == "per_channel":
        res = pseudo_project_channels(
            target,
            y,
            spec.n,
            spec.per_channel_ranks,
            proj_opts,
            warm_kernels=warm,
            check_reference=False,
        )
        return res.point, res.converged, [part.kernel.R for part in res.parts]
    setting = StructureSetting.coupled(spec.n, spec.N, spec.coupled_rank)
    res = pseudo_project(
        target, y, setting, proj_opts, warm_kernel=warm, check_reference=False
    )
    return res.point, res.converged, res.kernel.R


def vnpg_major(y0, obj: PenaltyObjective, opts: VnpgOptions) -> VnpgResult:
    """Nonmonotone proximal-gradient descent on F_lambda from y0 in Omega.

    Step curvature starts from a spectral (BB) estimate clamped to
    [l_min, l_max] and is inflated by tau until the candidate passes the
    nonmonotone sufficient-decrease test against the last memory+1 values.
    Termination follows the experiment protocol: relative step below
    eps/L, relative objective change below rel_obj_tol, or the inner
    absolute criteria (step and L*step below eps).

    Returns the final iterate, the one-step-ahead iterate (the outer loop's
    stopping rule is stated in terms of it), and the trace.
    """
    y = np.asarray(y0, dtype=float).copy()
    f_y = penalty_value(y, obj)
    if not np.isfinite(f_y):
        raise ValueError("vnpg_major requires a feasible starting point")
    f_start = f_y
    trace = VnpgTrace()
    trace.values.append(f_y)

    window: list = [f_y]
    gh_prev: np.ndarray | None = None
    y_prev: np.ndarray | None = None
    l_bb = 1.0
    warm = None

    for _ in range(opts.max_iters):
        direction, gh = _fast_direction(y, obj)
        if y_prev is not None:
            s = y - y_prev
            dg = gh - gh_prev
            ss = float(s @ s)
            if ss > 0:
                l_bb = min(max(float(s @ dg) / ss, opts.l_min), opts.l_max)
        f_max = max(window)

        L = l_bb
        backtracks = 0
        accepted = None
        while L <= opts.l_max:
            u, sub_ok, warm = _prox_target(
                y, direction / L, obj, opts.projection, warm
            )
            if sub_ok:
                f_u = _fast_value(u, obj)
                step_sq = float(np.sum((u - y) ** 2))
                if f_u <= f_max - 0.5 * opts.c * step_sq:
                    accepted = (u, f_u, np.sqrt(step_sq), L)
                    break
            # Failed pseudo-projections count as rejections: a larger L
            # shrinks the target step and eases the subproblem.
            L *= opts.tau
            backtracks += 1
        if accepted is None:
            trace.exhausted_l = True
            trace.stop_reason = "line_search_failure"
            raise LineSearchError(
                f"no acceptable step with L <= {opts.l_max:.1e} "
                f"(lambda={obj.lam:.3e})"
            )

        u, f_u, step, l_bar = accepted
        trace.values.append(f_u)
        trace.window_max.append(f_max)
        trace.accepted_l.append(l_bar)
        trace.step_norms.append(step)
        trace.backtracks.append(backtracks)

        y_prev, gh_prev = y, gh
        f_prev = f_y
        y, f_y = u, f_u
        window.append(f_y)
        if len(window) > opts.memory + 1:
            window.pop(0)

        rel_step = step / max(float(np.linalg.norm(y)), 1.0)
        rel_obj = abs(f_y - f_prev) / max(abs(f_y), 1.0)
        inner_ok = (
            step <= opts.eps and l_bar * step <= opts.eps and f_prev <= f_start
        )
        if rel_step < opts.eps / l_bar:
            trace.stop_reason = "relative_step"
        elif rel_obj < opts.rel_obj_tol:
            trace.stop_reason = "relative_objective"
        elif inner_ok:
            trace.stop_reason = "inner_tolerance"
        else:
            continue
        return VnpgResult(y_final=y_prev, y_extra=y, trace=trace, converged=True)

    trace.stop_reason = "iteration_cap"
    return VnpgResult(y_final=y, y_extra=y, trace=trace, converged=False)
