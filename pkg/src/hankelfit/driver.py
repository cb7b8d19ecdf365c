"""End-to-end solvers: the hybrid penalty method and the alternating
pseudo-projection baseline.

The hybrid method runs penalty stages with a decreasing penalty parameter
until it crosses a switch threshold, then refines the iterate by
alternating pseudo-projections between the per-channel constraint set and
the coupled one.  The penalty stages come with a computable error bound:
after the stage at parameter lambda, every penalized constraint is within
sqrt(2 * lambda * f(y_feas)) of its rank set.  That bound is enforced at
runtime, not just logged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConditioningError, HankelFitError
from .hankel import ChannelStack, RankSpec
from .penalty import (
    PenaltyObjective,
    PenaltyVariant,
    VnpgOptions,
    VnpgTrace,
    penalty_value,
    vnpg_major,
)
from .projection import (
    DEFAULT_PROJECTION_OPTIONS,
    ProjectionOptions,
    StructureSetting,
    pseudo_project,
    pseudo_project_channels,
)
from .signals import ExperimentInstance, constraint_violation

ERROR_BOUND_SLACK = 1e-8


@dataclass(frozen=True)
class HybridConfig:
    """Schedules and tolerances of the hybrid run (experiment defaults)."""

    variant_tag: str = "II"
    lambda0: float = 0.1
    lambda_decay: float = 5.0
    lambda_bar: float = 1e-4
    eps0: float = 1e-5
    eps_decay: float = 1.5
    eps_floor: float = 1e-6
    vnpg: VnpgOptions = VnpgOptions()
    projection: ProjectionOptions = DEFAULT_PROJECTION_OPTIONS
    post_tol: float = 1e-10
    post_max_iters: int = 10**5
    max_outer: int = 64  # guard for lambda_bar == 0 (post-processing disabled)

    def __post_init__(self):
        if self.lambda0 <= 0 or self.lambda_decay <= 1:
            raise ValueError("need lambda0 > 0 and lambda_decay > 1")
        if self.lambda_bar < 0:
            raise ValueError("lambda_bar must be nonnegative")
        if self.eps0 <= 0 or self.eps_decay <= 1 or self.eps_floor <= 0:
            raise ValueError("bad epsilon schedule")


@dataclass
class OuterRecord:
    """One penalty stage: schedule state, objective, and the error bound."""

    t: int
    lam: float
    eps: float
    warm_start: str  # "previous" | "feasible"
    f_value: float
    penalty_f: float
    penalized_dists: tuple
    bound: float
    slack: float
    inner_iters: int
    stop_reason: str


@dataclass
class PenaltyStageReport:
    records: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def inner_iters(self) -> int:
        return sum(r.inner_iters for r in self.records)


@dataclass
class AlternationRecord:
    t: int
    gap: float
    x_step: float
    z_step: float
    z_improve_slack: float  # ||z_old - x|| - ||z_new - x||, should be >= 0
    x_improve_slack: float


@dataclass
class PostReport:
    records: list = field(default_factory=list)
    seconds: float = 0.0
    converged: bool = False
    failures: int = 0

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    @property
    def iterations(self) -> int:
        return len(self.records)


@dataclass
class HybridReport:
    variant_tag: str
    penalty: PenaltyStageReport
    post: PostReport | None
    point: ChannelStack
    objective: float
    vio_pre: float
    vio_pre_components: tuple
    vio_post: float
    vio_post_components: tuple
    seconds: float


def _omega1_project(target, reference, spec: RankSpec, opts):
    res = pseudo_project_channels(
        target, reference, spec.n, spec.per_channel_ranks, opts
    )
    return res.point, res

def _omega2_project(target, reference, spec: RankSpec, opts):
    setting = StructureSetting.coupled(spec.n, spec.N, spec.coupled_rank)
    res = pseudo_project(target, reference, setting, opts)
    return res.point, res


def initial_point(instance: ExperimentInstance, config: HybridConfig) -> np.ndarray:
    """Starting iterate per variant: project the observation onto the hard
    set (reference at the origin, which is feasible for every constraint);
    the all-penalized variant starts at the observation itself."""
    ybar = instance.ybar.data
    zeros = np.zeros_like(ybar)
    if config.variant_tag == "I":
        point, _ = _omega1_project(ybar, zeros, instance.rank_spec, config.projection)
        return point
    if config.variant_tag == "II":
        point, _ = _omega2_project(ybar, zeros, instance.rank_spec, config.projection)
        return point
    return ybar.copy()


def penalty_stage(instance: ExperimentInstance, config: HybridConfig):
    """Loop penalty subproblems while the penalty parameter stays above the
    switch threshold.  Returns (y_out, PenaltyStageReport)."""
    t_start = time.perf_counter()
    spec = instance.rank_spec
    variant = PenaltyVariant(config.variant_tag, spec)
    y_feas = np.zeros(spec.N * spec.n)
    f_feas = float(instance.loss.value(y_feas))

    y = initial_point(instance, config)
    report = PenaltyStageReport()
    eps = config.eps0
    t = 0
    while t < config.max_outer:
        lam = config.lambda0 / config.lambda_decay**t
        if config.lambda_bar > 0 and lam < config.lambda_bar:
            break
        obj = PenaltyObjective(lam=lam, variant=variant, loss=instance.loss)

        # Warm start: keep the previous iterate only while it beats the
        # feasible anchor under the current penalty weight.
        f_y = penalty_value(y, obj)
        if f_y <= f_feas:
            y0, warm = y, "previous"
        else:
            y0, warm = y_feas, "feasible"

        opts = replace(config.vnpg, eps=eps, projection=config.projection)
        result = vnpg_major(y0, obj, opts)
        y = result.y_final

        dists = tuple(
            float(d)
            for d in _penalized_distances(y, obj)
        )
        bound = float(np.sqrt(2.0 * lam * f_feas))
        slack = bound - max(dists) if dists else bound
        if slack < -ERROR_BOUND_SLACK:
            raise HankelFitError(
                f"penalty error bound violated at stage {t}: "
                f"max dist {max(dists):.3e} > bound {bound:.3e}"
            )
        report.records.append(
            OuterRecord(
                t=t,
                lam=lam,
                eps=eps,
                warm_start=warm,
                f_value=float(instance.loss.value(y)),
                penalty_f=penalty_value(y, obj),
                penalized_dists=dists,
                bound=bound,
                slack=float(slack),
                inner_iters=len(result.trace.step_norms),
                stop_reason=result.trace.stop_reason,
            )
        )
        report.traces.append(result.trace)

        eps = max(eps / config.eps_decay, config.eps_floor)
        t += 1

    report.seconds = time.perf_counter() - t_start
    return y, report


def _penalized_distances(y, obj: PenaltyObjective):
    from .penalty import _term_matrix  # local import to keep the surface small

    for term in obj.variant.terms:
        s = np.linalg.svd(_term_matrix(term, y, obj.spec), compute_uv=False)
        yield np.sqrt(np.sum(s[term.bound :] ** 2))


def post_process(y_in, spec: RankSpec, config: HybridConfig):
    """Alternating pseudo-projections between the per-channel set and the
    coupled set, started from y_in with the origin as reference.

    Returns (z, x, PostReport); z (in the per-channel set) is the output.
    """
    t_start = time.perf_counter()
    y_in = np.asarray(y_in, dtype=float)
    zeros = np.zeros_like(y_in)
    opts = config.projection
    x, _ = _omega2_project(y_in, zeros, spec, opts)
    z, _ = _omega1_project(y_in, zeros, spec, opts)

    report = PostReport()
    report.records.append(
        AlternationRecord(
            t=0,
            gap=float(np.linalg.norm(x - z)),
            x_step=np.inf,
            z_step=np.inf,
            z_improve_slack=np.nan,
            x_improve_slack=np.nan,
        )
    )
    for t in range(1, config.post_max_iters + 1):
        z_failed = x_failed = False
        try:
            z_new, _ = _omega1_project(x, z, spec, opts)
        except ConditioningError:
            z_new, z_failed = z, True
        try:
            x_new, _ = _omega2_project(z_new, x, spec, opts)
        except ConditioningError:
            x_new, x_failed = x, True
        if z_failed or x_failed:
            report.failures += 1
            if z_failed and x_failed:
                break

        z_step = float(np.linalg.norm(z_new - z))
        x_step = float(np.linalg.norm(x_new - x))
        denom = max(float(np.linalg.norm(x)), float(np.linalg.norm(z)), 1.0)
        report.records.append(
            AlternationRecord(
                t=t,
                gap=float(np.linalg.norm(x_new - z_new)),
                x_step=x_step,
                z_step=z_step,
                z_improve_slack=float(
                    np.linalg.norm(z - x) - np.linalg.norm(z_new - x)
                ),
                x_improve_slack=float(
                    np.linalg.norm(x - z_new) - np.linalg.norm(x_new - z_new)
                ),
            )
        )
        x, z = x_new, z_new
        if max(x_step, z_step) / denom < config.post_tol:
            report.converged = True
            break
    report.seconds = time.perf_counter() - t_start
    return z, x, report


def run_hybrid(instance: ExperimentInstance, config: HybridConfig) -> HybridReport:
    """Penalty stages followed by alternating pseudo-projection refinement."""
    t_start = time.perf_counter()
    y_pen, pen_report = penalty_stage(instance, config)
    vio_pre, comps_pre = constraint_violation(
        instance.ybar.with_data(y_pen), instance.rank_spec
    )

    if config.lambda_bar > 0:
        z, _, post_report = post_process(y_pen, instance.rank_spec, config)
        final = z
    else:
        post_report = None
        final = y_pen

    vio_post, comps_post = constraint_violation(
        instance.ybar.with_data(final), instance.rank_spec
    )
    return HybridReport(
        variant_tag=config.variant_tag,
        penalty=pen_report,
        post=post_report,
        point=instance.ybar.with_data(final),
        objective=float(instance.loss.value(final)),
        vio_pre=vio_pre,
        vio_pre_components=comps_pre,
        vio_post=vio_post,
        vio_post_components=comps_post,
        seconds=time.perf_counter() - t_start,
    )


@dataclass
class ApReport:
    post: PostReport
    point: ChannelStack
    objective: float
    vio_pre: float
    vio_post: float
    seconds: float


def run_ap_baseline(instance: ExperimentInstance, config: HybridConfig) -> ApReport:
    """Alternating pseudo-projections applied directly to the observation."""
    t_start = time.perf_counter()
    vio_pre, _ = constraint_violation(instance.ybar, instance.rank_spec)
    z, _, post_report = post_process(
        instance.ybar.data, instance.rank_spec, config
    )
    vio_post, _ = constraint_violation(
        instance.ybar.with_data(z), instance.rank_spec
    )
    return ApReport(
        post=post_report,
        point=instance.ybar.with_data(z),
        objective=float(instance.loss.value(z)),
        vio_pre=vio_pre,
        vio_post=vio_post,
        seconds=time.perf_counter() - t_start,
    )
