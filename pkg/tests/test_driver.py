import numpy as np
import pytest

from hankelfit import (
    HybridConfig,
    SystemSpec,
    VnpgOptions,
    constraint_violation,
    make_instance,
    penalty_stage,
    post_process,
    run_ap_baseline,
    run_hybrid,
)
from hankelfit.driver import initial_point
from hankelfit.penalty import FEAS_TOL, PenaltyObjective, PenaltyVariant, penalty_value


def small_config(tag="II", **kw):
    defaults = dict(
        variant_tag=tag,
        vnpg=VnpgOptions(max_iters=20_000),
        post_max_iters=5_000,
    )
    defaults.update(kw)
    return HybridConfig(**defaults)


@pytest.fixture(scope="module")
def small_inst():
    spec = SystemSpec(n1=1, n2=1, nc=1, n=20, sigma=0.1, seed=31)
    return make_instance(spec, noise_seed=2)


def test_schedule_conformance(small_inst):
    cfg = small_config("I")
    _, report = penalty_stage(small_inst, cfg)
    for r in report.records:
        assert r.lam == cfg.lambda0 / cfg.lambda_decay**r.t
    eps = cfg.eps0
    for r in report.records:
        assert r.eps == eps
        eps = max(eps / cfg.eps_decay, cfg.eps_floor)
    # loop ran until lambda crossed the switch threshold
    assert report.records[-1].lam >= cfg.lambda_bar
    assert report.records[-1].lam / cfg.lambda_decay < cfg.lambda_bar


def test_penalty_stage_noiseless_keeps_truth():
    spec = SystemSpec(n1=1, n2=1, nc=1, n=20, sigma=0.0, seed=7)
    inst = make_instance(spec, noise_seed=0)
    assert np.array_equal(inst.ybar.data, inst.clean.data)
    cfg = small_config("III")
    y, report = penalty_stage(inst, cfg)
    assert inst.loss.value(y) <= 1e-12
    assert np.allclose(y, inst.clean.data, atol=1e-6)
    for r in report.records:
        assert r.inner_iters <= 2


@pytest.mark.parametrize("tag", ["I", "II", "III"])
def test_error_bound_every_stage(small_inst, tag):
    cfg = small_config(tag)
    _, report = penalty_stage(small_inst, cfg)
    f_feas = small_inst.loss.value(np.zeros(40))
    for r in report.records:
        bound = np.sqrt(2 * r.lam * f_feas)
        assert np.isclose(r.bound, bound)
        assert max(r.penalized_dists) <= bound + 1e-8
        assert r.slack >= -1e-8


def test_warm_start_never_worse_than_feasible(small_inst):
    cfg = small_config("II")
    _, report = penalty_stage(small_inst, cfg)
    f_feas = small_inst.loss.value(np.zeros(40))
    variant = PenaltyVariant("II", small_inst.rank_spec)
    # by Step-1 construction, every stage starts at value <= f(y_feas);
    # the recorded end-of-stage penalty value cannot exceed it either
    for r in report.records:
        assert r.penalty_f <= f_feas + 1e-9


def test_initial_points_feasible(small_inst):
    for tag in ("I", "II", "III"):
        y0 = initial_point(small_inst, small_config(tag))
        obj = PenaltyObjective(
            lam=1.0, variant=PenaltyVariant(tag, small_inst.rank_spec),
            loss=small_inst.loss,
        )
        assert np.isfinite(penalty_value(y0, obj))
    assert np.array_equal(
        initial_point(small_inst, small_config("III")), small_inst.ybar.data
    )


def test_post_process_fixed_point(small_inst):
    cfg = small_config()
    y = small_inst.clean.data  # in both constraint sets
    z, x, report = post_process(y, small_inst.rank_spec, cfg)
    assert report.converged
    assert report.iterations <= 2
    assert np.allclose(z, y, atol=1e-7)
    assert np.allclose(x, y, atol=1e-7)


def test_post_process_improvement_replay(small_inst):
    cfg = small_config()
    z, x, report = post_process(
        small_inst.ybar.data, small_inst.rank_spec, cfg
    )
    assert report.converged
    for rec in report.records[1:]:
        assert rec.z_improve_slack >= -1e-10
        assert rec.x_improve_slack >= -1e-10
    # gap decays linearly in log scale
    gaps = report.gaps
    gaps = gaps[gaps > 1e-15]
    if gaps.size >= 3:
        t = np.arange(gaps.size)
        slope = np.polyfit(t, np.log(gaps), 1)[0]
        assert slope <= -0.05


def test_ap_baseline_feasible_input_returns_it(small_inst):
    spec = SystemSpec(n1=1, n2=1, nc=1, n=20, sigma=0.0, seed=31)
    clean_inst = make_instance(spec, noise_seed=0)
    rep = run_ap_baseline(clean_inst, small_config())
    assert np.allclose(rep.point.data, clean_inst.clean.data, atol=1e-7)
    assert rep.objective <= 1e-12


def test_run_hybrid_reports(small_inst):
    cfg = small_config("II")
    rep = run_hybrid(small_inst, cfg)
    assert rep.post.converged
    assert rep.vio_post <= 1e-6
    # post-processing never increases vio beyond its starting value
    assert rep.vio_post <= rep.vio_pre + 1e-10
    # final point satisfies the per-channel sets exactly
    vio, comps = constraint_violation(rep.point, small_inst.rank_spec)
    assert np.isclose(vio, rep.vio_post, atol=1e-12)
    assert rep.objective >= 0


def test_hybrid_beats_ap_here(small_inst):
    cfg = small_config("II")
    hb = run_hybrid(small_inst, cfg)
    ap = run_ap_baseline(small_inst, cfg)
    assert hb.objective <= ap.objective + 1e-9


def test_determinism(small_inst):
    cfg = small_config("I")
    a = run_hybrid(small_inst, cfg)
    b = run_hybrid(small_inst, cfg)
    assert abs(a.objective - b.objective) <= 1e-10
    assert abs(a.vio_post - b.vio_post) <= 1e-10
    assert np.allclose(a.point.data, b.point.data, atol=1e-10)


def test_lambda_bar_zero_skips_post(small_inst):
    cfg = small_config("III", lambda_bar=0.0, max_outer=3)
    rep = run_hybrid(small_inst, cfg)
    assert rep.post is None
    assert len(rep.penalty.records) == 3
    assert np.isclose(rep.vio_pre, rep.vio_post)


def test_feasibility_of_accepted_iterates(small_inst):
    # Variant II: every stage output must lie in the coupled set within tol
    cfg = small_config("II")
    y, report = penalty_stage(small_inst, cfg)
    from hankelfit import StructureSetting

    st = StructureSetting.coupled(
        small_inst.rank_spec.n, 2, small_inst.rank_spec.coupled_rank
    )
    M = st.apply(y)
    s = np.linalg.svd(M, compute_uv=False)
    dist = np.sqrt(np.sum(s[small_inst.rank_spec.coupled_rank :] ** 2))
    assert dist <= FEAS_TOL * (1 + np.linalg.norm(M, "fro"))
