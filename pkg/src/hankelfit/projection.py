"""Pseudo-projections onto Hankel rank-constraint sets via variable projection.

A signal stack y is in the constraint set when the (block-)Hankel matrix
A(y), with rows p = window+1, has rank at most m = window.  Rank deficiency
by exactly one row is certified by a unit kernel row vector R with
R A(y) = 0, so projecting a query yhat reduces to

    minimize over unit R:   psi(R) = min { 0.5 ||y - yhat||^2 : R A(y) = 0 }.

The inner minimum is an equality-constrained least squares with a banded
Toeplitz constraint matrix and is solved exactly; the outer problem is a
smooth minimization over the unit sphere handled by monotone projected
gradient descent.  Monotone descent started from a kernel vector of the
reference point guarantees the returned point is no farther from yhat than
the reference, which is the "pseudo-projection" contract the outer solvers
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpbtrf, dpbtrs

from .errors import ConditioningError, DimensionError
from .hankel import RANK_RTOL, hankel_map, numerical_rank

# Feasibility of reference points: rank_distance <= FEAS_TOL * (1 + ||A||_F).
FEAS_TOL = 1e-8
# Refuse inner solves when the Gram matrix condition estimate exceeds this.
COND_LIMIT = 1e14
# sigma_{m+1}/sigma_m below this declares rank(A(y*)) = m exactly.
RANK_GAP_TOL = 1e-6
# Slack allowed on the improvement inequality ||y*-yhat|| <= ||y_b-yhat||.
IMPROVEMENT_SLACK = 1e-10


@dataclass(frozen=True)
class StructureSetting:
    """Geometry of one rank constraint: N channels of length n, one window.

    N = 1 is the single-channel constraint rank(H_{w+1}(y)) <= w; N > 1 is
    the coupled constraint on the concatenated per-channel Hankel matrices.
    The rank bound m equals the window, so the deficiency p - m is always 1.
    """

    n: int
    N: int
    window: int
    channel: int | None = None  # which channel this constraint came from

    def __post_init__(self):
        if self.n <= 0 or self.N <= 0 or self.window <= 0:
            raise DimensionError("n, N and window must be positive")
        if self.window + 1 > self.n:
            raise DimensionError(
                f"window {self.window} does not fit signals of length {self.n}"
            )
        if self.q < self.p - 1:
            raise DimensionError(
                f"matrix {self.p}x{self.q} too narrow for rank {self.m}"
            )

    @classmethod
    def single_channel(cls, n: int, window: int, channel: int | None = None):
        return cls(n=n, N=1, window=window, channel=channel)

    @classmethod
    def coupled(cls, n: int, N: int, window: int):
        return cls(n=n, N=N, window=window)

    @property
    def d(self) -> int:
        return self.N * self.n

    @property
    def m(self) -> int:
        return self.window

    @property
    def p(self) -> int:
        return self.window + 1

    @property
    def q(self) -> int:
        return self.N * (self.n - self.window)

    def apply(self, y) -> np.ndarray:
        """The constraint matrix map A(y): horizontally stacked Hankel blocks."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.d,):
            raise DimensionError(f"expected a vector of length {self.d}")
        blocks = [
            hankel_map(y[c * self.n : (c + 1) * self.n], self.window)
            for c in range(self.N)
        ]
        return np.hstack(blocks) if self.N > 1 else blocks[0]

    def adjoint(self, M) -> np.ndarray:
        """Adjoint of apply, returned as a stacked vector of length d."""
        M = np.asarray(M, dtype=float)
        if M.shape != (self.p, self.q):
            raise DimensionError(f"expected shape {(self.p, self.q)}")
        q1 = self.n - self.window
        out = np.empty(self.d)
        idx = np.arange(self.p)[:, None] + np.arange(q1)[None, :]
        for c in range(self.N):
            block = M[:, c * q1 : (c + 1) * q1]
            out[c * self.n : (c + 1) * self.n] = np.bincount(
                idx.ravel(), weights=block.ravel(), minlength=self.n
            )
        return out


@dataclass(frozen=True)
class KernelVector:
    """Unit row vector certifying rank deficiency: R A(y) = 0."""

    R: np.ndarray

    def __post_init__(self):
        R = np.ascontiguousarray(self.R, dtype=float)
        if R.ndim != 1 or R.size == 0:
            raise DimensionError("kernel vector must be a nonempty 1-d array")
        object.__setattr__(self, "R", R)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.R))


@dataclass(frozen=True)
class ProjectionOptions:
    """Sphere-descent controls for pseudo_project.

    method "newton" runs damped Newton steps (exact Hessian, Levenberg
    style damping); "gradient" is plain projected gradient with Armijo
    backtracking.  The Gram matrices that arise from marginally stable data
    have condition numbers around 1e8, which stalls the gradient method, so
    Newton is the default.  Both variants are strictly monotone in psi,
    which is what the improvement guarantee needs.
    """

    method: str = "newton"
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 60
    max_iters: int = 500
    grad_tol: float = 1e-9
    # When no strictly decreasing step exists the iterate is at the numerical
    # floor; it still counts as converged if the gradient is below
    # stall_tol * (1 + ||yhat||), an order of magnitude inside the
    # stationarity tolerance of kkt_check.
    stall_tol: float = 1e-7


DEFAULT_PROJECTION_OPTIONS = ProjectionOptions()


@dataclass
class InnerSolution:
    """Exact minimizer of 0.5||y - yhat||^2 subject to G(R) y = 0."""

    y: np.ndarray
    psi: float
    multiplier: np.ndarray  # Lambda = (G G^T)^{-1} G yhat, stacked per block


@dataclass
class PseudoProjectionResult:
    """A pseudo-projection with its certificates."""

    point: np.ndarray
    kernel: KernelVector
    objective: float
    stationarity_residual: float
    improvement_ok: bool
    rank_gap: float
    converged: bool
    iterations: int
    multiplier: np.ndarray  # oriented V* (length q)
    setting: StructureSetting
    psi_history: np.ndarray = field(repr=False, default=None)

    @property
    def rank_exact(self) -> bool:
        return self.rank_gap <= RANK_GAP_TOL


@dataclass
class KktReport:
    """Residuals of the four first-order conditions of the projection problem."""

    stationarity: float  # ||y* - yhat + A*(R^T V)||
    complementarity: float  # ||V A(y*)^T||
    normalization: float  # |R R^T - 1|
    kernel: float  # ||R A(y*)||
    scale: float  # tolerance actually used
    stationary: bool


def constraint_matrix(R, setting: StructureSetting) -> np.ndarray:
    """Dense q-by-d matrix G with G y = (R A(y))^T.

    Each channel block is the banded Toeplitz matrix sliding R along the
    signal; the coupled case is block-diagonal with identical blocks.  G has
    full row rank for any nonzero R.
    """
    R = np.asarray(R, dtype=float).ravel()
    if R.shape != (setting.p,):
        raise DimensionError(f"kernel vector must have length {setting.p}")
    if not np.any(R):
        raise ValueError("kernel vector must be nonzero")
    n, p = setting.n, setting.p
    q1 = n - setting.window
    G = np.zeros((setting.q, setting.d))
    for c in range(setting.N):
        for j in range(q1):
            G[c * q1 + j, c * n + j : c * n + j + p] = R
    return G


class _Varpro:
    """Fast evaluator of psi and its gradient for a fixed yhat and setting.

    G(R) applied per channel is a correlation with R; the Gram matrix
    G G^T is banded symmetric Toeplitz (autocorrelation of R), factored once
    per R by LAPACK pbtrf and shared across channels.
    """

    def __init__(self, yhat: np.ndarray, setting: StructureSetting):
        self.setting = setting
        self.p = setting.p
        self.q1 = setting.n - setting.window
        self.channels = yhat.reshape(setting.N, setting.n)
        self.scale = float(np.linalg.norm(yhat))

    def factor(self, R: np.ndarray):
        acf = np.correlate(R, R, "full")[self.p - 1 :]
        band = np.empty((self.p, self.q1))
        band[:] = acf[:, None]
        fac, info = dpbtrf(band, lower=1)
        if info != 0:
            raise ConditioningError(
                f"Gram matrix of the constraint rows is not positive definite "
                f"(pbtrf info={info}); kernel vector too degenerate"
            )
        # Cheap guard only; accurate estimation happens on the cold paths
        # via condition_estimate().
        diag = fac[0]
        with np.errstate(divide="ignore", over="ignore"):
            cond_est = (diag.max() / diag.min()) ** 2
        if not np.isfinite(cond_est) or cond_est > COND_LIMIT:
            raise ConditioningError(
                f"Gram matrix condition estimate {cond_est:.2e} exceeds "
                f"{COND_LIMIT:.0e}; refusing to solve"
            )
        return fac, acf

    def condition_estimate(self, fac, acf) -> float:
        """1-norm condition estimate of G G^T from its banded factor.

        lambda_max is bounded by the matrix 1-norm; 1/lambda_min comes from
        a few inverse iterations with a fixed generic start, which is enough
        resolution for a refuse/accept threshold.
        """
        anorm = float(abs(acf[0]) + 2.0 * np.abs(acf[1:]).sum())
        x = np.cos(7.3 * np.arange(self.q1) + 0.4)
        x /= np.linalg.norm(x)
        growth = 1.0
        for _ in range(4):
            x, info = dpbtrs(fac, x, lower=1)
            if info != 0:
                return np.inf
            nx = float(np.linalg.norm(x))
            if not np.isfinite(nx) or nx == 0.0:
                return np.inf
            growth = nx
            if anorm * growth > 1e3 * COND_LIMIT:
                break
            x /= nx
        return anorm * growth

    def check_conditioning(self, state: "_VarproState"):
        cond = self.condition_estimate(state.fac, state.acf)
        if cond > COND_LIMIT:
            raise ConditioningError(
                f"Gram matrix condition estimate {cond:.2e} exceeds "
                f"{COND_LIMIT:.0e}; refusing to solve"
            )

    def eval(self, R: np.ndarray) -> "_VarproState":
        fac, acf = self.factor(R)
        N = self.channels.shape[0]
        gy = np.empty((self.q1, N))
        for c in range(N):
            gy[:, c] = np.correlate(self.channels[c], R, "valid")
        lam, info = dpbtrs(fac, gy, lower=1)
        if info != 0:
            raise ConditioningError(f"banded solve failed (pbtrs info={info})")
        psi = 0.5 * float(np.sum(lam * gy))
        return _VarproState(R=R, psi=psi, lam=lam, fac=fac, acf=acf, engine=self)

    def value(self, R: np.ndarray) -> float:
        return self.eval(R).psi


class _VarproState:
    """One inner solve: lazy access to the minimizer, gradient and Hessian."""

    __slots__ = ("R", "psi", "lam", "fac", "acf", "engine", "_y")

    def __init__(self, R, psi, lam, fac, acf, engine):
        self.R = R
        self.psi = psi
        self.lam = lam
        self.fac = fac
        self.acf = acf
        self.engine = engine
        self._y = None

    @property
    def y(self) -> np.ndarray:
        """Minimizer, as an (N, n) array of channels."""
        if self._y is None:
            ch = self.engine.channels
            out = np.empty_like(ch)
            for c in range(ch.shape[0]):
                out[c] = ch[c] - np.convolve(self.lam[:, c], self.R)
            self._y = out
        return self._y

    def gradient(self) -> np.ndarray:
        """d psi / d R via the envelope formula: grad_s = Lambda^T dG/dR_s y."""
        y = self.y
        p = self.engine.p
        grad = np.zeros(p)
        for c in range(y.shape[0]):
            grad += np.correlate(y[c], self.lam[:, c], "valid")
        return grad

    def hessian(self) -> np.ndarray:
        """Exact Hessian of psi by differentiating the inner KKT system.

        dG/dR_t is the 0/1 band E_t with (E_t v)[j] = v[j+t]; differentiating
        G G^T Lambda = G yhat gives the multiplier sensitivities, one banded
        solve with p right-hand sides per evaluation.  All E_t products
        reduce to correlations, so the right-hand sides come from a single
        full correlation per channel.
        """
        R = self.R
        engine = self.engine
        p, q1 = engine.p, engine.q1
        y = self.y
        H = np.zeros((p, p))
        lag = np.abs(np.arange(p)[:, None] - np.arange(p)[None, :])

        def slide(a):  # row t = a[t:t+q1]; a is contiguous with len >= n
            return np.lib.stride_tricks.as_strided(
                a, (p, q1), (a.strides[0], a.strides[0])
            )

        for c in range(engine.channels.shape[0]):
            lam_c = np.ascontiguousarray(self.lam[:, c])
            y_c = np.ascontiguousarray(y[c])
            # rhs[:, t] = (E_t y) - (E_t G^T + G E_t^T) Lambda, columns of a
            # sliding window over one cross-correlation.
            corr = np.correlate(lam_c, R, "full")
            y_win = slide(y_c)
            rhs = (y_win - slide(corr)[::-1]).T
            lam_t, info = dpbtrs(self.fac, rhs, lower=1)
            if info != 0:
                raise ConditioningError(
                    f"banded solve failed (pbtrs info={info})"
                )
            H += y_win @ lam_t
            # Lambda^T E_s E_t^T Lambda is the lag-|s-t| autocorrelation.
            ac_full = np.correlate(lam_c, lam_c, "full")[q1 - 1 :]
            acl = np.zeros(p)
            take = min(p, ac_full.size)
            acl[:take] = ac_full[:take]
            H -= acl[lag]
            for t in range(p):
                v = np.convolve(lam_t[:, t], R)
                H[:, t] -= np.correlate(v, lam_c, "valid")
        return H

    def stacked_multiplier(self) -> np.ndarray:
        return self.lam.T.ravel()


def inner_solve(R, yhat, setting: StructureSetting) -> InnerSolution:
    """Exact solution of min 0.5||y-yhat||^2 s.t. R A(y) = 0 for nonzero R."""
    R = np.asarray(R, dtype=float).ravel()
    yhat = np.ascontiguousarray(yhat, dtype=float)
    if R.shape != (setting.p,):
        raise DimensionError(f"kernel vector must have length {setting.p}")
    if yhat.shape != (setting.d,):
        raise DimensionError(f"query must have length {setting.d}")
    if not np.any(R):
        raise ValueError("kernel vector must be nonzero")
    engine = _Varpro(yhat, setting)
    state = engine.eval(R)
    engine.check_conditioning(state)
    return InnerSolution(
        y=state.y.ravel().copy(),
        psi=state.psi,
        multiplier=state.stacked_multiplier(),
    )


def psi_value_and_gradient(R, yhat, setting: StructureSetting):
    """Reduced objective psi(R) and its length-p gradient row."""
    R = np.asarray(R, dtype=float).ravel()
    yhat = np.ascontiguousarray(yhat, dtype=float)
    if R.shape != (setting.p,):
        raise DimensionError(f"kernel vector must have length {setting.p}")
    if yhat.shape != (setting.d,):
        raise DimensionError(f"query must have length {setting.d}")
    if not np.any(R):
        raise ValueError("kernel vector must be nonzero")
    engine = _Varpro(yhat, setting)
    state = engine.eval(R)
    engine.check_conditioning(state)
    return state.psi, state.gradient()


def _smallest_left_singular_vector(A: np.ndarray) -> np.ndarray:
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    return U[:, -1].copy()


def _descend(engine, R, state, history, max_iters, opts: ProjectionOptions):
    """Strictly monotone descent on the sphere from (R, state).

    Returns (R, state, converged, used, gnorm) where converged reports the
    primary gradient test and gnorm is the tangent gradient norm at exit.
    """
    if opts.method == "newton":
        return _descend_newton(engine, R, state, history, max_iters, opts)
    if opts.method == "gradient":
        return _descend_gradient(engine, R, state, history, max_iters, opts)
    raise ValueError(f"unknown sphere method {opts.method!r}")


def _descend_gradient(engine, R, state, history, max_iters, opts):
    """Projected gradient with Armijo backtracking and retraction."""
    converged = False
    used = 0
    gnorm = np.inf
    while used < max_iters:
        used += 1
        grad = state.gradient()
        tangent = grad - (grad @ R) * R
        gnorm = float(np.linalg.norm(tangent))
        if gnorm <= opts.grad_tol * (1.0 + state.psi):
            converged = True
            break
        alpha = opts.step0
        accepted = None
        threshold_slope = opts.armijo * gnorm * gnorm
        for _ in range(opts.max_backtracks + 1):
            cand = R - alpha * tangent
            cand /= np.linalg.norm(cand)
            try:
                cand_state = engine.eval(cand)
            except ConditioningError:
                alpha *= opts.shrink
                continue
            if cand_state.psi <= state.psi - alpha * threshold_slope:
                accepted = (cand, cand_state)
                break
            alpha *= opts.shrink
        if accepted is None:
            break
        R, state = accepted
        history.append(state.psi)
    return R, state, converged, used, gnorm


def _tangent_basis(R: np.ndarray) -> np.ndarray:
    # Householder complement of R: columns 1..p-1 of the reflector mapping
    # e_1 to R (cheaper than a full QR for these tiny sizes).
    p = R.size
    v = R.copy()
    v[0] += 1.0 if R[0] >= 0 else -1.0
    Q = np.eye(p) - np.outer(v, v) * (2.0 / (v @ v))
    return Q[:, 1:]


def _newton_direction(state, R):
    grad = state.gradient()
    tangent = grad - (grad @ R) * R
    gnorm = float(np.linalg.norm(tangent))
    Q = _tangent_basis(R)
    Hq = Q.T @ (state.hessian() @ Q)
    gq = Q.T @ tangent
    return gnorm, Q, Hq, gq


def _descend_newton(engine, R, state, history, max_iters, opts):
    """Damped Newton on the sphere, monotone in psi.

    The Hessian restricted to the tangent space is the Riemannian Hessian
    here because psi is scale invariant (radial gradient vanishes).  Damping
    mu is adapted Levenberg style; every accepted step strictly decreases
    psi, so the improvement guarantee of the warm start is preserved.

    Near the optimum the achievable psi decrease drops below the evaluation
    noise of the ill-conditioned inner solves, so strict-decrease acceptance
    stalls at an unpredictable gradient level; the caller runs a polish
    phase afterwards to finish the certificates.  Once the gradient is
    inside the stall bar, only a few damping retries are spent before
    declaring the stall: decreases available there are below noise anyway.
    """
    converged = False
    used = 0
    gnorm = np.inf
    mu = 1e-4
    stall_bar = opts.stall_tol * (1.0 + engine.scale)
    while used < max_iters:
        used += 1
        gnorm, Q, Hq, gq = _newton_direction(state, R)
        if gnorm <= opts.grad_tol * (1.0 + state.psi):
            converged = True
            break
        scale = max(float(np.abs(Hq).max()), 1e-300)
        eye = np.eye(Hq.shape[0])
        tries = 3 if gnorm <= stall_bar else opts.max_backtracks + 1
        accepted = None
        for _ in range(tries):
            M = Hq + (mu * scale) * eye
            try:
                step = -np.linalg.solve(M, gq)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
                # Guard against ascent directions from indefinite M.
                if step @ gq >= 0.0:
                    raise np.linalg.LinAlgError
                cand = R + Q @ step
                cand /= np.linalg.norm(cand)
                cand_state = engine.eval(cand)
            except (np.linalg.LinAlgError, ConditioningError):
                mu *= 4.0
                continue
            if cand_state.psi < state.psi:
                accepted = (cand, cand_state)
                mu = max(mu * 0.25, 1e-12)
                break
            mu *= 4.0
        if accepted is None:
            break
        decrease = state.psi - accepted[1].psi
        R, state = accepted
        history.append(state.psi)
        if gnorm <= stall_bar and decrease <= 1e-11 * (1.0 + abs(state.psi)):
            # Already inside the stall bar and progress is at the
            # evaluation-noise level; further strict decreases would only
            # creep without improving the certificate.
            break
    return R, state, converged, used, gnorm


# Polish steps may move the kernel vector by at most this much per step;
# larger proposals are treated as untrusted and damped harder.
_POLISH_STEP_CAP = 1e-4


def _polish_newton(engine, R, state, gnorm, max_iters, opts):
    """Drive the tangent gradient down once psi sits at its noise floor.

    Acceptance is on gradient-norm decrease starting from undamped Newton
    corrections: the true psi change along these near-stationary steps is
    orders of magnitude below the improvement slack, and the caller
    re-checks the improvement contract on the polished point directly.
    """
    used = 0
    while used < max_iters and gnorm > opts.grad_tol * (1.0 + state.psi):
        used += 1
        _, Q, Hq, gq = _newton_direction(state, R)
        scale = max(float(np.abs(Hq).max()), 1e-300)
        eye = np.eye(Hq.shape[0])
        mu = 0.0
        accepted = None
        for _ in range(30):
            M = Hq + (mu * scale) * eye
            try:
                step = -np.linalg.solve(M, gq)
                if not np.all(np.isfinite(step)) or (
                    float(np.linalg.norm(step)) > _POLISH_STEP_CAP
                ):
                    raise np.linalg.LinAlgError
                cand = R + Q @ step
                cand /= np.linalg.norm(cand)
                cand_state = engine.eval(cand)
            except (np.linalg.LinAlgError, ConditioningError):
                mu = max(4.0 * mu, 1e-10)
                continue
            g_c = cand_state.gradient()
            g_c -= (g_c @ cand) * cand
            gn_c = float(np.linalg.norm(g_c))
            if gn_c < 0.999 * gnorm:
                accepted = (cand, cand_state, gn_c)
                break
            mu = max(4.0 * mu, 1e-10)
        if accepted is None:
            break
        R, state, gnorm = accepted
    return R, state, gnorm, used


_PROBE_ANGLE = 1e-2


def _saddle_probe(engine, R, state):
    """Look for strict descent in tangent coordinate directions.

    Used only after convergence from a symmetric (tied-singular-pair) start,
    which can place the iterate exactly on a saddle where the gradient
    vanishes.  Returns a strictly better (R, state) or None.
    """
    p = R.size
    best = None
    for j in range(p):
        direction = np.zeros(p)
        direction[j] = 1.0
        direction -= (direction @ R) * R
        nrm = np.linalg.norm(direction)
        if nrm < 1e-12:
            continue
        direction /= nrm
        for sign in (1.0, -1.0):
            cand = R + sign * _PROBE_ANGLE * direction
            cand /= np.linalg.norm(cand)
            cand_state = engine.eval(cand)
            if cand_state.psi < state.psi - 1e-12 * (1.0 + state.psi) and (
                best is None or cand_state.psi < best[1].psi
            ):
                best = (cand, cand_state)
    return best


def _initial_kernel(A_b: np.ndarray, yhat: np.ndarray, setting: StructureSetting):
    """Kernel warm start: annihilates A(y_b), falling back to A(yhat) when
    the reference matrix is numerically zero (then every unit R annihilates
    it and targeting yhat is free).

    Also reports whether the selecting singular pair was (numerically) tied:
    a tie makes the returned vector an arbitrary element of a subspace, and
    such symmetric starts can sit exactly on a saddle of the reduced
    objective, where plain descent would stall.
    """
    source = A_b
    s = np.linalg.svd(A_b, compute_uv=False)
    if s.size == 0 or s[0] <= max(A_b.shape) * RANK_RTOL:
        source = setting.apply(yhat)
        s = np.linalg.svd(source, compute_uv=False)
    m = setting.m
    sigma_m = s[m - 1] if s.size >= m else 0.0
    sigma_m1 = s[m] if s.size > m else 0.0
    tied = bool(abs(sigma_m - sigma_m1) <= 1e-9 * (s[0] if s.size else 0.0) + 1e-300)
    return _smallest_left_singular_vector(source), tied


def pseudo_project(
    yhat,
    y_b,
    setting: StructureSetting,
    opts: ProjectionOptions = DEFAULT_PROJECTION_OPTIONS,
    *,
    warm_kernel: np.ndarray | None = None,
    check_reference: bool = True,
) -> PseudoProjectionResult:
    """Pseudo-projection of yhat onto {y : rank(A(y)) <= m} w.r.t. y_b.

    y_b must already satisfy the rank constraint (it anchors the improvement
    guarantee).  Monotone descent over unit kernel vectors starts from a
    kernel vector of A(y_b), so the final objective never exceeds
    0.5||y_b - yhat||^2 and the returned point is at least as close to yhat
    as y_b is.

    `warm_kernel` seeds the descent with a caller-supplied kernel vector
    instead (useful across nearby solves); if the improvement contract does
    not survive that start, the solve silently reruns from the default
    initialization, so the guarantee is unconditional.  `check_reference`
    can be disabled by callers that maintain feasible references by
    construction.
    """
    yhat = np.ascontiguousarray(yhat, dtype=float)
    y_b = np.ascontiguousarray(y_b, dtype=float)
    if yhat.shape != (setting.d,) or y_b.shape != (setting.d,):
        raise DimensionError(f"expected vectors of length {setting.d}")

    if check_reference:
        A_b = setting.apply(y_b)
        s_b = np.linalg.svd(A_b, compute_uv=False)
        feas_gap = float(np.sqrt(np.sum(s_b[setting.m :] ** 2)))
        if feas_gap > FEAS_TOL * (1.0 + float(np.linalg.norm(A_b, "fro"))):
            raise ValueError(
                f"reference point violates the rank constraint "
                f"(distance {feas_gap:.3e}); pseudo-projection undefined"
            )
    else:
        A_b = None

    engine = _Varpro(yhat, setting)
    yb_dist = float(np.linalg.norm(y_b - yhat))

    if warm_kernel is not None:
        R = np.ascontiguousarray(warm_kernel, dtype=float)
        if R.shape != (setting.p,):
            raise DimensionError(f"warm kernel must have length {setting.p}")
        R = R / np.linalg.norm(R)
        tied_start = False
    else:
        if A_b is None:
            A_b = setting.apply(y_b)
        R, tied_start = _initial_kernel(A_b, yhat, setting)
        R /= np.linalg.norm(R)

    state = engine.eval(R)
    history = [state.psi]
    converged = False
    gnorm = np.inf
    iterations = 0
    budget = opts.max_iters
    probes_left = 3 if tied_start else 0
    while iterations < budget:
        R, state, converged, used, gnorm = _descend(
            engine, R, state, history, budget - iterations, opts
        )
        iterations += max(used, 1)
        if probes_left == 0:
            break
        escaped = _saddle_probe(engine, R, state)
        if escaped is None:
            break
        # The symmetric start converged onto a non-minimizing stationary
        # point; resume descent from the strictly better probe point.
        probes_left -= 1
        converged = False
        R, state = escaped
        history.append(state.psi)

    stall_bar = opts.stall_tol * (1.0 + engine.scale)
    if not converged and gnorm > stall_bar and iterations < budget:
        # psi is at its evaluation-noise floor but the stationarity
        # certificate is not finished; polish the gradient, then adopt the
        # polished iterate only if the improvement contract survives.
        R_p, state_p, gnorm_p, used = _polish_newton(
            engine, R, state, gnorm, min(budget - iterations, 25), opts
        )
        iterations += used
        moved = float(
            np.linalg.norm(state_p.y.ravel() - yhat)
        ) <= yb_dist + 0.5 * IMPROVEMENT_SLACK
        if moved and gnorm_p <= gnorm:
            R, state, gnorm = R_p, state_p, gnorm_p
            history.append(state.psi)
    if not converged:
        converged = gnorm <= opts.grad_tol * (1.0 + state.psi) or gnorm <= stall_bar

    if warm_kernel is not None and (
        float(np.linalg.norm(state.y.ravel() - yhat)) > yb_dist + IMPROVEMENT_SLACK
    ):
        # The hint lost the improvement guarantee; redo from the kernel of
        # the reference point, which restores it unconditionally.
        return pseudo_project(
            yhat, y_b, setting, opts, check_reference=check_reference
        )

    point = state.y.ravel().copy()
    objective = 0.5 * float(np.sum((point - yhat) ** 2))
    improvement_ok = bool(
        np.linalg.norm(point - yhat) <= yb_dist + IMPROVEMENT_SLACK
    )

    # Orient the KKT multiplier by checking the stationarity residual of
    # both signs rather than trusting a sign convention.  A*(R^T V) for the
    # rank-one band splits into per-channel convolutions of R with V.
    lam_row = state.stacked_multiplier()
    correction = np.concatenate(
        [np.convolve(R, state.lam[:, c]) for c in range(setting.N)]
    )
    res_plus = float(np.linalg.norm(point - yhat + correction))
    res_minus = float(np.linalg.norm(point - yhat - correction))
    if res_plus <= res_minus:
        v_row, stationarity_residual = lam_row, res_plus
    else:
        v_row, stationarity_residual = -lam_row, res_minus

    s_final = np.linalg.svd(setting.apply(point), compute_uv=False)
    rank_gap = _rank_gap(s_final, setting)

    return PseudoProjectionResult(
        point=point,
        kernel=KernelVector(R),
        objective=objective,
        stationarity_residual=stationarity_residual,
        improvement_ok=improvement_ok,
        rank_gap=rank_gap,
        converged=converged,
        iterations=iterations,
        multiplier=v_row,
        setting=setting,
        psi_history=np.asarray(history),
    )


def _rank_gap(s: np.ndarray, setting: StructureSetting) -> float:
    m = setting.m
    sigma_m = s[m - 1] if s.size >= m else 0.0
    sigma_m1 = s[m] if s.size > m else 0.0
    floor = max(setting.p, setting.q) * (s[0] if s.size else 0.0) * RANK_RTOL
    if sigma_m <= floor:
        # rank(A(y*)) < m: only the weaker normal-cone inclusion holds,
        # so never report this as rank-exact.
        return 1.0
    return float(sigma_m1 / sigma_m)


def kkt_check(
    result: PseudoProjectionResult, yhat, setting: StructureSetting
) -> KktReport:
    """Evaluate the first-order conditions at a finished solve."""
    yhat = np.asarray(yhat, dtype=float)
    R = result.kernel.R
    point = result.point
    v_row = result.multiplier
    A_star = setting.apply(point)
    correction = setting.adjoint(np.outer(R, v_row))
    stationarity = float(np.linalg.norm(point - yhat + correction))
    complementarity = float(np.linalg.norm(A_star @ v_row))
    normalization = abs(float(R @ R) - 1.0)
    kernel_res = float(np.linalg.norm(R @ A_star))
    scale = 1e-6 * (1.0 + float(np.linalg.norm(yhat)))
    residuals = (stationarity, complementarity, normalization, kernel_res)
    return KktReport(
        stationarity=stationarity,
        complementarity=complementarity,
        normalization=normalization,
        kernel=kernel_res,
        scale=scale,
        stationary=bool(max(residuals) <= scale),
    )


def rank1_improve(yhat) -> np.ndarray:
    """Point of Hankel rank one (window 1) strictly closer to yhat than 0 is.

    Requires rank(H_2(yhat)) = 2.  When an endpoint of yhat is nonzero the
    result keeps just that endpoint; otherwise the result is the geometric
    sequence c * z^t whose ratio z is the smallest positive integer at which
    the correlation polynomial of the interior samples does not vanish.
    """
    yhat = np.asarray(yhat, dtype=float)
    if yhat.ndim != 1 or yhat.size < 3:
        raise DimensionError("need a 1-d signal of length >= 3")
    n = yhat.size
    s = np.linalg.svd(hankel_map(yhat, 1), compute_uv=False)
    if numerical_rank(s, dim=n - 1) != 2:
        raise ValueError("input must have Hankel rank exactly 2 at window 1")

    if yhat[0] != 0.0:
        out = np.zeros(n)
        out[0] = yhat[0]
        return out
    if yhat[-1] != 0.0:
        out = np.zeros(n)
        out[-1] = yhat[-1]
        return out

    # Both endpoints vanish; some interior sample is nonzero because the
    # rank is 2.  poly(z) = sum_{j=1}^{n-2} yhat[j] z^j has at most n-2 roots.
    coeffs = yhat[1 : n - 1]
    scale = float(np.max(np.abs(coeffs)))
    z = 1.0
    while True:
        powers = z ** np.arange(1, n - 1)
        value = float(coeffs @ powers)
        if abs(value) > 1e-12 * scale * float(np.max(powers)):
            break
        z += 1.0
    denom = float(np.sum(z ** (2.0 * np.arange(n))))
    c = value / denom
    return c * z ** np.arange(n)


@dataclass
class ProductProjectionResult:
    """Pseudo-projection onto a product of independent channel constraints."""

    point: np.ndarray
    parts: list
    improvement_ok: bool
    converged: bool

    @property
    def objective(self) -> float:
        return float(sum(part.objective for part in self.parts))


def pseudo_project_channels(
    yhat,
    y_b,
    n: int,
    windows,
    opts: ProjectionOptions = DEFAULT_PROJECTION_OPTIONS,
    *,
    warm_kernels=None,
    check_reference: bool = True,
) -> ProductProjectionResult:
    """Pseudo-project each channel independently onto its own rank set.

    Both the squared distance and the constraints separate across channels,
    so solving channel by channel is exact for the product set.
    """
    yhat = np.ascontiguousarray(yhat, dtype=float)
    y_b = np.ascontiguousarray(y_b, dtype=float)
    windows = list(windows)
    N = len(windows)
    if yhat.shape != (N * n,) or y_b.shape != (N * n,):
        raise DimensionError(f"expected stacked vectors of length {N * n}")
    if warm_kernels is None:
        warm_kernels = [None] * N
    point = np.empty(N * n)
    parts = []
    for c, w in enumerate(windows):
        sl = slice(c * n, (c + 1) * n)
        setting = StructureSetting.single_channel(n, w, channel=c)
        part = pseudo_project(
            yhat[sl],
            y_b[sl],
            setting,
            opts,
            warm_kernel=warm_kernels[c],
            check_reference=check_reference,
        )
        point[sl] = part.point
        parts.append(part)
    improvement_ok = bool(
        np.linalg.norm(point - yhat)
        <= np.linalg.norm(y_b - yhat) + IMPROVEMENT_SLACK
    )
    return ProductProjectionResult(
        point=point,
        parts=parts,
        improvement_ok=improvement_ok,
        converged=all(part.converged for part in parts),
    )
