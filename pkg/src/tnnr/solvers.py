"""Solvers for truncated-nuclear-norm low-rank recovery.

Three inner solvers handle the convex model with a fixed truncation pair
(L, R): an ADMM splitting for the equality/ball-constrained models, an
accelerated proximal gradient method for the penalized model, and a
block-matrix ADMM with adaptive penalty that collapses the two constraints of
the ADMM splitting into one. The multi-stage driver `lrisd` alternates rank
estimation on the current recovery with inner solves until the estimated rank
stabilizes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import TruncationPair, _shrink_factors, nuclear_norm, truncation_pair
from .operators import LinearMap, _as_measurement, project_ball
from .sve import SveConfig, SveProfile, estimate_rank

__all__ = [
    "SolverConfig",
    "StageTrace",
    "SolverDivergence",
    "tnnr_admm",
    "tnnr_apgl",
    "tnnr_admmap",
    "q_apply",
    "q_adjoint",
    "objective",
    "solve_with_rank",
    "lrisd",
    "momentum_step",
    "INNER_SOLVERS",
]

_GOLDEN = (math.sqrt(5.0) + 1.0) / 2.0


@dataclass
class SolverConfig:
    """Scalar knobs shared by the inner solvers and the outer loop.

    beta is the ADMM penalty (also the initial penalty of the adaptive
    variant); gamma scales the multiplier step and must stay in
    (0, (sqrt(5)+1)/2); mu weighs the data-fit term of the penalized model;
    delta is the measurement-ball radius (0 = equality constraint).
    inner_tol bounds the per-iteration squared relative change inside a
    solver, outer_tol the same quantity across truncation-pair refits.
    beta_max, rho0 and eps_adapt drive the adaptive-penalty update
    beta <- min(beta_max, rho0 * beta).
    """

    beta: float = 1e-3
    gamma: float = 1.0
    mu: float = 1.0
    delta: float = 0.0
    inner_tol: float = 1e-4
    outer_tol: float = 1e-2
    max_inner_iters: int = 5000
    max_refit_iters: int = 30
    beta_max: float = 1e6
    rho0: float = 1.9
    eps_adapt: float = 1e-3
    record_iterates: bool = False

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.gamma < _GOLDEN:
            raise ValueError(f"gamma must lie in (0, (sqrt(5)+1)/2), got {self.gamma}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner_iters < 1 or self.max_refit_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.beta_max < self.beta:
            raise ValueError("beta_max must be >= beta")
        if self.rho0 < 1:
            raise ValueError(f"rho0 must be >= 1, got {self.rho0}")
        if self.eps_adapt <= 0:
            raise ValueError("eps_adapt must be positive")


@dataclass
class StageTrace:
    """Per-stage diagnostics: one row per inner iteration plus per-refit
    summaries. `objective` holds ||X||_* - Tr(L X R^T) at every iteration;
    `beta` holds the penalty in use (the data-fit weight mu for the gradient
    solver, which has no penalty)."""

    stage: int = 0
    rank: int = 0
    l: list = field(default_factory=list)
    k: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    l_change: list = field(default_factory=list)
    converged: bool = False
    sve: SveProfile | None = None
    iterates: list | None = None

    CSV_HEADER = ("stage", "l", "k", "objective", "residual", "beta")

    def record(self, l: int, k: int, obj: float, resid: float, beta: float) -> None:
        self.l.append(l)
        self.k.append(k)
        self.objective.append(obj)
        self.residual.append(resid)
        self.beta.append(beta)

    def rows(self):
        """Yield (stage, l, k, objective, residual, beta) tuples."""
        for i in range(len(self.k)):
            yield (self.stage, self.l[i], self.k[i], self.objective[i],
                   self.residual[i], self.beta[i])

    def absorb(self, other: "StageTrace", l: int) -> None:
        """Fold a single-solve trace into this stage as refit step l."""
        for row in zip(other.k, other.objective, other.residual, other.beta):
            self.record(l, *row)
        self.inner_iters.append(len(other.k))
        if other.iterates is not None:
            if self.iterates is None:
                self.iterates = []
            self.iterates.extend(other.iterates)

    @property
    def total_inner_iters(self) -> int:
        return len(self.k)


class SolverDivergence(RuntimeError):
    """Raised when an inner solve blows up; carries the trace so far."""

    def __init__(self, message: str, trace: StageTrace):
        super().__init__(message)
        self.trace = trace


def objective(x, pair: TruncationPair) -> float:
    """Model objective ||X||_* - Tr(L X R^T)."""
    return nuclear_norm(x) - pair.trace_term(np.asarray(x, dtype=np.float64))


def momentum_step(tau: float) -> float:
    """Next momentum parameter: (1 + sqrt(1 + 4 tau^2)) / 2."""
    return (1.0 + math.sqrt(1.0 + 4.0 * tau * tau)) / 2.0


def _data_matrix(a: LinearMap, b: np.ndarray) -> np.ndarray:
    # the matrix form of b: for a mask this is the zero-filled scatter, for
    # other tight frames the adjoint image plays the same role
    return a.adjoint(b)


def _check_divergence(obj: float, obj_ref: float, trace: StageTrace, name: str) -> None:
    if not np.isfinite(obj) or obj > 1e6 * max(obj_ref, 1.0):
        raise SolverDivergence(
            f"{name} diverged at iteration {len(trace.k)}: objective {obj:.3e}", trace)


def tnnr_admm(a: LinearMap, b, pair: TruncationPair, delta: float,
              cfg: SolverConfig | None = None) -> tuple[np.ndarray, StageTrace]:
    """ADMM for the equality- (delta = 0) or ball-constrained model.

    Iterates X <- shrink(Y + Z/beta, 1/beta),
    Y <- P_ball(X + (L^T R - Z)/beta), Z <- Z - gamma beta (X - Y), starting
    all three at the matrix form of b. Stops once both the squared relative
    X-change and the squared relative X-Y gap fall below inner_tol; the gap
    condition keeps the change test from firing inside the shrinkage dead
    zone before the dual variable has grown to data scale. The returned
    iterate is projected onto the measurement ball so the feasibility
    contract holds even at the iteration cap.
    """
    cfg = cfg or SolverConfig()
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    b = _as_measurement(b, a.p)
    data = _data_matrix(a, b)
    denom = float(b @ b) or 1.0
    g = pair.correction()
    x, y, z = data.copy(), data.copy(), data.copy()
    trace = StageTrace(rank=pair.r)
    if cfg.record_iterates:
        trace.iterates = []
    obj_ref = None
    for k in range(1, cfg.max_inner_iters + 1):
        x_new, s_shrunk = _shrink_factors(y + z / cfg.beta, 1.0 / cfg.beta)
        y_new = project_ball(a, x_new + (g - z) / cfg.beta, b, delta)
        z = z - cfg.gamma * cfg.beta * (x_new - y_new)
        obj = float(s_shrunk.sum() - np.vdot(x_new, g))
        resid = float(np.linalg.norm(a.apply(x_new) - b))
        trace.record(1, k, obj, resid, cfg.beta)
        if cfg.record_iterates:
            trace.iterates.append({"X": x_new.copy(), "Y": y_new.copy(), "Z": z.copy()})
        if obj_ref is None:
            obj_ref = obj
        _check_divergence(obj, obj_ref, trace, "tnnr_admm")
        change = float(np.linalg.norm(x_new - x, "fro") ** 2) / denom
        gap = float(np.linalg.norm(x_new - y_new, "fro") ** 2) / denom
        x, y = x_new, y_new
        if change <= cfg.inner_tol and gap <= cfg.inner_tol:
            trace.converged = True
            break
    trace.inner_iters.append(trace.total_inner_iters)
    return project_ball(a, x, b, delta), trace


def tnnr_apgl(a: LinearMap, b, pair: TruncationPair, mu: float,
              cfg: SolverConfig | None = None) -> tuple[np.ndarray, StageTrace]:
    """Accelerated proximal gradient for the penalized model
    min ||X||_* - Tr(L X R^T) + (mu/2) ||A(X) - b||^2.

    The smooth part F(Y) = -Tr(L Y R^T) + (mu/2)||A(Y) - b||^2 has gradient
    -L^T R + mu A*(A(Y) - b) and Lipschitz constant mu for a tight frame, so
    the proximal step size is fixed at 1/mu while the momentum parameter
    follows tau <- (1 + sqrt(1 + 4 tau^2)) / 2 from tau = 1.
    """
    cfg = cfg or SolverConfig()
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    b = _as_measurement(b, a.p)
    data = _data_matrix(a, b)
    denom = float(b @ b) or 1.0
    g = pair.correction()
    step = 1.0 / mu
    x = data.copy()
    y = data.copy()
    tau = 1.0
    trace = StageTrace(rank=pair.r)
    if cfg.record_iterates:
        trace.iterates = []
    obj_ref = None
    for k in range(1, cfg.max_inner_iters + 1):
        grad = -g + mu * a.adjoint(a.apply(y) - b)
        x_new, s_shrunk = _shrink_factors(y - step * grad, step)
        tau_new = momentum_step(tau)
        y = x_new + ((tau - 1.0) / tau_new) * (x_new - x)
        obj = float(s_shrunk.sum() - np.vdot(x_new, g))
        resid = float(np.linalg.norm(a.apply(x_new) - b))
        trace.record(1, k, obj, resid, mu)
        if cfg.record_iterates:
            trace.iterates.append({"X": x_new.copy(), "Y": y.copy(), "tau": tau_new})
        if obj_ref is None:
            obj_ref = obj
        _check_divergence(obj, obj_ref, trace, "tnnr_apgl")
        change = float(np.linalg.norm(x_new - x, "fro") ** 2) / denom
        x, tau = x_new, tau_new
        if change <= cfg.inner_tol:
            trace.converged = True
            break
    trace.inner_iters.append(trace.total_inner_iters)
    return x, trace


def q_apply(y, a: LinearMap) -> np.ndarray:
    """Block embedding Q(Y) = [[-Y, 0], [0, embed(A(Y))]] of size 2m x 2n."""
    y = a._check_domain(y)
    m, n = a.shape
    w = np.zeros((2 * m, 2 * n))
    w[:m, :n] = -y
    w[m:, n:] = a.embed(a.apply(y))
    return w


def q_adjoint(w, a: LinearMap) -> np.ndarray:
    """Adjoint of the block embedding: Q*(W) = -W11 + A*(extract(W22))."""
    w = np.asarray(w, dtype=np.float64)
    m, n = a.shape
    if w.shape != (2 * m, 2 * n):
        raise ValueError(f"expected block matrix of shape {(2 * m, 2 * n)}, got {w.shape}")
    return -w[:m, :n] + a.adjoint(a.extract(w[m:, n:]))


def tnnr_admmap(a: LinearMap, b, pair: TruncationPair, delta: float,
                cfg: SolverConfig | None = None) -> tuple[np.ndarray, StageTrace]:
    """Block-matrix ADMM with adaptive penalty for the constrained models.

    The two constraints X = Y and A(Y) in the delta-ball around b are folded
    into one block equation P(X) + Q(Y) = C, whose Y-subproblem normal
    equation (I + A*A) Y = RHS is solved in closed form through the
    tight-frame inverse identity. The multiplier block Z has only its (1,1)
    and (2,2) blocks active; the slack xi (measurement space) is updated by
    ball projection only when delta > 0 and stays identically zero for the
    equality model. The penalty grows by rho0 whenever the scaled iterate
    change drops below eps_adapt.
    """
    cfg = cfg or SolverConfig()
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    b = _as_measurement(b, a.p)
    data = _data_matrix(a, b)
    denom = float(b @ b) or 1.0
    m, n = a.shape
    g = pair.correction()
    x, y = data.copy(), data.copy()
    z11 = np.zeros((m, n))
    z22 = np.zeros(a.p)
    beta = cfg.beta
    if delta > 0:
        v = a.apply(x) - b
        nv = float(np.linalg.norm(v))
        xi = v * (delta / nv) if nv > delta else v
    else:
        xi = np.zeros(a.p)
    trace = StageTrace(rank=pair.r)
    if cfg.record_iterates:
        trace.iterates = []
    obj_ref = None
    for k in range(1, cfg.max_inner_iters + 1):
        if cfg.record_iterates:
            pre = {"z11": z11.copy(), "z22": z22.copy(), "xi": xi.copy(), "beta": beta}
        x_new, s_shrunk = _shrink_factors(y + z11 / beta, 1.0 / beta)
        # closed form for (I + A*A) Y = X + (L^T R - z11)/beta + A*(b + xi + z22/beta)
        h = g - z11
        y_new = (x_new + h / beta
                 - a.adjoint(a.apply(h + beta * x_new)) / (2.0 * beta)
                 + a.adjoint(beta * b + beta * xi + z22) / (2.0 * beta))
        z11 = z11 - beta * (x_new - y_new)
        ay = a.apply(y_new)
        z22 = z22 - beta * (ay - b - xi)
        if delta > 0:
            zeta = ay - b - z22 / beta
            nz = float(np.linalg.norm(zeta))
            xi = zeta * (delta / nz) if nz > delta else zeta
        obj = float(s_shrunk.sum() - np.vdot(x_new, g))
        resid = float(np.linalg.norm(a.apply(x_new) - b))
        trace.record(1, k, obj, resid, beta)
        if cfg.record_iterates:
            pre.update({"X": x_new.copy(), "Y": y_new.copy()})
            trace.iterates.append(pre)
        if obj_ref is None:
            obj_ref = obj
        _check_divergence(obj, obj_ref, trace, "tnnr_admmap")
        c_norm = float(np.linalg.norm(b + xi))
        step = max(float(np.linalg.norm(x_new - x, "fro")),
                   float(np.linalg.norm(y_new - y, "fro")))
        rho = cfg.rho0 if beta * step / max(c_norm, np.finfo(float).tiny) < cfg.eps_adapt else 1.0
        change = float(np.linalg.norm(x_new - x, "fro") ** 2) / denom
        gap = max(float(np.linalg.norm(x_new - y_new, "fro")),
                  float(np.linalg.norm(ay - b - xi))) ** 2 / denom
        x, y = x_new, y_new
        beta = min(cfg.beta_max, rho * beta)
        if change <= cfg.inner_tol and gap <= cfg.inner_tol:
            trace.converged = True
            break
    trace.inner_iters.append(trace.total_inner_iters)
    return project_ball(a, x, b, delta), trace


INNER_SOLVERS = ("admm", "apgl", "admmap")


def _run_inner(name: str, a: LinearMap, b, pair: TruncationPair, cfg: SolverConfig):
    if name == "admm":
        return tnnr_admm(a, b, pair, cfg.delta, cfg)
    if name == "apgl":
        return tnnr_apgl(a, b, pair, cfg.mu, cfg)
    if name == "admmap":
        return tnnr_admmap(a, b, pair, cfg.delta, cfg)
    raise ValueError(f"unknown inner solver {name!r}, expected one of {INNER_SOLVERS}")


def solve_with_rank(a: LinearMap, b, r: int, inner: str = "admm",
                    cfg: SolverConfig | None = None) -> tuple[np.ndarray, StageTrace]:
    """Solve the truncation-rank-r model for a fixed r.

    Starting from the matrix form of b, alternates extracting the truncation
    pair from the current iterate with an inner solve until the squared
    relative change across refits drops below outer_tol. r = 0 is the plain
    nuclear-norm model: its pair does not depend on the iterate, so a single
    inner solve suffices.
    """
    cfg = cfg or SolverConfig()
    b = _as_measurement(b, a.p)
    m, n = a.shape
    if r == 0:
        x, trace = _run_inner(inner, a, b, TruncationPair.empty(m, n), cfg)
        trace.converged = True
        return x, trace
    data = _data_matrix(a, b)
    denom = float(b @ b) or 1.0
    stage_trace = StageTrace(rank=int(r))
    x_l = data
    for l in range(1, cfg.max_refit_iters + 1):
        pair = truncation_pair(x_l, r)
        x_next, t = _run_inner(inner, a, b, pair, cfg)
        stage_trace.absorb(t, l)
        change = float(np.linalg.norm(x_next - x_l, "fro") ** 2) / denom
        stage_trace.l_change.append(change)
        x_l = x_next
        if change <= cfg.outer_tol:
            stage_trace.converged = True
            break
    return x_l, stage_trace


def lrisd(a: LinearMap, b, inner: str = "admm", sve_cfg: SveConfig | None = None,
          cfg: SolverConfig | None = None) -> tuple[np.ndarray, list[StageTrace]]:
    """Multi-stage recovery: rank estimation alternating with inner solves.

    Stage 0 solves the plain nuclear-norm model (empty truncation pair). Each
    later stage estimates the rank from the current recovery's spectrum and
    solves the corresponding fixed-rank model. The outer loop ends when
    consecutive rank estimates agree (sve_cfg.stability of them) or max_outer
    stages have run. sve_cfg.max_outer = 0 yields the nuclear-norm baseline
    through the same code path.
    """
    sve_cfg = sve_cfg or SveConfig()
    cfg = cfg or SolverConfig()
    b = _as_measurement(b, a.p)
    m, n = a.shape
    kappa = sve_cfg.resolve_kappa(m, n) if sve_cfg.max_outer > 0 else None

    def solve(r, stage):
        try:
            return solve_with_rank(a, b, r, inner, cfg)
        except SolverDivergence as e:
            e.trace.stage = stage
            raise SolverDivergence(f"stage {stage}: {e}", e.trace) from e

    x_re, t0 = solve(0, 0)
    t0.stage = 0
    traces = [t0]
    estimates: list[int] = []
    for stage in range(1, sve_cfg.max_outer + 1):
        spectrum = np.linalg.svd(x_re, compute_uv=False)
        profile = estimate_rank(spectrum, kappa)
        estimates.append(profile.r_hat)
        tail = estimates[-sve_cfg.stability:]
        if len(tail) == sve_cfg.stability and len(set(tail)) == 1:
            break
        if stage == 1 and profile.r_hat == 0:
            break  # an empty pair would reproduce stage 0 exactly
        x_re, stage_trace = solve(profile.r_hat, stage)
        stage_trace.stage = stage
        stage_trace.sve = profile
        traces.append(stage_trace)
    return x_re, traces
