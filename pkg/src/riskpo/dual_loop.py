"""Model-based dual-loop policy optimization, exact or with injected gain errors.

The inner loop finds the adversary's worst-case gain for a fixed minimizer
gain ``K`` by policy iteration on ``L``; the outer loop improves ``K`` from
the truncated inner value. Disturbances, when configured, are added to every
``L`` and ``K`` update with a fixed Frobenius norm.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import matrix_kit as mk
from .errors import NotAdmissibleError, RiskInfeasibleError, RiskPOError
from .game_oracle import _gain_from_u, evaluate_policy, solve_gare_value_iteration, u_of_p
from .plant import hinf_norm, is_admissible

__all__ = [
    "DisturbanceSpec",
    "DualLoopConfig",
    "InnerRecord",
    "InnerResult",
    "OuterRecord",
    "IterationTrace",
    "TRACE_COLUMNS",
    "relative_errors",
    "inner_loop",
    "outer_step",
    "run",
    "measure_rates",
    "write_traces_csv",
]

TRACE_COLUMNS = ("trial", "i", "j", "rel_err_K", "rel_err_P", "hinf", "admissible")
INNER_EARLY_STOP = 1e-12


@dataclass(frozen=True)
class DisturbanceSpec:
    """Entrywise standard Gaussian matrix rescaled to Frobenius norm ``magnitude``."""

    magnitude: float

    def __post_init__(self):
        if not np.isfinite(self.magnitude) or self.magnitude < 0:
            raise ValueError("disturbance magnitude must be finite and >= 0")

    def draw(self, shape, rng):
        # always consume the draw so streams do not depend on the magnitude
        g = rng.standard_normal(shape)
        norm = np.linalg.norm(g)
        if self.magnitude == 0.0 or norm == 0.0:
            return np.zeros(shape)
        return g * (self.magnitude / norm)


@dataclass
class DualLoopConfig:
    """Iteration counts, initial gain and optional disturbances.

    ``inner_tol`` stops an undisturbed inner loop early once the relative
    change of ``P`` drops below it; set it to 0 to always run ``inner_iters``.
    """

    outer_iters: int = 10
    inner_iters: int = 20
    K_init: np.ndarray = None
    disturbance_K: DisturbanceSpec = None
    disturbance_L: DisturbanceSpec = None
    rng_seed: int = 0
    verbose_inner: bool = False
    inner_tol: float = INNER_EARLY_STOP
    compute_hinf: bool = True

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("outer_iters and inner_iters must be >= 1")
        if self.K_init is None:
            raise ValueError("K_init is required")
        self.K_init = np.array(self.K_init, dtype=float)

    @property
    def exact(self):
        return self.disturbance_K is None and self.disturbance_L is None

    def validate(self, model):
        if self.K_init.shape != (model.m, model.n):
            raise ValueError(f"K_init must be {model.m}x{model.n}, got {self.K_init.shape}")
        adm = is_admissible(model, self.K_init)
        if not adm:
            raise ValueError(f"K_init is not admissible ({adm.reason})")


@dataclass
class InnerRecord:
    j: int
    L: np.ndarray
    P: np.ndarray


@dataclass
class InnerResult:
    """Output of :func:`inner_loop`; ``status`` is ``None`` on success."""

    P: np.ndarray
    L_next: np.ndarray
    steps: int
    records: list = field(default_factory=list, repr=False)
    status: str = None


@dataclass
class OuterRecord:
    i: int
    K: np.ndarray
    P: np.ndarray
    rel_err_K: float
    rel_err_P: float
    hinf: float
    admissible: bool
    inner_steps: int
    inner: list = field(default_factory=list, repr=False)


@dataclass
class IterationTrace:
    """Per-outer-step records; ``failed`` marks a truncated run."""

    outer_iters: int
    inner_iters: int
    records: list = field(default_factory=list)
    failed: bool = False
    failure: str = None
    buffer_digest: str = None

    def fail(self, reason):
        self.failed = True
        self.failure = reason

    def __len__(self):
        return len(self.records)

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def rows(self, trial=0):
        """CSV rows; inner steps appear only when they were recorded."""
        out = []
        for r in self.records:
            if r.inner:
                for rec in r.inner[:-1]:
                    out.append((trial, r.i, rec.j, r.rel_err_K, np.nan, r.hinf, r.admissible))
            out.append((trial, r.i, r.inner_steps, r.rel_err_K, r.rel_err_P, r.hinf, r.admissible))
        return out


def _format(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(v)
    return repr(float(v))


def write_traces_csv(traces, path):
    """Write ``(trial, trace)`` pairs with the fixed column order of ``TRACE_COLUMNS``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for trial, trace in traces:
            for row in trace.rows(trial):
                writer.writerow([_format(v) for v in row])


def relative_errors(K, P, reference):
    err_K = np.linalg.norm(K - reference.K_star) / np.linalg.norm(reference.K_star)
    err_P = np.linalg.norm(P - reference.P_star) / np.linalg.norm(reference.P_star)
    return float(err_K), float(err_P)


def inner_loop(model, K, inner_iters, disturbance_L=None, rng=None, tol=0.0, record=False):
    """Worst-case policy iteration for fixed ``K`` starting from ``L = 0``.

    A failure (unstable ``A - BK + DL`` or ``gamma^2 I - D^T P D`` losing
    definiteness) truncates the loop without raising: ``status`` explains it
    and ``P`` is the last valid iterate, or ``None``.

    With ``tol > 0`` and no disturbance the loop stops once the relative
    change of ``P`` is below ``tol``.
    """
    K = np.asarray(K, dtype=float)
    A_K = model.closed_loop(K)
    Q_K = model.stage_weight(K)
    D = model.D
    g2 = model.gamma**2
    L = np.zeros((model.q, model.n))
    P = None
    records = []
    for j in range(1, inner_iters + 1):
        A_L = A_K + D @ L
        if not mk.is_stable(A_L):
            return InnerResult(P, L, j - 1, records, f"unstable inner closed loop at j={j}")
        try:
            P_new = mk.solve_dlyap(A_L, Q_K - g2 * L.T @ L)
        except RiskPOError as exc:
            return InnerResult(P, L, j - 1, records, f"inner solve failed at j={j}: {exc}")
        H = g2 * np.eye(model.q) - D.T @ P_new @ D
        if not mk.is_pd(H, 1e-9):
            return InnerResult(P, L, j - 1, records, f"risk matrix lost definiteness at j={j}")
        if record:
            records.append(InnerRecord(j, L, P_new))
        L = np.linalg.solve(H, D.T @ P_new @ A_K)
        if disturbance_L is not None:
            L = L + disturbance_L.draw(L.shape, rng)
        converged = P is not None and np.linalg.norm(P_new - P) <= tol * np.linalg.norm(P_new)
        P = P_new
        if disturbance_L is None and converged:
            break
    return InnerResult(P, L, j, records)


def outer_step(model, P, disturbance_K=None, rng=None):
    """``K' = (R + B^T U B)^{-1} B^T U A + dK`` with ``U = U(P)``."""
    U = u_of_p(model, P)
    K = _gain_from_u(model, U)
    if disturbance_K is not None:
        K = K + disturbance_K.draw(K.shape, rng)
    return K


def _score(model, K, compute_hinf):
    if not mk.is_stable(model.closed_loop(K)):
        return float("inf"), False
    if not compute_hinf:
        return float("nan"), bool(is_admissible(model, K))
    h = hinf_norm(model, K)
    return h, bool(h < model.gamma)


def run(model, config, reference=None):
    """Run ``outer_iters`` outer steps of ``inner_iters`` inner steps each.

    ``reference`` is the game solution used for the relative errors; it is
    computed by value iteration when omitted. In exact mode every iterate
    is checked to stay admissible.

    Raises
    ------
    ValueError
        If ``config.K_init`` is not admissible.
    NotAdmissibleError
        If an undisturbed run leaves the admissible set.
    """
    config.validate(model)
    if reference is None:
        reference = solve_gare_value_iteration(model)
    rng = np.random.default_rng(config.rng_seed)
    trace = IterationTrace(config.outer_iters, config.inner_iters)
    K = config.K_init
    inner_tol = config.inner_tol if config.exact else 0.0
    for i in range(1, config.outer_iters + 1):
        res = inner_loop(
            model, K, config.inner_iters, config.disturbance_L, rng,
            tol=inner_tol, record=config.verbose_inner,
        )
        if res.status is not None:
            trace.fail(f"outer step {i}: {res.status}")
        if res.P is None:
            break
        P = res.P
        err_K, err_P = relative_errors(K, P, reference)
        hinf, admissible = _score(model, K, config.compute_hinf)
        if config.exact and not admissible:
            raise NotAdmissibleError(f"exact iterate {i} left the admissible set")
        trace.records.append(
            OuterRecord(i=i, K=K, P=P, rel_err_K=err_K, rel_err_P=err_P, hinf=hinf,
                        admissible=admissible, inner_steps=res.steps, inner=res.records)
        )
        if trace.failed or i == config.outer_iters:
            break
        try:
            K = outer_step(model, P, config.disturbance_K, rng)
        except RiskInfeasibleError as exc:
            trace.fail(f"outer update after step {i}: {exc}")
            break
    return trace


def measure_rates(trace, P_star, model=None, rel_floor=1e-9):
    """Empirical linear rates of the outer and inner loops.

    ``alpha_hat`` is the largest ratio ``Tr(P_{i+1} - P*) / Tr(P_i - P*)``
    over outer steps. ``beta_hats[i]`` is the largest inner ratio
    ``Tr(P_i - P_{i,j+1}) / Tr(P_i - P_{i,j})``, where ``P_i`` is the exact
    policy cost (from ``model`` when given, else the last inner iterate).
    Ratios whose denominator is below ``rel_floor * Tr(P*)`` (or 1e-12) are
    skipped as roundoff; an all-skipped rate is reported as 0.
    """
    P_star = np.asarray(P_star, dtype=float)
    floor = max(1e-12, rel_floor * np.trace(P_star))
    gaps = [np.trace(r.P - P_star) for r in trace.records]
    alpha = 0.0
    for a, b in zip(gaps[:-1], gaps[1:]):
        if a > floor:
            alpha = max(alpha, b / a)
    betas = []
    for r in trace.records:
        if not r.inner:
            continue
        P_i = evaluate_policy(model, r.K) if model is not None else r.inner[-1].P
        inner_gaps = [np.trace(P_i - rec.P) for rec in r.inner]
        beta = 0.0
        for a, b in zip(inner_gaps[:-1], inner_gaps[1:]):
            if a > floor:
                beta = max(beta, b / a)
        betas.append(beta)
    return float(alpha), np.array(betas)
