"""Seeded Monte Carlo campaigns and their CSV/JSON outputs."""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_driven import ExplorationPolicy, LearningConfig, run_learning
from .dual_loop import (
    INNER_EARLY_STOP,
    DisturbanceSpec,
    DualLoopConfig,
    IterationTrace,
    OuterRecord,
    measure_rates,
    relative_errors,
    run,
    write_traces_csv,
)
from .errors import RiskPOError, StageError
from .game_oracle import solve_gare_value_iteration
from .models import cartpole_model, illustrative_model
from .plant import PlantModel, hinf_norm
from .sysid_init import find_initial_gain_for_model, learn_initial_controller

__all__ = [
    "MODES",
    "ExperimentConfig",
    "ConfigError",
    "TrialResult",
    "CampaignResult",
    "BUILTIN_CONFIGS",
    "builtin_config",
    "load_config",
    "run_campaign",
    "emit",
    "aggregate_traces",
    "read_aggregates",
]

MODES = ("exact", "disturbed", "learn", "sysid", "oracle")
METRICS = ("rel_err_K", "rel_err_P", "hinf")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    model: PlantModel
    mode: str = "exact"
    name: str = "custom"
    trials: int = 1
    master_seed: int = 0
    outer_iters: int = 10
    inner_iters: int = 20
    delta_K: float = 0.0
    delta_L: float = 0.0
    tau: int = None
    sigma1: float = 1.0
    sigma2: float = 1.0
    output: str = None
    K_init: np.ndarray = None
    verbose_inner: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1")
        if not (0 <= self.master_seed < 2**64):
            raise ConfigError("master_seed must fit in 64 bits")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ConfigError("outer_iters and inner_iters must be >= 1")
        if self.mode == "disturbed" and not (self.delta_K > 0 or self.delta_L > 0):
            raise ConfigError("disturbed mode needs delta_K or delta_L > 0")
        if min(self.delta_K, self.delta_L) < 0:
            raise ConfigError("disturbance magnitudes must be >= 0")
        if self.mode in ("learn", "sysid"):
            if self.tau is None or self.tau < 1:
                raise ConfigError(f"{self.mode} mode needs tau >= 1")
            if not (self.sigma1 > 0 and self.sigma2 > 0):
                raise ConfigError("sigma1 and sigma2 must be positive")
        if self.K_init is not None:
            K = np.asarray(self.K_init, dtype=float)
            if K.shape != (self.model.m, self.model.n):
                raise ConfigError(f"K_init must be {self.model.m}x{self.model.n}")
        return self

    def replace(self, **changes):
        d = dict(self.__dict__)
        d.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(**d)

    def to_dict(self):
        d = dict(self.__dict__)
        d["model"] = self.model.to_dict()
        d["K_init"] = None if self.K_init is None else np.asarray(self.K_init).tolist()
        return d

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in payload:
            raise ConfigError("config needs a model payload")
        try:
            payload["model"] = PlantModel.from_dict(payload["model"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad model payload: {exc}") from exc
        if payload.get("K_init") is not None:
            payload["K_init"] = np.array(payload["K_init"], dtype=float)
        return cls(**payload).validate()


def _illustrative(mode):
    base = dict(model=illustrative_model(), outer_iters=10, inner_iters=20, sigma1=1.0, sigma2=1.0)
    return {
        "exact": dict(base, trials=1, verbose_inner=True),
        "disturbed": dict(base, trials=50, delta_K=0.09, delta_L=0.09),
        "learn": dict(base, trials=50, tau=5000),
        "sysid": dict(base, trials=50, tau=10000),
        "oracle": dict(base),
    }[mode]


def _cartpole(mode):
    base = dict(model=cartpole_model(), outer_iters=10, inner_iters=20, sigma1=20.0, sigma2=20.0)
    return {
        "exact": dict(base, trials=1, verbose_inner=True),
        "disturbed": dict(base, trials=50, delta_K=0.7, delta_L=0.1),
        "learn": dict(base, trials=50, tau=10000),
        "sysid": dict(base, trials=50, tau=10000),
        "oracle": dict(base),
    }[mode]


BUILTIN_CONFIGS = {
    f"{model}-{mode}": (factory, mode)
    for model, factory in (("illustrative", _illustrative), ("cartpole", _cartpole))
    for mode in MODES
}


def builtin_config(name):
    try:
        factory, mode = BUILTIN_CONFIGS[name]
    except KeyError:
        raise ConfigError(f"unknown built-in config {name!r}; choose from {sorted(BUILTIN_CONFIGS)}") from None
    return ExperimentConfig(mode=mode, name=name, **factory(mode)).validate()


def load_config(source):
    """A built-in config name or a path to a JSON config file."""
    if source in BUILTIN_CONFIGS:
        return builtin_config(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {source} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(payload)


@dataclass
class TrialResult:
    trial: int
    seed: int
    trace: IterationTrace = None
    failed: bool = False
    stage: str = None
    message: str = None
    extra: dict = field(default_factory=dict)


@dataclass
class CampaignResult:
    config: ExperimentConfig
    trials: list
    reference: object = None
    K_init: np.ndarray = None
    rates: tuple = None

    @property
    def succeeded(self):
        return [t for t in self.trials if not t.failed and t.trace is not None]

    @property
    def failures(self):
        return [t for t in self.trials if t.failed]

    @property
    def outer_iters(self):
        # an identification trial yields a single gain
        return 1 if self.config.mode == "sysid" else self.config.outer_iters

    def aggregate(self):
        return aggregate_traces([(t.trial, t.trace) for t in self.succeeded], self.outer_iters)


def aggregate_traces(traces, outer_iters):
    """Mean and population variance of each metric per outer step.

    Only traces with all ``outer_iters`` records contribute; NaNs are ignored.
    """
    full = [tr for _, tr in traces if len(tr.records) == outer_iters]
    out = {"i": np.arange(1, outer_iters + 1), "n_trials": len(full)}
    for metric in METRICS:
        if full:
            data = np.array([[getattr(r, metric) for r in tr.records] for tr in full], dtype=float)
            with np.errstate(all="ignore"):
                valid = ~np.isnan(data)
                count = valid.sum(axis=0)
                filled = np.where(valid, data, 0.0)
                mean = np.where(count > 0, filled.sum(axis=0) / np.maximum(count, 1), np.nan)
                var = np.where(
                    count > 0,
                    np.where(valid, (data - mean) ** 2, 0.0).sum(axis=0) / np.maximum(count, 1),
                    np.nan,
                )
        else:
            mean = var = np.full(outer_iters, np.nan)
        out[f"{metric}_mean"] = mean
        out[f"{metric}_var"] = var
    return out


def _seed(config, index):
    return (config.master_seed + index) % 2**64


def _run_trial(config, index, reference, K_init):
    seed = _seed(config, index)
    model = config.model
    try:
        if config.mode in ("exact", "disturbed"):
            dl = DualLoopConfig(
                outer_iters=config.outer_iters,
                inner_iters=config.inner_iters,
                K_init=K_init,
                disturbance_K=DisturbanceSpec(config.delta_K) if config.mode == "disturbed" else None,
                disturbance_L=DisturbanceSpec(config.delta_L) if config.mode == "disturbed" else None,
                rng_seed=seed,
                verbose_inner=config.verbose_inner,
                inner_tol=0.0 if config.verbose_inner else INNER_EARLY_STOP,
            )
            trace = run(model, dl, reference=reference)
            return TrialResult(index, seed, trace, trace.failed, "dual_loop" if trace.failed else None, trace.failure)
        if config.mode == "learn":
            policy = ExplorationPolicy.for_model(model, K_init, config.sigma1, config.sigma2)
            lc = LearningConfig(config.outer_iters, config.inner_iters, config.tau, K_init=K_init, rng_seed=seed)
            trace = run_learning(model, policy, lc, reference=reference)
            return TrialResult(
                index, seed, trace, trace.failed, "learn" if trace.failed else None, trace.failure,
                extra={"buffer_digest": trace.buffer_digest},
            )
        if config.mode == "sysid":
            policy = ExplorationPolicy.for_model(model, K_init, config.sigma1, config.sigma2)
            ic = learn_initial_controller(model, policy, config.tau, np.random.default_rng(seed))
            K = ic.K
            P = ic.admissibility.certificate
            err_K, err_P = relative_errors(K, P if P is not None else np.full((model.n, model.n), np.nan), reference)
            try:
                h = hinf_norm(model, K)
            except RiskPOError:
                h = float("inf")
            trace = IterationTrace(1, 0)
            trace.records.append(
                OuterRecord(i=1, K=K, P=P, rel_err_K=err_K, rel_err_P=err_P, hinf=h,
                            admissible=ic.admissible, inner_steps=0)
            )
            return TrialResult(
                index, seed, trace, extra={
                    "admissible": ic.admissible,
                    "residual_norm": ic.identified.residual_norm,
                    "lmi_margin": ic.lmi.margin,
                    "lmi_retries": ic.lmi.retries,
                },
            )
    except StageError as exc:
        return TrialResult(index, seed, None, True, exc.stage, str(exc.cause))
    except (RiskPOError, np.linalg.LinAlgError, ValueError) as exc:
        return TrialResult(index, seed, None, True, config.mode, str(exc))
    raise ConfigError(f"mode {config.mode!r} has no trials")


def _worker(args):
    return _run_trial(*args)


def run_campaign(config, jobs=1):
    """Run ``config.trials`` independent trials with seeds ``master_seed + index``.

    The game solution (for relative errors) and the initial gain are
    computed once. Results are ordered by trial index whatever ``jobs`` is.
    """
    config.validate()
    if config.mode == "oracle":
        raise ConfigError("oracle mode is a single solve, use solve_gare_value_iteration")
    model = config.model
    reference = solve_gare_value_iteration(model)
    K_init = config.K_init if config.K_init is not None else find_initial_gain_for_model(model).K
    K_init = np.asarray(K_init, dtype=float)
    tasks = [(config, k, reference, K_init) for k in range(config.trials)]
    if jobs and jobs > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_worker, tasks))
    else:
        trials = [_worker(t) for t in tasks]
    result = CampaignResult(config, trials, reference, K_init)
    if config.mode == "exact" and config.verbose_inner and result.succeeded:
        result.rates = measure_rates(result.succeeded[0].trace, reference.P_star, model=model)
    return result


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _summary(result):
    cfg = result.config
    agg = result.aggregate()
    ok = result.succeeded
    summary = {
        "name": cfg.name,
        "mode": cfg.mode,
        "trials": cfg.trials,
        "master_seed": cfg.master_seed,
        "succeeded": len(ok),
        "failed": len(result.failures),
        "failures": [
            {"trial": t.trial, "seed": t.seed, "stage": t.stage, "message": t.message}
            for t in result.failures
        ],
        "final": {
            m: {"mean": _finite(agg[f"{m}_mean"][-1]), "var": _finite(agg[f"{m}_var"][-1])}
            for m in METRICS
        },
        "gamma": cfg.model.gamma,
        "K_init": result.K_init.tolist(),
        "K_star": result.reference.K_star.tolist(),
        "P_star": result.reference.P_star.tolist(),
    }
    steps = [r for t in result.trials if t.trace is not None for r in t.trace.records]
    if steps:
        summary["hinf_below_gamma_fraction"] = float(np.mean([r.hinf < cfg.model.gamma for r in steps]))
        summary["max_hinf"] = _finite(max(r.hinf for r in steps))
    if result.rates is not None:
        alpha, betas = result.rates
        summary["alpha_hat"] = alpha
        summary["beta_hats"] = [float(b) for b in betas]
    if cfg.mode == "sysid":
        flags = [t.extra.get("admissible", False) for t in result.trials]
        summary["admissible_fraction"] = float(np.mean(flags))
    if cfg.mode == "learn":
        summary["buffer_digests"] = [t.extra.get("buffer_digest") for t in result.trials]
    return summary


def emit(result, path):
    """Write ``traces.csv``, ``aggregate.csv`` and ``summary.json`` into directory ``path``.

    Raises
    ------
    ValueError
        If the result holds no trials.
    OSError
        If the directory cannot be created or written.
    """
    if not result.trials:
        raise ValueError("refusing to emit an empty trial set")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    write_traces_csv([(t.trial, t.trace) for t in result.trials if t.trace is not None], out / "traces.csv")
    agg = result.aggregate()
    _write_aggregate(agg, out / "aggregate.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(_summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [out / "traces.csv", out / "aggregate.csv", out / "summary.json"]


AGGREGATE_COLUMNS = ("i",) + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "var")) + ("n_trials",)


def _write_aggregate(agg, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for k, i in enumerate(agg["i"]):
            row = [str(int(i))]
            row += [repr(float(agg[c][k])) for c in AGGREGATE_COLUMNS[1:-1]]
            row.append(str(agg["n_trials"]))
            writer.writerow(row)


def read_aggregates(path):
    """Recompute the aggregates from an emitted directory's ``traces.csv``.

    Uses the outer-step row (last row per ``(trial, i)``) of every trial not
    listed as failed in ``summary.json``.
    """
    out = Path(path)
    summary = json.loads((out / "summary.json").read_text())
    failed = {f["trial"] for f in summary["failures"]}
    outer_iters = len(np.atleast_1d(_read_csv_column(out / "aggregate.csv", "i")))
    rows = {}
    with open(out / "traces.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            trial = int(row["trial"])
            if trial in failed:
                continue
            rows.setdefault(trial, {})[int(row["i"])] = row
    traces = []
    for trial in sorted(rows):
        tr = IterationTrace(outer_iters, 0)
        for i in sorted(rows[trial]):
            row = rows[trial][i]
            tr.records.append(
                OuterRecord(i=i, K=None, P=None, rel_err_K=float(row["rel_err_K"]),
                            rel_err_P=float(row["rel_err_P"]), hinf=float(row["hinf"]),
                            admissible=row["admissible"] == "1", inner_steps=int(row["j"]))
            )
        traces.append((trial, tr))
    return aggregate_traces(traces, outer_iters)


def _read_csv_column(path, name):
    with open(path, newline="") as fh:
        return [row[name] for row in csv.DictReader(fh)]
