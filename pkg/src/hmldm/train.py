"""Full-batch training, delta sweeps and identifiability-based delta selection."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, TrainTestSplit
from .metrics import DEFAULT_TAU, auc_pr, auc_roc, champion_report, score_pairs
from .model import (
    ModelConfig,
    ModelState,
    NumericalError,
    init_state,
    log_likelihood,
    log_likelihood_and_gradient,
)

log = logging.getLogger(__name__)

# delta**2 values, largest first
DEFAULT_DELTA_SQUARED_GRID = (
    1024.0, 512.0, 256.0, 128.0, 64.0, 32.0, 16.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.125, 0.0625,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    iterations: int = 5000
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    restarts: int = 5
    log_every: int = 100
    deterministic: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.optimizer not in ("adam", "gradient"):
            raise ValueError("optimizer must be 'adam' or 'gradient'")


class TrainingError(RuntimeError):
    """Every restart of a fit failed."""


@dataclass
class RestartResult:
    seed: int
    final_ll: float | None
    iterations: np.ndarray
    raw_trace: np.ndarray
    error: str | None = None


@dataclass
class TrainedModel:
    """Best restart of a fit.

    ``state`` is the best iterate (highest log-likelihood) of the best
    restart. ``trace`` is the running best log-likelihood at each logged
    iteration, so ``best_ll == max(trace)``; ``raw_trace`` holds the
    log-likelihood of the iterate itself.
    """

    state: ModelState
    trace: np.ndarray
    raw_trace: np.ndarray
    iterations: np.ndarray
    best_ll: float
    wall_time: float
    restarts: list[RestartResult] = field(default_factory=list)


class Adam:
    """Adam ascent step on a list of arrays (updated in place)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p += (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class GradientAscent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads) -> None:
        for p, g in zip(params, grads):
            p += self.lr * g


def _restart_seeds(seed: int, restarts: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(restarts)
    return [int(c.generate_state(1)[0]) for c in children]


def _run_one(g: Graph, start: ModelState, tconfig: TrainConfig):
    """Optimise one restart; returns (best state, best ll, logged its, raw trace)."""
    logits = start.logits.copy()
    gamma = start.gamma.copy()
    if tconfig.optimizer == "adam":
        opt = Adam(tconfig.learning_rate, tconfig.beta1, tconfig.beta2, tconfig.eps)
    else:
        opt = GradientAscent(tconfig.learning_rate)

    best_ll = -math.inf
    best = None
    its, raw = [], []
    for it in range(tconfig.iterations + 1):
        current = start.with_params(logits, gamma)
        if it < tconfig.iterations:
            ll, grad = log_likelihood_and_gradient(current, g, tconfig.deterministic)
            if not (np.isfinite(grad.logits).all() and np.isfinite(grad.gamma).all()):
                raise NumericalError((-1, -1), float("nan"))
        else:
            ll = log_likelihood(current, g, tconfig.deterministic)
        if ll > best_ll:
            best_ll = ll
            best = (logits.copy(), gamma.copy())
        if it % tconfig.log_every == 0 or it == tconfig.iterations:
            its.append(it)
            raw.append(ll)
        if it < tconfig.iterations:
            opt.step([logits, gamma], [grad.logits, grad.gamma])
    return start.with_params(*best), best_ll, np.array(its), np.array(raw)


def fit(
    g: Graph,
    mconfig: ModelConfig,
    tconfig: TrainConfig | None = None,
    init: ModelState | None = None,
) -> TrainedModel:
    """Maximise the log-likelihood from ``restarts`` seeded initialisations.

    Restarts that hit a non-finite value are dropped (their error is kept in
    ``restarts``); the restart with the highest log-likelihood wins. ``init``
    replaces the random initialisation of the first restart (warm start).
    """
    tconfig = tconfig or TrainConfig()
    if g.n_edges == 0:
        raise ValueError("cannot fit a graph without edges")
    t0 = time.perf_counter()
    results: list[RestartResult] = []
    best = None
    for r, seed in enumerate(_restart_seeds(mconfig.seed, tconfig.restarts)):
        if r == 0 and init is not None:
            start = ModelState(init.logits, init.gamma, mconfig, init.n_rows)
        else:
            start = init_state(mconfig, g.n_nodes, seed=seed, graph=g)
        try:
            state, ll, its, raw = _run_one(g, start, tconfig)
        except (NumericalError, FloatingPointError) as exc:
            log.warning("restart %d (seed %d) aborted: %s", r, seed, exc)
            results.append(RestartResult(seed, None, np.empty(0), np.empty(0), str(exc)))
            continue
        log.info("restart %d: ll=%.6f", r, ll)
        results.append(RestartResult(seed, ll, its, raw))
        if best is None or ll > best[1]:
            best = (state, ll, its, raw)
    if best is None:
        raise TrainingError(
            "all restarts failed: " + "; ".join(r.error or "" for r in results)
        )
    state, ll, its, raw = best
    state.metadata = {
        "iterations": tconfig.iterations,
        "final_ll": ll,
        "seed": mconfig.seed,
        "restarts": tconfig.restarts,
    }
    trace = np.maximum.accumulate(raw)
    # the best iterate may fall between logged iterations
    trace[-1] = ll
    return TrainedModel(
        state=state,
        trace=trace,
        raw_trace=raw,
        iterations=its,
        best_ll=ll,
        wall_time=time.perf_counter() - t0,
        restarts=results,
    )


# --------------------------------------------------------------------------
# delta sweep


@dataclass
class SweepRecord:
    delta: float
    champion_fraction: float | None
    identifiable: bool
    final_ll: float | None
    auc_roc: float | None = None
    auc_pr: float | None = None
    error: str | None = None

    @property
    def delta_squared(self) -> float:
        return self.delta**2

    def to_row(self) -> dict:
        return {
            "delta": self.delta,
            "delta_squared": self.delta_squared,
            "champion_fraction": self.champion_fraction,
            "identifiable": self.identifiable,
            "final_ll": self.final_ll,
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "error": self.error,
        }


def evaluate_split(state: ModelState, split: TrainTestSplit) -> tuple[float | None, float | None]:
    """AUC-ROC and AUC-PR of held-out positives against sampled negatives."""
    if len(split.test_positives) == 0 or len(split.test_negatives) == 0:
        return None, None
    pos = score_pairs(state, split.test_positives).scores
    neg = score_pairs(state, split.test_negatives, "negative").scores
    return auc_roc(pos, neg), auc_pr(pos, neg)


def sweep_delta(
    data: Graph | TrainTestSplit,
    mconfig: ModelConfig,
    tconfig: TrainConfig | None = None,
    delta_grid=None,
    tau: float = DEFAULT_TAU,
    warm_start: bool = False,
    keep_models: bool = False,
    stop_at_identifiable: bool = False,
):
    """Fit one model per delta (largest first) and record diagnostics.

    ``delta_grid`` holds delta values; the default is the square root of
    :data:`DEFAULT_DELTA_SQUARED_GRID`. When ``data`` is a split, the model is
    trained on the residual graph and scored on the held-out pairs. A failing
    fit yields a record carrying the error instead of stopping the sweep.

    With ``keep_models`` the fitted models are returned alongside the records.
    ``stop_at_identifiable`` ends the sweep at the first identifiable delta,
    which is all :func:`auto_select_identifiable` needs.
    """
    if delta_grid is None:
        delta_grid = [math.sqrt(d2) for d2 in DEFAULT_DELTA_SQUARED_GRID]
    grid = [float(d) for d in delta_grid]
    if not grid or any(not (d > 0 and math.isfinite(d)) for d in grid):
        raise ValueError("delta grid must be non-empty and strictly positive")
    grid = sorted(grid, reverse=True)
    split = data if isinstance(data, TrainTestSplit) else None
    g = split.train if split is not None else data

    records, models = [], []
    prev = None
    for delta in grid:
        cfg = mconfig.replace(delta=delta)
        try:
            model = fit(g, cfg, tconfig, init=prev if warm_start else None)
        except (TrainingError, ValueError) as exc:
            records.append(SweepRecord(delta, None, False, None, error=str(exc)))
            models.append(None)
            continue
        report = champion_report(model.state, tau)
        roc = pr = None
        if split is not None:
            roc, pr = evaluate_split(model.state, split)
        records.append(
            SweepRecord(delta, report.champion_fraction, report.identifiable, model.best_ll, roc, pr)
        )
        models.append(model)
        prev = model.state
        if stop_at_identifiable and report.identifiable:
            break
    return (records, models) if keep_models else records


def auto_select_identifiable(records) -> SweepRecord:
    """First record, scanning from the largest delta down, that is identifiable."""
    ordered = sorted(records, key=lambda r: r.delta, reverse=True)
    for rec in ordered:
        if rec.identifiable:
            return rec
    raise ValueError(
        "no identifiable delta in the sweep; extend the grid towards smaller delta "
        "or refine it"
    )
