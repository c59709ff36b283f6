"""Round orchestration and aggregation rules.

All reductions walk client updates in ascending client id with compensated
summation, so a worker pool cannot change the result.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .client import ClientProfile, ClientUpdate, byzantine_corrupt, evaluate_appeal, local_train
from .core import (ConfigError, LossBasis, ModelParams, RngStream, WeightMode,
                   neumaier_sum, neumaier_vsum)
from .metrics import RoundRecord
from .models import ModelSpec

log = logging.getLogger(__name__)


class AlgorithmKind(str, enum.Enum):
    MAXFL = "maxfl"
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    SCAFFOLD = "scaffold"
    QFFL = "qffl"
    PERFEDAVG_FO = "perfedavg_fo"


@dataclass(frozen=True)
class AggregatorSpec:
    kind: AlgorithmKind = AlgorithmKind.MAXFL
    mode: WeightMode = WeightMode.SIGMOID_DERIVATIVE
    eta_g: float = 1.0
    epsilon: float = 0.01
    mu: float = 0.0  # FedProx proximal strength
    q: float = 0.0  # qFFL fairness exponent
    lr: float = 0.01  # qFFL: 1/L estimate
    alpha: float = 0.01  # PerFedAvg inner step
    tau: int = 10
    eta_l: float = 0.01
    b: int | None = 32

    def __post_init__(self):
        object.__setattr__(self, "kind", AlgorithmKind(self.kind))
        object.__setattr__(self, "mode", WeightMode(self.mode))
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.mu < 0 or self.q < 0:
            raise ConfigError("mu and q must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")


class ParticipationMode(str, enum.Enum):
    ALWAYS_AVAILABLE = "always_available"
    APPEAL_BASED = "appeal_based"


@dataclass(frozen=True)
class ParticipationPolicy:
    mode: ParticipationMode = ParticipationMode.APPEAL_BASED
    mandatory_rounds: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", ParticipationMode(self.mode))
        if self.mandatory_rounds < 0:
            raise ConfigError("mandatory_rounds must be >= 0")

    @staticmethod
    def default_mandatory(T: int) -> int:
        return math.ceil(round(0.05 * T, 9))


@dataclass
class ScaffoldState:
    c: ModelParams
    c_k: dict[int, ModelParams] = field(default_factory=dict)

    def client(self, k: int) -> ModelParams:
        if k not in self.c_k:
            self.c_k[k] = np.zeros_like(self.c)
        return self.c_k[k]


@dataclass(frozen=True)
class ByzantineSpec:
    loss_inflation: float = 10.0
    noise_sigma: float = 0.0


def sample_clients(pool, m: int, stream: RngStream) -> list[int]:
    """Uniform sample of ``min(m, |pool|)`` ids without replacement, sorted."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    pool = sorted(pool)
    if not pool:
        return []
    if len(pool) <= m:
        return pool
    picked = stream.generator().choice(len(pool), size=m, replace=False)
    return sorted(pool[i] for i in picked)


def eligible_pool(profiles: list[ClientProfile], policy: ParticipationPolicy, t: int) -> list[int]:
    """Everyone while participation is mandatory; afterwards only appealed clients.

    Byzantine clients always volunteer.
    """
    if policy.mode is ParticipationMode.ALWAYS_AVAILABLE or t < policy.mandatory_rounds:
        return [p.id for p in profiles]
    return [p.id for p in profiles if p.last_appeal or p.byzantine]


def _valid(updates: list[ClientUpdate]) -> list[ClientUpdate]:
    return sorted((u for u in updates if u.valid), key=lambda u: u.client)


def normalized_weights(updates: list[ClientUpdate], epsilon: float) -> dict[int, float]:
    """``q_k / (sum_S q + epsilon)`` for each valid update."""
    ups = _valid(updates)
    total = neumaier_sum(u.reported_weight for u in ups) + epsilon
    return {u.client: u.reported_weight / total for u in ups}


def aggregate_maxfl(w: ModelParams, updates: list[ClientUpdate], eta_g: float,
                    epsilon: float) -> ModelParams:
    """``w - eta_g / (sum_S q_k + eps) * sum_S q_k delta_k``."""
    ups = _valid(updates)
    if not ups:
        log.warning("no valid updates; model unchanged")
        return w.copy()
    step = eta_g / (neumaier_sum(u.reported_weight for u in ups) + epsilon)
    direction = neumaier_vsum(u.reported_weight * u.delta for u in ups)
    return w - step * direction


def _qfair_step(w: ModelParams, ups: list[ClientUpdate], eta_g: float, q: float, lr: float) -> ModelParams:
    """Sample-size weighted, loss-reweighted average step shared by FedAvg and qFFL.

    With ``q = 0`` every loss factor is exactly 1 and the curvature term
    exactly 0, which is the FedAvg step bit for bit.
    """
    coeffs, denoms = [], []
    for u in ups:
        F = max(u.loss_at_start, 1e-12)
        Fq = F ** q
        extra = q * F ** (q - 1.0) * float(u.delta @ u.delta) / lr if q else 0.0
        coeffs.append(u.n_train * Fq)
        denoms.append(u.n_train * (Fq + extra))
    direction = neumaier_vsum(c * u.delta for c, u in zip(coeffs, ups))
    return w - eta_g * (direction / neumaier_sum(denoms))


def aggregate_baseline(agg: AggregatorSpec, w: ModelParams, updates: list[ClientUpdate],
                       state: ScaffoldState | None = None, n_clients: int | None = None
                       ) -> tuple[ModelParams, ScaffoldState | None]:
    """Server side of the baselines.

    FedAvg/FedProx/PerFedAvgFO: n_k-weighted mean of deltas times eta_g.
    qFFL: deltas reweighted by F_k^q and normalised by the q-fair curvature
    estimate with L = 1/lr. SCAFFOLD: unweighted mean for the model plus the
    option-II control variate refresh (client variates already updated).
    """
    if agg.kind is AlgorithmKind.MAXFL:
        raise ConfigError("use aggregate_maxfl for MaxFL")
    ups = _valid(updates)
    if not ups:
        log.warning("no valid updates; model unchanged")
        return w.copy(), state
    if agg.kind in (AlgorithmKind.FEDAVG, AlgorithmKind.FEDPROX, AlgorithmKind.PERFEDAVG_FO):
        return _qfair_step(w, ups, agg.eta_g, 0.0, agg.lr), state
    if agg.kind is AlgorithmKind.QFFL:
        return _qfair_step(w, ups, agg.eta_g, agg.q, agg.lr), state
    # SCAFFOLD
    if state is None:
        raise ConfigError("SCAFFOLD needs a ScaffoldState")
    mean_delta = neumaier_vsum(u.delta for u in ups) / len(ups)
    new_w = w - agg.eta_g * mean_delta
    dc = []
    for u in ups:
        old = state.client(u.client)
        new = old - state.c + u.delta / (agg.tau * agg.eta_l)
        dc.append(new - old)
        state.c_k[u.client] = new
    M = n_clients if n_clients is not None else len(ups)
    state.c = state.c + (len(ups) / M) * (neumaier_vsum(dc) / len(ups))
    return new_w, state


@dataclass
class ServerState:
    spec: ModelSpec
    agg: AggregatorSpec
    policy: ParticipationPolicy
    w: ModelParams
    profiles: list[ClientProfile]
    m: int
    T: int
    seed: int
    unseen: list[ClientProfile] = field(default_factory=list)
    byzantine: ByzantineSpec = field(default_factory=ByzantineSpec)
    fine_tune_steps: int = 0
    eval_interval: int = 1
    threads: int = 1
    scaffold: ScaffoldState | None = None
    records: list[RoundRecord] = field(default_factory=list)
    weight_log: list[dict[int, tuple[float, float]]] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.m <= len(self.profiles):
            raise ConfigError(f"need 1 <= m <= M, got m={self.m}, M={len(self.profiles)}")
        if self.agg.kind is AlgorithmKind.SCAFFOLD and self.scaffold is None:
            self.scaffold = ScaffoldState(np.zeros_like(self.w))

    @property
    def stream(self) -> RngStream:
        return RngStream(self.seed)


def _client_options(state: ServerState, k: int) -> dict:
    agg = state.agg
    if agg.kind is AlgorithmKind.FEDPROX:
        return {"prox_mu": agg.mu}
    if agg.kind is AlgorithmKind.SCAFFOLD:
        return {"correction": state.scaffold.c - state.scaffold.client(k)}
    if agg.kind is AlgorithmKind.PERFEDAVG_FO:
        return {"inner_alpha": agg.alpha}
    return {}


def _train_one(state: ServerState, k: int, t: int) -> ClientUpdate:
    p = state.profiles[k]
    agg = state.agg
    upd = local_train(p, state.spec, state.w, agg.tau, agg.eta_l, agg.b,
                      state.stream.child(client=k, round=t, purpose="local"), agg.mode,
                      **_client_options(state, k))
    if p.byzantine:
        upd = byzantine_corrupt(upd, state.byzantine.loss_inflation, state.byzantine.noise_sigma,
                                state.stream.child(client=k, round=t, purpose="byzantine"), agg.mode)
    return upd


def evaluate(state: ServerState, rec: RoundRecord) -> RoundRecord:
    spec, w = state.spec, state.w
    s = state.stream.child(round=rec.t)
    honest = state.profiles
    rec.gm_appeal_seen = metrics.gm_appeal(w, honest, spec, LossBasis.TEST)
    if state.unseen:
        rec.gm_appeal_unseen = metrics.gm_appeal(w, state.unseen, spec, LossBasis.TEST)
    if spec.is_classifier:
        rec.avg_test_acc_seen = metrics.average_test_accuracy(w, honest, spec)
        rec.preferred_acc_seen = metrics.preferred_model_accuracy(
            w, honest, spec, state.fine_tune_steps, state.agg.eta_l, state.agg.b, s)
        if state.unseen:
            rec.avg_test_acc_unseen = metrics.average_test_accuracy(w, state.unseen, spec)
            rec.preferred_acc_unseen = metrics.preferred_model_accuracy(
                w, state.unseen, spec, state.fine_tune_steps, state.agg.eta_l, state.agg.b,
                s.child(purpose="unseen"))
    rec.grad_norm_proxy = metrics.maxfl_grad_norm(w, honest, spec, state.agg.mode)
    rec.loss_gap_diag = metrics.loss_gap_diagnostic(w, honest, spec)
    return rec


def run_round(state: ServerState, t: int) -> tuple[ServerState, RoundRecord]:
    """One communication round: gate, sample, train locally, aggregate, evaluate."""
    if not 0 <= t < state.T:
        raise ConfigError(f"round {t} outside [0, {state.T})")
    for p in state.profiles:
        p.last_appeal = evaluate_appeal(p, state.spec, state.w, LossBasis.TRAIN)
    pool = eligible_pool(state.profiles, state.policy, t)
    selected = sample_clients(pool, state.m, state.stream.child(round=t, purpose="sample"))
    rec = RoundRecord(t=t, n_eligible=len(pool))

    if not selected:
        log.info("round %d skipped: no eligible clients", t)
        rec.skipped = True
        state.weight_log.append({})
    else:
        if state.threads > 1:
            with ThreadPoolExecutor(state.threads) as ex:
                updates = list(ex.map(lambda k: _train_one(state, k, t), selected))
        else:
            updates = [_train_one(state, k, t) for k in selected]
        valid = [u for u in updates if u.valid]
        rec.n_participating = len(valid)
        rec.skipped = not valid
        if state.agg.kind is AlgorithmKind.MAXFL:
            norm = normalized_weights(updates, state.agg.epsilon)
            state.weight_log.append({u.client: (u.reported_weight, norm[u.client]) for u in valid})
            state.w = aggregate_maxfl(state.w, updates, state.agg.eta_g, state.agg.epsilon)
        else:
            state.weight_log.append({})
            state.w, state.scaffold = aggregate_baseline(
                state.agg, state.w, updates, state.scaffold, len(state.profiles))

    if (t + 1) % state.eval_interval == 0 or t == state.T - 1:
        evaluate(state, rec)
    state.records.append(rec)
    return state, rec


def run(state: ServerState) -> ServerState:
    for t in range(state.T):
        run_round(state, t)
    return state
