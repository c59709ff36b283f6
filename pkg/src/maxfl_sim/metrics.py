"""Evaluation quantities computed on frozen client state."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import models
from .client import ClientProfile, fine_tune
from .core import (LossBasis, ModelParams, RngStream, WeightMode, appeals,
                   neumaier_sum, neumaier_vsum, sigmoid, weight_from_gap)
from .models import ModelSpec

ROUNDS_CSV_COLUMNS = (
    "seed", "t", "algorithm",
    "gm_appeal_seen", "gm_appeal_unseen",
    "avg_acc_seen", "avg_acc_unseen",
    "pref_acc_seen", "pref_acc_unseen",
    "n_participating", "n_eligible", "skipped",
    "grad_norm", "loss_gap",
)


@dataclass
class RoundRecord:
    t: int
    gm_appeal_seen: float = math.nan
    gm_appeal_unseen: float = math.nan
    avg_test_acc_seen: float = math.nan
    avg_test_acc_unseen: float = math.nan
    preferred_acc_seen: float = math.nan
    preferred_acc_unseen: float = math.nan
    n_participating: int = 0
    n_eligible: int = 0
    skipped: bool = False
    grad_norm_proxy: float = math.nan
    loss_gap_diag: float = math.nan

    def csv_row(self, seed: int, algorithm: str) -> list[str]:
        def f(x: float) -> str:
            return "nan" if x != x else repr(float(x))

        return [
            str(seed), str(self.t), algorithm,
            f(self.gm_appeal_seen), f(self.gm_appeal_unseen),
            f(self.avg_test_acc_seen), f(self.avg_test_acc_unseen),
            f(self.preferred_acc_seen), f(self.preferred_acc_unseen),
            str(self.n_participating), str(self.n_eligible), str(int(self.skipped)),
            f(self.grad_norm_proxy), f(self.loss_gap_diag),
        ]

    def as_dict(self) -> dict:
        return asdict(self)


def _split(profile: ClientProfile, basis: LossBasis):
    return profile.dataset.train if LossBasis(basis) is LossBasis.TRAIN else profile.dataset.test


def client_losses(w: ModelParams, profiles: list[ClientProfile], spec: ModelSpec,
                  basis: LossBasis) -> np.ndarray:
    return np.array([models.loss(spec, w, _split(p, basis)) for p in profiles])


def gm_appeal_from_losses(losses, rhos) -> float:
    flags = [appeals(float(l), float(r)) for l, r in zip(losses, rhos)]
    if not flags:
        raise ValueError("gm_appeal needs at least one client")
    return sum(flags) / len(flags)


def gm_appeal(w: ModelParams, profiles: list[ClientProfile], spec: ModelSpec,
              basis: LossBasis = LossBasis.TEST) -> float:
    """Fraction of clients whose loss under ``w`` is strictly below rho_k."""
    losses = client_losses(w, profiles, spec, basis)
    return gm_appeal_from_losses(losses, [p.rho for p in profiles])


def average_test_accuracy(w: ModelParams, profiles: list[ClientProfile], spec: ModelSpec) -> float:
    return float(np.mean([models.accuracy(spec, w, p.dataset.test) for p in profiles]))


def preferred_model_choices(w, profiles, spec, fine_tune_steps=0, eta_l=0.01, b=None,
                            stream: RngStream | None = None) -> list[tuple[bool, float]]:
    """Per client: (global model chosen?, test accuracy of the chosen model)."""
    out = []
    for p in profiles:
        wk = w
        if fine_tune_steps:
            s = (stream or RngStream(0)).child(client=p.id, purpose="finetune")
            wk = fine_tune(p, spec, w, fine_tune_steps, eta_l, b, s)
        use_global = appeals(models.loss(spec, wk, p.dataset.train), p.rho)
        chosen = wk if use_global else p.solo_model
        out.append((use_global, models.accuracy(spec, chosen, p.dataset.test)))
    return out


def preferred_model_accuracy(w, profiles, spec, fine_tune_steps: int = 0, eta_l: float = 0.01,
                             b: int | None = None, stream: RngStream | None = None) -> float:
    choices = preferred_model_choices(w, profiles, spec, fine_tune_steps, eta_l, b, stream)
    return float(np.mean([acc for _, acc in choices]))


def loss_gap_diagnostic(w, profiles, spec) -> float:
    """|mean test loss - mean train loss| across clients."""
    test = client_losses(w, profiles, spec, LossBasis.TEST)
    train = client_losses(w, profiles, spec, LossBasis.TRAIN)
    return abs(float(np.mean(test)) - float(np.mean(train)))


def maxfl_objective(w, profiles, spec) -> float:
    """(1/M) sum_k sigmoid(F_k(w) - rho_k); always inside (0, 1)."""
    gaps = [models.loss(spec, w, p.dataset.train) - p.rho for p in profiles]
    return neumaier_sum(sigmoid(g) for g in gaps) / len(gaps)


def maxfl_gradient(w, profiles, spec, mode: WeightMode = WeightMode.SIGMOID_DERIVATIVE) -> ModelParams:
    parts = []
    for p in profiles:
        data = p.dataset.train
        q = weight_from_gap(models.loss(spec, w, data) - p.rho, mode)
        parts.append(q * models.grad(spec, w, data))
    return neumaier_vsum(parts) / len(profiles)


def maxfl_grad_norm(w, profiles, spec, mode: WeightMode = WeightMode.SIGMOID_DERIVATIVE) -> float:
    return float(np.linalg.norm(maxfl_gradient(w, profiles, spec, mode)))


def dissimilarity_estimate(w, profiles, spec) -> tuple[float, float]:
    """(mean ||grad F_i||^2 / ||mean grad||^2, mean ||grad F_i||^2).

    The ratio is ``inf`` when the mean gradient vanishes.
    """
    grads = [models.grad(spec, w, p.dataset.train) for p in profiles]
    energy = float(np.mean([g @ g for g in grads]))
    mean = neumaier_vsum(grads) / len(grads)
    denom = float(mean @ mean)
    ratio = math.inf if denom == 0.0 else energy / denom
    return ratio, energy


def sign_objective(w, profiles, spec, basis: LossBasis = LossBasis.TEST) -> int:
    """Number of clients the model fails (sign(f_k - rho_k) with sign(0) = 1)."""
    losses = client_losses(w, profiles, spec, basis)
    return int(sum(1 for l, p in zip(losses, profiles) if l - p.rho >= 0))


def margin_objective(w, profiles, spec, basis: LossBasis = LossBasis.TEST) -> float:
    losses = client_losses(w, profiles, spec, basis)
    return float(sum(max(p.rho - l, 0.0) for l, p in zip(losses, profiles)))


def record_fields() -> list[str]:
    return [f.name for f in fields(RoundRecord)]
