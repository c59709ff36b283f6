"""Per-client work: warm-up solo training, local SGD, reporting and attacks."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from . import models
from .core import (ConfigError, LossBasis, ModelParams, RngStream, WeightMode,
                   appeals, check_finite, weight_from_gap)
from .data import ClientDataset
from .models import Batch, ModelSpec

log = logging.getLogger(__name__)


class Participation(str, enum.Enum):
    MANDATORY = "mandatory"
    APPEAL_BASED = "appeal_based"


@dataclass
class ClientProfile:
    id: int
    dataset: ClientDataset
    byzantine: bool = False
    participation: Participation = Participation.APPEAL_BASED
    last_appeal: bool = False
    _rho: float | None = None
    _solo_model: ModelParams | None = None

    @property
    def rho(self) -> float:
        if self._rho is None:
            raise RuntimeError(f"client {self.id} has not run warm-up yet")
        return self._rho

    @property
    def solo_model(self) -> ModelParams:
        if self._solo_model is None:
            raise RuntimeError(f"client {self.id} has not run warm-up yet")
        return self._solo_model

    @property
    def warmed_up(self) -> bool:
        return self._rho is not None

    def set_requirement(self, solo_model: ModelParams, rho: float) -> None:
        if self._rho is not None:
            raise RuntimeError(f"client {self.id}: requirement is frozen after warm-up")
        solo_model = np.array(solo_model, dtype=np.float64)
        solo_model.setflags(write=False)
        self._solo_model = solo_model
        self._rho = float(rho)


@dataclass
class ClientUpdate:
    client: int
    delta: ModelParams  # w_start - w_end
    reported_weight: float
    gap: float  # honest F_k(w_start) - rho_k
    loss_at_start: float
    n_train: int
    participated: bool = True
    valid: bool = True


def sample_batch(data: Batch, b: int | None, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement; ``b=None`` returns the full split."""
    if b is None:
        return data
    return data.take(rng.integers(0, data.size, size=b))


def sgd(spec: ModelSpec, w: ModelParams, data: Batch, steps: int, eta: float,
        b: int | None, rng: np.random.Generator, *, anchor: ModelParams | None = None,
        prox_mu: float = 0.0, correction: ModelParams | None = None,
        inner_alpha: float | None = None) -> ModelParams:
    """Plain SGD with optional proximal, drift-correction and first-order MAML terms."""
    w = np.array(w, dtype=np.float64)
    for _ in range(steps):
        if inner_alpha is not None:
            adapted = w - inner_alpha * models.grad(spec, w, sample_batch(data, b, rng))
            g = models.grad(spec, adapted, sample_batch(data, b, rng))
        else:
            g = models.grad(spec, w, sample_batch(data, b, rng))
        if anchor is not None:
            g = g + prox_mu * (w - anchor)
        if correction is not None:
            g = g + correction
        w = w - eta * g
    return w


def warmup(profile: ClientProfile, spec: ModelSpec, tau_warm: int, eta_l: float,
           b: int | None, stream: RngStream) -> ClientProfile:
    """Solo-train from a fresh init; freeze the model and its train loss as rho."""
    if tau_warm < 1:
        raise ConfigError("warm-up needs at least one SGD step")
    if profile.warmed_up:
        raise RuntimeError(f"client {profile.id} already warmed up")
    s = stream.child(client=profile.id, round=-1)
    w0 = models.init_params(spec, s.child(purpose="init"))
    w = sgd(spec, w0, profile.dataset.train, tau_warm, eta_l, b, s.child(purpose="warmup").generator())
    profile.set_requirement(w, models.loss(spec, w, profile.dataset.train))
    return profile


def appeal_gap(profile: ClientProfile, spec: ModelSpec, w: ModelParams) -> float:
    return models.loss(spec, w, profile.dataset.train) - profile.rho


def local_train(profile: ClientProfile, spec: ModelSpec, w0: ModelParams, tau: int,
                eta_l: float, b: int | None, stream: RngStream,
                mode: WeightMode = WeightMode.SIGMOID_DERIVATIVE, **sgd_options) -> ClientUpdate:
    """Run ``tau`` local steps from ``w0`` and report ``(w0 - w_tau, q_k)``.

    The weight is computed once, at ``w0``, from the full training split.
    ``sgd_options`` carries baseline-specific terms (``prox_mu``,
    ``correction``, ``inner_alpha``); ``anchor`` is set to ``w0``.
    """
    data = profile.dataset.train
    start_loss = models.loss(spec, w0, data)
    gap = start_loss - profile.rho
    weight = weight_from_gap(gap, mode) if np.isfinite(gap) else 0.0
    with np.errstate(all="ignore"):
        w = sgd(spec, w0, data, tau, eta_l, b, stream.generator(), anchor=w0, **sgd_options)
        delta = w0 - w
    valid = check_finite(delta) and np.isfinite(start_loss)
    if not valid:
        log.warning("client %d diverged; update dropped", profile.id)
    return ClientUpdate(profile.id, delta, weight, gap, start_loss, data.size, True, valid)


def byzantine_corrupt(update: ClientUpdate, loss_inflation: float, noise_sigma: float,
                      stream: RngStream, mode: WeightMode = WeightMode.SIGMOID_DERIVATIVE) -> ClientUpdate:
    """Report an inflated gap and add Gaussian noise to the update."""
    delta = update.delta
    if noise_sigma > 0:
        delta = delta + noise_sigma * stream.generator().standard_normal(delta.shape)
    return ClientUpdate(
        client=update.client,
        delta=delta,
        reported_weight=weight_from_gap(update.gap + loss_inflation, mode),
        gap=update.gap,
        loss_at_start=update.loss_at_start + loss_inflation,
        n_train=update.n_train,
        participated=update.participated,
        valid=update.valid and check_finite(delta),
    )


def evaluate_appeal(profile: ClientProfile, spec: ModelSpec, w: ModelParams,
                    basis: LossBasis = LossBasis.TRAIN) -> bool:
    split = profile.dataset.train if LossBasis(basis) is LossBasis.TRAIN else profile.dataset.test
    return appeals(models.loss(spec, w, split), profile.rho)


def fine_tune(profile: ClientProfile, spec: ModelSpec, w: ModelParams, k_steps: int,
              eta_l: float, b: int | None, stream: RngStream) -> ModelParams:
    if k_steps < 0:
        raise ConfigError("k_steps must be >= 0")
    if k_steps == 0:
        return np.array(w, dtype=np.float64)
    return sgd(spec, w, profile.dataset.train, k_steps, eta_l, b, stream.generator())
