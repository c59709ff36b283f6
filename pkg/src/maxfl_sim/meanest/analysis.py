"""Relaxed-objective analysis for scalar mean estimation with 2 or 3 clients.

In this model ``F_k(w) - rho_k = (w - theta_hat_k)^2`` exactly, so the
relaxed objective is ``v(w) = (1/K) sum_k h((w - theta_hat_k)^2)`` for a
surrogate ``h`` of the 0-1 loss.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import RngStream, sigmoid, weight_from_gap
from ..data import MeanEstProblem
from . import kernels


class Surrogate(str, enum.Enum):
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    RELU = "relu"

    @property
    def code(self) -> int:
        return {"sigmoid": kernels.SIGMOID, "softplus": kernels.SOFTPLUS, "relu": kernels.RELU}[self.value]


class Estimator(str, enum.Enum):
    FEDAVG_MEAN = "fedavg_mean"
    MAXFL_MINIMUM = "maxfl_minimum"
    RELU_SURROGATE = "relu_surrogate"


def _h(s: Surrogate, u: float) -> tuple[float, float, float]:
    """h(u), h'(u), h''(u) for u >= 0."""
    if s is Surrogate.SIGMOID:
        # sigma(1 - sigma) cancels to 0 once sigma rounds to 1; this form does not
        q = weight_from_gap(u)
        return sigmoid(u), q, -q * math.tanh(0.5 * u)
    if s is Surrogate.SOFTPLUS:
        return u + math.log1p(math.exp(-u)), sigmoid(u), weight_from_gap(u)
    return max(u, 0.0), 1.0, 0.0


def _theta_hat(problem) -> np.ndarray:
    if isinstance(problem, MeanEstProblem):
        return problem.theta_hat
    return np.asarray(problem, dtype=np.float64)


def objective_v(problem, w: float, surrogate: Surrogate = Surrogate.SIGMOID) -> float:
    s = Surrogate(surrogate)
    th = _theta_hat(problem)
    return sum(_h(s, (w - t) ** 2)[0] for t in th) / len(th)


def grad_v(problem, w: float, surrogate: Surrogate = Surrogate.SIGMOID) -> float:
    """``(2/K) sum_k h'((w - theta_hat_k)^2) (w - theta_hat_k)``."""
    s = Surrogate(surrogate)
    th = _theta_hat(problem)
    return 2.0 * sum(_h(s, (w - t) ** 2)[1] * (w - t) for t in th) / len(th)


def hessian_v(problem, w: float, surrogate: Surrogate = Surrogate.SIGMOID) -> float:
    """``(2/K) sum_k [2 h''(x^2) x^2 + h'(x^2)]``.

    For the sigmoid each term is ``q(x^2) (2 (1 - 2 sigma(x^2)) x^2 + 1)``, which
    at the two-client midpoint turns negative once the half-gap exceeds ~1.0216.
    """
    s = Surrogate(surrogate)
    th = _theta_hat(problem)
    total = 0.0
    for t in th:
        x2 = (w - t) ** 2
        _, h1, h2 = _h(s, x2)
        total += 2.0 * h2 * x2 + h1
    return 2.0 * total / len(th)


@dataclass(frozen=True)
class StationaryPoint:
    w: float
    kind: str  # "minimum", "maximum" or "degenerate"


_KIND = {1: "minimum", -1: "maximum", 0: "degenerate"}


def find_local_minima(problem, surrogate: Surrogate = Surrogate.SIGMOID,
                      step: float = 1e-3) -> list[StationaryPoint]:
    """All stationary points of ``v``, each classified; ascending in w.

    Sign changes of the gradient on a ``step`` grid are refined by bisection
    to (near) machine precision.
    """
    th = _theta_hat(problem)
    if not 2 <= len(th) <= 3:
        raise ValueError(f"mean estimation supports K in {{2, 3}}, got {len(th)}")
    roots, kinds = kernels.stationary_points(th, Surrogate(surrogate).code, step)
    return [StationaryPoint(float(w), _KIND[int(k)]) for w, k in zip(roots, kinds)]


def local_minima(problem, surrogate: Surrogate = Surrogate.SIGMOID) -> list[float]:
    return [p.w for p in find_local_minima(problem, surrogate) if p.kind == "minimum"]


def midpoint_is_maximum(gamma_hat_G: float) -> bool:
    """Sign test of the sigmoid hessian at the two-client midpoint."""
    return hessian_v([0.0, 2.0 * gamma_hat_G], gamma_hat_G) < 0.0


def hessian_sign_boundary(lo: float = 0.5, hi: float = 2.0, tol: float = 1e-12) -> float:
    """Half-gap at which the midpoint turns from minimum into maximum."""
    if midpoint_is_maximum(lo) or not midpoint_is_maximum(hi):
        raise ValueError("boundary not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if midpoint_is_maximum(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def fedavg_appeal_bound(gamma_G2: float, gamma2: float) -> float:
    """Upper bound on FedAvg's expected appeal: 2 exp(-gamma_G^2 / (5 gamma^2))."""
    return 2.0 * math.exp(-gamma_G2 / (5.0 * gamma2))


def maxfl_appeal_bound(gamma2: float) -> float:
    """Lower bound on the appeal of any MaxFL local minimum: exp(-1/gamma^2) / 16."""
    return math.exp(-1.0 / gamma2) / 16.0


_CHUNK = 4096


def estimate(estimator: Estimator, theta_hat: np.ndarray, threads: int = 1) -> np.ndarray:
    """Global model per row of ``theta_hat`` (shape ``(trials, K)``).

    Rows are independent, so splitting them across ``threads`` workers
    leaves the result unchanged.
    """
    est = Estimator(estimator)
    if est is Estimator.FEDAVG_MEAN:
        return theta_hat.mean(axis=1)
    code = kernels.SIGMOID if est is Estimator.MAXFL_MINIMUM else kernels.RELU
    if threads <= 1 or len(theta_hat) < 2 * threads:
        return kernels.select_minima(theta_hat, code)
    parts = np.array_split(theta_hat, threads)
    with ThreadPoolExecutor(threads) as pool:
        return np.concatenate(list(pool.map(lambda rows: kernels.select_minima(rows, code), parts)))


def sample_theta_hat(theta, gamma2: float, trials: int, stream: RngStream) -> np.ndarray:
    """``trials`` draws of ``theta_hat_k ~ N(theta_k, gamma^2)``, chunked by stream."""
    theta = np.asarray(theta, dtype=np.float64)
    g = math.sqrt(gamma2)
    parts = []
    for c, start in enumerate(range(0, trials, _CHUNK)):
        n = min(_CHUNK, trials - start)
        rng = stream.child(round=c, purpose="theta_hat").generator()
        parts.append(theta + g * rng.standard_normal((n, len(theta))))
    return np.concatenate(parts) if parts else np.empty((0, len(theta)))


def appeal_matrix(w: np.ndarray, theta, theta_hat: np.ndarray) -> np.ndarray:
    """Boolean ``(trials, K)``: ``(w - theta_k)^2 < (theta_hat_k - theta_k)^2``."""
    theta = np.asarray(theta, dtype=np.float64)
    return (w[:, None] - theta) ** 2 < (theta_hat - theta) ** 2


def expected_appeal(estimator: Estimator, theta, gamma2: float, trials: int,
                    stream: RngStream, threads: int = 1) -> tuple[float, float]:
    """Monte-Carlo GM-Appeal of an estimator: (mean, standard error)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    theta_hat = sample_theta_hat(theta, gamma2, trials, stream)
    per_trial = appeal_matrix(estimate(estimator, theta_hat, threads), theta, theta_hat).mean(axis=1)
    stderr = float(per_trial.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    return float(per_trial.mean()), stderr


@dataclass
class ThreeClientReport:
    theta: tuple[float, float, float]
    case: str
    fedavg: tuple[float, float]
    maxfl: tuple[float, float]
    fedavg_per_client: list[float]
    maxfl_per_client: list[float]
    dominant_clients: list[int]
    close_pair: tuple[int, int] | None = None
    near_pair_fraction: float = math.nan
    mean_gap_to_fedavg: float = math.nan
    notes: list[str] = field(default_factory=list)


def classify_three(theta, close: float = 2.0) -> tuple[str, tuple[int, int] | None]:
    th = list(theta)
    pairs = [(0, 1), (0, 2), (1, 2)]
    near = [p for p in pairs if abs(th[p[0]] - th[p[1]]) <= close]
    if len(near) == 3:
        return "all_close", None
    if not near:
        return "all_far", None
    if len(near) == 1:
        return "two_close_one_far", near[0]
    return "chain", None


def three_client_cases(theta, gamma2: float, trials: int, stream: RngStream,
                       close: float = 2.0) -> ThreeClientReport:
    """FedAvg mean vs the MaxFL minimum for one three-client configuration.

    Both estimators see the same draws of ``theta_hat``. For a
    two-close-one-far configuration the report also gives the fraction of
    trials whose MaxFL model lies within ``3 gamma`` of the close pair's mean.
    """
    theta = tuple(float(t) for t in theta)
    if len(theta) != 3:
        raise ValueError("three_client_cases needs exactly three means")
    theta_hat = sample_theta_hat(theta, gamma2, trials, stream)
    w_avg = estimate(Estimator.FEDAVG_MEAN, theta_hat)
    w_max = estimate(Estimator.MAXFL_MINIMUM, theta_hat)
    a_avg = appeal_matrix(w_avg, theta, theta_hat)
    a_max = appeal_matrix(w_max, theta, theta_hat)

    def summary(a):
        per = a.mean(axis=1)
        return float(per.mean()), float(per.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan

    case, pair = classify_three(theta, close)
    per_client = a_max.mean(axis=0)
    top = per_client.max()
    report = ThreeClientReport(
        theta=theta, case=case,
        fedavg=summary(a_avg), maxfl=summary(a_max),
        fedavg_per_client=a_avg.mean(axis=0).tolist(),
        maxfl_per_client=per_client.tolist(),
        dominant_clients=[k for k in range(3) if per_client[k] >= top - 0.05],
        close_pair=pair,
        mean_gap_to_fedavg=float(np.mean(np.abs(w_max - w_avg))),
    )
    if pair is not None:
        center = theta_hat[:, list(pair)].mean(axis=1)
        report.near_pair_fraction = float(np.mean(np.abs(w_max - center) <= 3.0 * math.sqrt(gamma2)))
    return report


CANONICAL_THREE_CLIENT = {
    "all_close": (0.0, 0.0, 0.0),
    "all_far": (0.0, 15.0, 50.0),
    "two_close_one_far": (0.0, 0.1, 50.0),
}


def canonical_three_client_cases(gamma2: float, trials: int, stream: RngStream) -> dict[str, ThreeClientReport]:
    return {name: three_client_cases(theta, gamma2, trials, stream.child(purpose=f"three:{name}"))
            for name, theta in CANONICAL_THREE_CLIENT.items()}


MEANEST_CSV_COLUMNS = ("gamma_G", "gamma_G2", "estimator", "appeal_mean", "appeal_stderr",
                       "bound", "bound_kind")


def appeal_sweep(gamma_G_grid, gamma2: float, trials: int, stream: RngStream,
                 estimators=tuple(Estimator), threads: int = 1) -> list[dict]:
    """Two-client sweep with ``theta = (0, 2 gamma_G)``; one row per (grid point, estimator).

    Each grid point reuses one set of draws across estimators.
    """
    rows = []
    for i, gG in enumerate(gamma_G_grid):
        gG = float(gG)
        theta = (0.0, 2.0 * gG)
        s = stream.child(round=i, purpose="sweep")
        for est in estimators:
            est = Estimator(est)
            mean, se = expected_appeal(est, theta, gamma2, trials, s, threads)
            if est is Estimator.MAXFL_MINIMUM:
                bound, kind = maxfl_appeal_bound(gamma2), "lower"
            else:
                bound, kind = fedavg_appeal_bound(gG * gG, gamma2), "upper"
            rows.append({"gamma_G": gG, "gamma_G2": gG * gG, "estimator": est.value,
                         "appeal_mean": mean, "appeal_stderr": se, "bound": bound, "bound_kind": kind})
    return rows


def write_meanest_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MEANEST_CSV_COLUMNS)
        for r in rows:
            wr.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in MEANEST_CSV_COLUMNS])
    return path
