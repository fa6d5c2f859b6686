"""Online adaptive learning: momentum SGD, uncertainty-scaled learning
rate, importance-sampled selective updates, explicit/implicit feedback
weighting, and elastic weight consolidation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import softmax

log = logging.getLogger(__name__)


class AdaptiveError(ValueError):
    pass


@dataclass
class OptimizerState:
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    gamma_m: float = 0.9
    eta0: float = 0.1
    lambda_u: float = 1.0
    tau_sel: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma_m < 1.0):
            raise AdaptiveError("momentum coefficient must be in [0,1)")
        if self.eta0 <= 0.0:
            raise AdaptiveError("base learning rate must be positive")

    def buffer(self, name: str, like: np.ndarray) -> np.ndarray:
        if name not in self.momentum:
            self.momentum[name] = np.zeros_like(like)
        return self.momentum[name]


@dataclass
class EwcState:
    fisher: dict[str, np.ndarray] = field(default_factory=dict)
    anchor: dict[str, np.ndarray] = field(default_factory=dict)
    lambda_ewc: float = 0.0


@dataclass
class FeedbackWeights:
    rel_explicit: float = 0.0
    rel_implicit: float = 0.0
    gamma_reg: float = 0.0
    ema_decay: float = 0.99

    def update(self, kind: str, agreement: float) -> None:
        """EMA of agreement between a feedback event and held-out behavior."""
        if kind == "explicit":
            self.rel_explicit = self.ema_decay * self.rel_explicit + (1 - self.ema_decay) * agreement
        else:
            self.rel_implicit = self.ema_decay * self.rel_implicit + (1 - self.ema_decay) * agreement


def momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    eta: float | None = None,
) -> bool:
    """v <- gamma*v + eta*g ; theta <- theta - v.

    A non-finite gradient rejects the whole step (params and state
    unchanged) and returns False.
    """
    eta = state.eta0 if eta is None else eta
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient for %s: step rejected", name)
            return False
    for name, g in grads.items():
        v = state.buffer(name, g)
        v *= state.gamma_m
        v += eta * g
        params[name] -= v
    state.step_count += 1
    return True


def adaptive_rate(eta0: float, lambda_u: float, uncertainty: float) -> float:
    """eta0 * exp(-lambda * uncertainty); uncertainty is the generator's
    normalized predictive entropy at the fed-back event, in [0,1]."""
    if uncertainty < 0:
        raise AdaptiveError("uncertainty must be nonnegative")
    return float(eta0 * np.exp(-lambda_u * uncertainty))


def update_probabilities(grad: np.ndarray) -> np.ndarray:
    """Softmax over |g_j| within one parameter tensor (per-tensor partition,
    not global across tensors)."""
    flat = np.abs(np.asarray(grad, dtype=np.float64).ravel())
    if flat.size == 0 or not np.any(np.isfinite(flat)):
        raise AdaptiveError("need at least one finite gradient")
    return softmax(flat).reshape(np.asarray(grad).shape)


def selective_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    eta: float | None = None,
) -> float:
    """Momentum step restricted to coordinates whose update probability
    exceeds tau_sel; others are frozen this step. Returns the fraction of
    coordinates updated. tau_sel = 0 updates everything (identical to
    momentum_step)."""
    if not (0.0 <= state.tau_sel < 1.0):
        raise AdaptiveError("tau_sel must be in [0,1)")
    eta = state.eta0 if eta is None else eta
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient for %s: step rejected", name)
            return 0.0
    total = 0
    updated = 0
    for name, g in grads.items():
        mask = update_probabilities(g) > state.tau_sel
        total += g.size
        updated += int(mask.sum())
        v = state.buffer(name, g)
        # frozen coordinates keep both their momentum and their value
        v[mask] = state.gamma_m * v[mask] + eta * g[mask]
        params[name][mask] -= v[mask]
    state.step_count += 1
    return updated / max(1, total)


def reliability_weights(weights: FeedbackWeights) -> tuple[float, float]:
    """alpha = rel_explicit / (rel_explicit + rel_implicit); beta = 1-alpha.
    Both-zero reliabilities fall back to 0.5/0.5 with a log line."""
    re_, ri = weights.rel_explicit, weights.rel_implicit
    if re_ < 0 or ri < 0:
        raise AdaptiveError("reliabilities must be nonnegative")
    if re_ + ri == 0.0:
        log.warning("both feedback reliabilities are zero; defaulting to 0.5")
        return 0.5, 0.5
    alpha = re_ / (re_ + ri)
    return alpha, 1.0 - alpha


def ewc_penalty(
    params: dict[str, np.ndarray], ewc: EwcState
) -> tuple[float, dict[str, np.ndarray]]:
    """(lambda/2) * sum_j F_j (theta_j - theta*_j)^2 and its gradient."""
    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    for name, f in ewc.fisher.items():
        delta = params[name] - ewc.anchor[name]
        loss += 0.5 * ewc.lambda_ewc * float(np.sum(f * delta * delta))
        grads[name] = ewc.lambda_ewc * f * delta
    return loss, grads


def estimate_fisher(
    per_example_grads: list[dict[str, np.ndarray]],
) -> dict[str, np.ndarray]:
    """Diagonal Fisher: mean over examples of squared NLL gradients."""
    if not per_example_grads:
        raise AdaptiveError("need a nonempty sample")
    fisher: dict[str, np.ndarray] = {}
    n = len(per_example_grads)
    for g in per_example_grads:
        for name, arr in g.items():
            if name not in fisher:
                fisher[name] = np.zeros_like(arr)
            fisher[name] += arr * arr / n
    return fisher


def combined_feedback_loss(
    explicit_losses: list[tuple[float, dict[str, np.ndarray]]],
    implicit_losses: list[tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    weights: FeedbackWeights,
    alpha: float | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """alpha * mean explicit (squared-error) loss + beta * mean implicit
    (sequence NLL) loss + gamma_reg * L2 over parameters.

    Each entry is a precomputed (loss, grads) pair from the model. alpha
    defaults to the reliability-derived weight.
    """
    if not explicit_losses and not implicit_losses:
        raise AdaptiveError("batch contains neither explicit nor implicit feedback")
    if alpha is None:
        alpha, beta = reliability_weights(weights)
    else:
        beta = 1.0 - alpha
    if not explicit_losses:
        alpha, beta = 0.0, 1.0
    elif not implicit_losses:
        alpha, beta = 1.0, 0.0

    total = 0.0
    grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}

    def accumulate(entries, weight):
        nonlocal total
        if not entries or weight == 0.0:
            return
        scale = weight / len(entries)
        for loss, g in entries:
            total += scale * loss
            for name, arr in g.items():
                grads[name] += scale * arr

    accumulate(explicit_losses, alpha)
    accumulate(implicit_losses, beta)

    if weights.gamma_reg > 0.0:
        for name, arr in params.items():
            total += weights.gamma_reg * float(np.sum(arr * arr))
            grads[name] += 2.0 * weights.gamma_reg * arr
    return total, grads
