"""Causal debiasing: propensity estimation with inverse propensity
scoring, backdoor adjustment over popularity strata, an adversarial
demographic head with gradient reversal, and the demographic parity gap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import init_matrix, softmax


class DebiasError(ValueError):
    pass


# ------------------------------------------------------------- propensity

@dataclass
class PropensityModel:
    weights: np.ndarray
    bias: float = 0.0
    clip_floor: float = 0.01


def estimate_propensity(features: np.ndarray, model: PropensityModel) -> float:
    """Sigmoid of the linear score, clipped below at the floor."""
    z = float(np.dot(model.weights, features) + model.bias)
    p = 1.0 / (1.0 + np.exp(-z))
    return max(model.clip_floor, p)


def fit_propensity(
    positives: np.ndarray,
    negatives: np.ndarray,
    clip_floor: float = 0.01,
    lr: float = 0.5,
    epochs: int = 200,
) -> tuple[PropensityModel, list[float]]:
    """Logistic regression by full-batch gradient descent with backtracking
    (training loss is nonincreasing per epoch by construction)."""
    if len(positives) == 0 or len(negatives) == 0:
        raise DebiasError("need at least one positive and one negative example")
    x = np.vstack([positives, negatives]).astype(np.float64)
    y = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
    w = np.zeros(x.shape[1])
    b = 0.0

    def loss_of(wv, bv):
        z = x @ wv + bv
        # stable log(1+exp(-|z|)) formulation
        return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))

    losses = [loss_of(w, b)]
    step = lr
    for _ in range(epochs):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        gw = x.T @ (p - y) / len(y)
        gb = float(np.mean(p - y))
        while step > 1e-12:
            cand_w = w - step * gw
            cand_b = b - step * gb
            cand_loss = loss_of(cand_w, cand_b)
            if cand_loss <= losses[-1]:
                w, b = cand_w, cand_b
                losses.append(cand_loss)
                break
            step *= 0.5
        else:
            losses.append(losses[-1])
    return PropensityModel(weights=w, bias=b, clip_floor=clip_floor), losses


def ips_loss(
    losses: np.ndarray, propensities: np.ndarray
) -> tuple[float, np.ndarray]:
    """(1/|D|) sum of per-sample loss / propensity.

    Returns the weighted loss and the per-sample weight that multiplies
    each sample's gradient (1 / (|D| * e_i)); reduces to the plain mean
    when every propensity is 1.
    """
    losses = np.asarray(losses, dtype=np.float64)
    prop = np.asarray(propensities, dtype=np.float64)
    if losses.shape != prop.shape:
        raise DebiasError("loss/propensity length mismatch")
    n = losses.size
    weights = 1.0 / (n * prop)
    return float(np.sum(losses * weights) * 1.0), weights


# ------------------------------------------------------ backdoor adjustment

@dataclass
class PopularityStrata:
    boundaries: list[float]          # ascending popularity-count boundaries
    priors: np.ndarray               # P(P_i = p) per bucket

    def __post_init__(self):
        if abs(float(np.sum(self.priors)) - 1.0) > 1e-9:
            raise DebiasError("strata priors must sum to 1")

    def stratum_of(self, popularity: float) -> int:
        return int(np.searchsorted(self.boundaries, popularity, side="right"))


def quartile_strata(popularities: list[int]) -> PopularityStrata:
    """Popularity quartile buckets with empirical priors."""
    arr = np.asarray(sorted(popularities), dtype=np.float64)
    qs = [float(np.quantile(arr, q)) for q in (0.25, 0.5, 0.75)]
    strata = PopularityStrata(boundaries=qs, priors=np.ones(4) / 4)
    counts = np.zeros(4)
    for p in popularities:
        counts[strata.stratum_of(p)] += 1
    strata.priors = counts / counts.sum()
    return strata


def backdoor_adjusted_score(
    conditionals: list[float], strata: PopularityStrata
) -> float:
    """Average the per-stratum conditionals P(Y | x, p) over the stratum
    priors. A missing stratum estimate (NaN) is an error."""
    cond = np.asarray(conditionals, dtype=np.float64)
    if cond.size != strata.priors.size:
        raise DebiasError("one conditional estimate required per stratum")
    if np.any(np.isnan(cond)):
        raise DebiasError("missing stratum estimate")
    return float(np.dot(cond, strata.priors))


# ------------------------------------------------------- adversarial head

@dataclass
class FairnessConfig:
    lambda_fair: float = 0.0
    parity_threshold: float = 0.5
    parity_tolerance: float = 0.1
    groups: list[str] = field(default_factory=lambda: ["g0", "g1"])
    adversary_input: str = "score"   # "score" or "representation"
    reversal_coeff: float = 1.0

    def __post_init__(self):
        if len(self.groups) < 2:
            raise DebiasError("need at least two demographic groups")


def init_adversary(rng: np.random.Generator, in_dim: int, n_groups: int) -> dict:
    return {"adv.w": init_matrix(rng, (in_dim, n_groups)),
            "adv.b": np.zeros(n_groups)}


def adversary_loss(
    inputs: np.ndarray,
    group_ids: np.ndarray,
    adv_params: dict,
    group_weights: np.ndarray | None = None,
    reversal_coeff: float = 1.0,
) -> tuple[float, dict, np.ndarray]:
    """Group-weighted negative log-likelihood of the true group given the
    predicted score (or representation).

    inputs: [N, in_dim]. Returns (loss, adversary grads, d_inputs) where
    d_inputs is the main-model gradient already sign-reversed by
    ``reversal_coeff`` (the gradient-reversal realization of the min-max;
    pass reversal_coeff=-1 to recover the true gradient).
    With empirical group weights the loss reduces to mean cross-entropy,
    so a uniform adversary over G groups yields ln G.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    gids = np.asarray(group_ids, dtype=int)
    if x.shape[0] != gids.size:
        raise DebiasError("inputs/groups length mismatch")
    if x.shape[0] == 0:
        raise DebiasError("empty batch")
    n_groups = adv_params["adv.b"].size
    counts = np.bincount(gids, minlength=n_groups).astype(np.float64)
    if group_weights is None:
        group_weights = counts / counts.sum()
    # per-sample weight: P(S=s)/N_s so each group's mean log-prob is
    # weighted by its probability mass
    sample_w = np.array([group_weights[g] / counts[g] for g in gids])

    logits = x @ adv_params["adv.w"] + adv_params["adv.b"]
    probs = softmax(logits)
    eps = 1e-12
    loss = float(-np.sum(sample_w * np.log(probs[np.arange(len(gids)), gids] + eps)))

    dlogits = probs.copy()
    dlogits[np.arange(len(gids)), gids] -= 1.0
    dlogits *= sample_w[:, None]
    grads = {
        "adv.w": x.T @ dlogits,
        "adv.b": dlogits.sum(axis=0),
    }
    d_inputs_true = dlogits @ adv_params["adv.w"].T
    d_inputs = -reversal_coeff * d_inputs_true
    return loss, grads, d_inputs


def parity_gap(
    scores_by_group: dict[str, np.ndarray], tau: float
) -> float:
    """Max over group pairs of |P(score > tau | s1) - P(score > tau | s2)|."""
    rates = {}
    for g, scores in scores_by_group.items():
        arr = np.asarray(scores, dtype=np.float64)
        if arr.size == 0:
            raise DebiasError(f"empty group {g}")
        rates[g] = float(np.mean(arr > tau))
    names = sorted(rates)
    gap = 0.0
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            gap = max(gap, abs(rates[names[i]] - rates[names[j]]))
    return gap


def fairness_report(
    scores_by_group: dict[str, np.ndarray], config: FairnessConfig
) -> dict:
    """JSON-ready fairness report: per-group positive rates, gap, verdict."""
    tau = config.parity_threshold
    rates = {
        g: float(np.mean(np.asarray(s) > tau)) for g, s in sorted(scores_by_group.items())
    }
    gap = parity_gap(scores_by_group, tau)
    return {
        "per_group_positive_rate": rates,
        "parity_gap": gap,
        "tau": tau,
        "epsilon": config.parity_tolerance,
        "verdict": "pass" if gap <= config.parity_tolerance else "fail",
    }


def write_fairness_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
