"""Modality encoders (text / categorical / numerical), asymmetric
cross-modal attention, and adaptive weighted fusion.

Parameters live in a flat dict of name -> float64 ndarray; every forward
function returns a cache and has a matching hand-derived backward that
accumulates into a gradient dict with the same keys.

Modality order is fixed as ("text", "cat", "num") everywhere.
"""

from __future__ import annotations

import numpy as np

from .numerics import (
    NumericsError,
    attention_backward,
    attention_forward,
    init_matrix,
    softmax,
    softmax_backward,
)

MODALITIES = ("text", "cat", "num")


def init_encoder_params(
    rng: np.random.Generator,
    vocab_size: int,
    n_categories: int,
    numeric_dim: int,
    user_numeric_dim: int,
    d: int,
    d_k: int,
    max_tokens: int,
) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    p["text.emb"] = init_matrix(rng, (vocab_size, d))
    p["text.pos"] = init_matrix(rng, (max_tokens, d))
    p["text.wq"] = init_matrix(rng, (d, d_k))
    p["text.wk"] = init_matrix(rng, (d, d_k))
    p["text.wv"] = init_matrix(rng, (d, d))
    p["text.wo"] = init_matrix(rng, (d, d))
    p["text.empty"] = init_matrix(rng, (d,))
    p["cat.emb"] = init_matrix(rng, (max(1, n_categories), d))
    for prefix, dim in (("num", numeric_dim), ("unum", user_numeric_dim)):
        p[f"{prefix}.w1"] = init_matrix(rng, (max(1, dim), d))
        p[f"{prefix}.b1"] = np.zeros(d)
        p[f"{prefix}.w2"] = init_matrix(rng, (d, d))
        p[f"{prefix}.b2"] = np.zeros(d)
    for m in MODALITIES:
        for n in MODALITIES:
            if m == n:
                continue
            p[f"xm.{m}.{n}.q"] = init_matrix(rng, (d, d_k))
            p[f"xm.{m}.{n}.k"] = init_matrix(rng, (d, d_k))
            p[f"xm.{m}.{n}.v"] = init_matrix(rng, (d, d))
    M = len(MODALITIES)
    p["fus.w"] = init_matrix(rng, (M, d))
    p["fus.beta"] = np.zeros(1)
    p["fus.wc"] = init_matrix(rng, (M * d, d))
    p["fus.bc"] = np.zeros(d)
    return p


# ---------------------------------------------------------------- encoders

def encode_text(tokens: list[int], params: dict) -> tuple[np.ndarray, dict]:
    """Token embeddings + positional encodings through one self-attention
    block with output projection, mean-pooled. Empty input returns the
    learned empty-text vector."""
    emb, pos = params["text.emb"], params["text.pos"]
    if len(tokens) > pos.shape[0]:
        tokens = tokens[: pos.shape[0]]
    if any(t >= emb.shape[0] or t < 0 for t in tokens):
        raise NumericsError("token id outside vocabulary")
    if len(tokens) == 0:
        return params["text.empty"].copy(), {"empty": True}
    t = len(tokens)
    x = emb[tokens] + pos[:t]
    attended, acache = attention_forward(
        x, x, params["text.wq"], params["text.wk"], params["text.wv"]
    )
    z = attended @ params["text.wo"]
    h = z.mean(axis=0)
    return h, {"empty": False, "tokens": tokens, "x": x, "attended": attended,
               "acache": acache}


def encode_text_backward(dh: np.ndarray, cache: dict, params: dict, grads: dict) -> None:
    if cache["empty"]:
        grads["text.empty"] += dh
        return
    tokens = cache["tokens"]
    t = len(tokens)
    dz = np.tile(dh / t, (t, 1))
    grads["text.wo"] += cache["attended"].T @ dz
    dattended = dz @ params["text.wo"].T
    ab = attention_backward(dattended, cache["acache"])
    grads["text.wq"] += ab["d_wq"]
    grads["text.wk"] += ab["d_wk"]
    grads["text.wv"] += ab["d_wv"]
    dx = ab["d_xq"] + ab["d_xkv"]
    np.add.at(grads["text.emb"], tokens, dx)
    grads["text.pos"][:t] += dx


def encode_categorical(cat_ids: list[int], params: dict) -> tuple[np.ndarray, dict]:
    """Mean of member category embeddings; empty set encodes to zeros."""
    emb = params["cat.emb"]
    if any(c >= emb.shape[0] or c < 0 for c in cat_ids):
        raise NumericsError("unknown category id")
    if not cat_ids:
        return np.zeros(emb.shape[1]), {"ids": []}
    return emb[cat_ids].mean(axis=0), {"ids": list(cat_ids)}


def encode_categorical_backward(dh, cache, params, grads) -> None:
    ids = cache["ids"]
    if ids:
        np.add.at(grads["cat.emb"], ids, np.tile(dh / len(ids), (len(ids), 1)))


def encode_numeric(
    x: np.ndarray, params: dict, prefix: str = "num"
) -> tuple[np.ndarray, dict]:
    """Two-layer perceptron: tanh hidden layer then linear output."""
    x = np.asarray(x, dtype=np.float64)
    w1 = params[f"{prefix}.w1"]
    if x.size != w1.shape[0]:
        raise NumericsError(f"numeric dim {x.size} != encoder dim {w1.shape[0]}")
    a1 = np.tanh(x @ w1 + params[f"{prefix}.b1"])
    h = a1 @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]
    return h, {"x": x, "a1": a1, "prefix": prefix}


def encode_numeric_backward(dh, cache, params, grads) -> None:
    pre = cache["prefix"]
    a1, x = cache["a1"], cache["x"]
    grads[f"{pre}.w2"] += np.outer(a1, dh)
    grads[f"{pre}.b2"] += dh
    da1 = params[f"{pre}.w2"] @ dh
    dz1 = (1.0 - a1 * a1) * da1
    grads[f"{pre}.w1"] += np.outer(x, dz1)
    grads[f"{pre}.b1"] += dz1


# ------------------------------------------------- cross-modal attention

def cross_modal_attend(
    h_q: np.ndarray, h_kv: np.ndarray, q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Asymmetric cross-modal attention: query-side rows attend over
    key/value-side rows; output rows are convex combinations of the
    value-projected key-side rows."""
    h_q = np.atleast_2d(h_q)
    h_kv = np.atleast_2d(h_kv)
    return attention_forward(h_q, h_kv, q, k, v)


# ----------------------------------------------------------------- fusion

def fusion_weights(hs: list[np.ndarray], w: np.ndarray) -> np.ndarray:
    """Softmax over per-modality scores w_m . h_m."""
    if len(hs) < 1:
        raise NumericsError("at least one modality required")
    scores = np.array([w[m] @ hs[m] for m in range(len(hs))])
    return softmax(scores)


def fuse(
    hs: list[np.ndarray], alpha: np.ndarray, params: dict
) -> tuple[np.ndarray, dict]:
    """alpha-weighted sum plus beta-gated perceptron over the concatenation
    of all modality vectors in fixed declared order."""
    M = len(hs)
    wc, bc = params["fus.wc"], params["fus.bc"]
    if wc.shape[0] != M * hs[0].size:
        raise NumericsError("modality count mismatch vs fusion params")
    concat = np.concatenate(hs)
    z = concat @ wc + bc
    mlp = np.tanh(z)
    beta = float(params["fus.beta"][0])
    fused = sum(alpha[m] * hs[m] for m in range(M)) + beta * mlp
    return fused, {"hs": hs, "alpha": alpha, "concat": concat, "mlp": mlp,
                   "beta": beta}


def multimodal_forward(
    inputs: dict, params: dict, mix: bool = True, fusion_on: bool = True
) -> tuple[np.ndarray, dict]:
    """Full stack: encode each modality, optionally mix via pairwise
    cross-modal attention (residual mean over incoming pairs), then fuse.

    inputs: {"text": token list, "cat": category id list,
             "num": feature vector, "num_prefix": "num"|"unum"}
    With fusion_on=False the output is the plain mean of the raw modality
    encodings (cross-attention and adaptive weighting contribute nothing).
    """
    prefix = inputs.get("num_prefix", "num")
    h_text, c_text = encode_text(inputs["text"], params)
    h_cat, c_cat = encode_categorical(inputs["cat"], params)
    h_num, c_num = encode_numeric(inputs["num"], params, prefix)
    raw = [h_text, h_cat, h_num]
    cache: dict = {"enc": [c_text, c_cat, c_num], "mix": None, "fusion_on": fusion_on}

    if not fusion_on:
        fused = (raw[0] + raw[1] + raw[2]) / 3.0
        cache["raw"] = raw
        return fused, cache

    if mix:
        M = len(MODALITIES)
        mixed = []
        mix_caches = []
        for mi, m in enumerate(MODALITIES):
            acc = np.zeros_like(raw[mi])
            pair_caches = []
            for ni, n in enumerate(MODALITIES):
                if mi == ni:
                    continue
                out, ac = cross_modal_attend(
                    raw[mi], raw[ni],
                    params[f"xm.{m}.{n}.q"], params[f"xm.{m}.{n}.k"],
                    params[f"xm.{m}.{n}.v"],
                )
                acc += out[0]
                pair_caches.append((mi, ni, ac))
            mixed.append(raw[mi] + acc / (M - 1))
            mix_caches.append(pair_caches)
        cache["mix"] = mix_caches
        hs = mixed
    else:
        hs = raw
    cache["raw"] = raw
    alpha = fusion_weights(hs, params["fus.w"])
    fused, fcache = fuse(hs, alpha, params)
    cache["fcache"] = fcache
    return fused, cache


def multimodal_backward(
    d_fused: np.ndarray, cache: dict, params: dict, grads: dict
) -> None:
    """Backprop through the full stack (gradients for every parameter in
    this module, accumulated into ``grads``)."""
    c_text, c_cat, c_num = cache["enc"]
    if not cache["fusion_on"]:
        d_raw = [d_fused / 3.0] * 3
        encode_text_backward(d_raw[0], c_text, params, grads)
        encode_categorical_backward(d_raw[1], c_cat, params, grads)
        encode_numeric_backward(d_raw[2], c_num, params, grads)
        return

    f = cache["fcache"]
    hs, alpha, beta, mlp = f["hs"], f["alpha"], f["beta"], f["mlp"]
    M = len(hs)
    d_hs = [alpha[m] * d_fused for m in range(M)]
    d_alpha = np.array([d_fused @ hs[m] for m in range(M)])
    grads["fus.beta"][0] += d_fused @ mlp
    dz = (1.0 - mlp * mlp) * (beta * d_fused)
    grads["fus.wc"] += np.outer(f["concat"], dz)
    grads["fus.bc"] += dz
    dconcat = params["fus.wc"] @ dz
    d = hs[0].size
    for m in range(M):
        d_hs[m] = d_hs[m] + dconcat[m * d : (m + 1) * d]
    ds = softmax_backward(alpha, d_alpha)
    for m in range(M):
        grads["fus.w"][m] += ds[m] * hs[m]
        d_hs[m] = d_hs[m] + ds[m] * params["fus.w"][m]

    if cache["mix"] is not None:
        d_raw = [d_hs[m].copy() for m in range(M)]  # residual path
        for mi, pair_caches in enumerate(cache["mix"]):
            dout = (d_hs[mi] / (M - 1))[None, :]
            for (qi, ki, ac) in pair_caches:
                ab = attention_backward(dout, ac)
                m, n = MODALITIES[qi], MODALITIES[ki]
                grads[f"xm.{m}.{n}.q"] += ab["d_wq"]
                grads[f"xm.{m}.{n}.k"] += ab["d_wk"]
                grads[f"xm.{m}.{n}.v"] += ab["d_wv"]
                d_raw[qi] += ab["d_xq"][0]
                d_raw[ki] += ab["d_xkv"][0]
    else:
        d_raw = d_hs

    encode_text_backward(d_raw[0], c_text, params, grads)
    encode_categorical_backward(d_raw[1], c_cat, params, grads)
    encode_numeric_backward(d_raw[2], c_num, params, grads)


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}
