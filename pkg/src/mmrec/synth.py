"""Synthetic dataset generators used by tests, the acceptance suite, and
the demo scripts: planted category preferences, group-correlated exposure,
and two-task preference shifts.
"""

from __future__ import annotations

import math

import numpy as np

from .dataset import (
    EXPLICIT,
    IMPLICIT,
    Dataset,
    Interaction,
    ItemRecord,
    UserRecord,
    build_dataset,
    build_vocab,
    tokenize,
)
from .numerics import make_rng


def _zipf_weights(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def make_items(
    n_items: int, n_categories: int, rng: np.random.Generator
) -> tuple[dict[str, ItemRecord], dict[str, int]]:
    """Items in contiguous category blocks with category-flavored text and
    noisy category-one-hot numeric features."""
    descriptions = {}
    cats = {}
    for i in range(n_items):
        c = i * n_categories // n_items
        iid = f"i{i:04d}"
        cats[iid] = c
        descriptions[iid] = f"genre{c} genre{c} flavor{i % 7} title{i}"
    vocab = build_vocab(list(descriptions.values()))
    items = {}
    for iid, desc in descriptions.items():
        c = cats[iid]
        numeric = np.zeros(n_categories)
        numeric[c] = 1.0
        numeric += 0.05 * rng.standard_normal(n_categories)
        items[iid] = ItemRecord(
            item_id=iid,
            title=f"Title {iid}",
            description_tokens=tokenize(desc, vocab),
            categories=frozenset({f"cat{c}"}),
            numeric_features=numeric,
        )
    return items, vocab


def planted_categories(
    n_users: int = 200,
    n_items: int = 500,
    n_categories: int = 10,
    interactions_per_user: int = 20,
    cats_per_user: int = 2,
    preference_strength: float = 0.9,
    zipf_s: float = 1.0,
    seed: int = 0,
    explicit_fraction: float = 0.3,
    preferred_cat_pool: list[int] | None = None,
    group_sizes: dict[str, float] | None = None,
    interactions_by_group: dict[str, int] | None = None,
    group_feature: bool = False,
    exposure_noise_by_group: dict[str, float] | None = None,
) -> Dataset:
    """Users prefer a couple of planted categories; within a category items
    are drawn with a Zipf skew. Timestamps increase per user.

    ``preferred_cat_pool`` restricts which categories users may prefer
    (used for two-task protocols); ``interactions_by_group`` makes exposure
    depend on the demographic group (used for fairness protocols).
    ``group_feature`` appends a one-hot group indicator to each user's
    profile features, as demographic attributes would.
    ``exposure_noise_by_group`` gives, per group, the probability that a
    logged *training* interaction was driven by globally promoted exposure
    (a Zipf draw over the whole catalog) rather than the user's own
    preference; held-out interactions always follow true preference, so
    the evaluation measures preference while the log carries the bias.
    """
    rng = make_rng(seed)
    items, vocab = make_items(n_items, n_categories, rng)
    item_ids = sorted(items)
    by_cat: dict[int, list[str]] = {}
    for idx, iid in enumerate(item_ids):
        by_cat.setdefault(idx * n_categories // n_items, []).append(iid)

    pool = preferred_cat_pool if preferred_cat_pool is not None else list(range(n_categories))
    group_names = sorted(group_sizes) if group_sizes else ["g0", "g1"]
    group_probs = (
        np.array([group_sizes[g] for g in group_names]) if group_sizes
        else np.ones(len(group_names)) / len(group_names)
    )
    group_probs = group_probs / group_probs.sum()

    users: dict[str, UserRecord] = {}
    interactions: list[Interaction] = []
    for u in range(n_users):
        uid = f"u{u:04d}"
        group = group_names[int(rng.choice(len(group_names), p=group_probs))]
        prefs = rng.choice(pool, size=min(cats_per_user, len(pool)), replace=False)
        profile = np.zeros(n_categories)
        for c in prefs:
            profile[int(c)] = 1.0
        profile += 0.05 * rng.standard_normal(n_categories)
        if group_feature:
            onehot = np.zeros(len(group_names))
            onehot[group_names.index(group)] = 1.0
            profile = np.concatenate([profile, onehot])
        users[uid] = UserRecord(uid, group_label=group, profile_features=profile)

        n_inter = (
            interactions_by_group.get(group, interactions_per_user)
            if interactions_by_group else interactions_per_user
        )
        noise = (exposure_noise_by_group or {}).get(group, 0.0)
        n_logged = math.ceil(0.8 * n_inter)  # the temporally-first portion
        base_t = 1_000_000 + u  # deterministic, distinct per user
        for j in range(n_inter):
            if j < n_logged and rng.random() < noise:
                # promoted exposure: a popularity draw over the whole catalog
                iid = item_ids[int(rng.choice(
                    len(item_ids), p=_zipf_weights(len(item_ids), 1.2)
                ))]
            else:
                if rng.random() < preference_strength:
                    c = int(prefs[int(rng.integers(len(prefs)))])
                else:
                    c = int(rng.integers(n_categories))
                members = by_cat[c]
                iid = members[int(rng.choice(len(members), p=_zipf_weights(len(members), zipf_s)))]
            ts = base_t + j * 1000
            if rng.random() < explicit_fraction:
                # satisfaction tracks preference: items from the user's
                # planted categories rate high, mismatched items rate low
                matched = bool(
                    {f"cat{int(c)}" for c in prefs} & set(items[iid].categories)
                )
                base = 4.5 if matched else 2.0
                rating = float(np.clip(base + rng.standard_normal() * 0.3, 0, 5))
                interactions.append(Interaction(uid, iid, round(rating, 2), ts, EXPLICIT))
            else:
                interactions.append(Interaction(uid, iid, None, ts, IMPLICIT))

    return build_dataset(interactions, items, users, vocab, train_fraction=0.8)


def group_biased(
    n_users: int = 120,
    n_items: int = 200,
    n_categories: int = 8,
    seed: int = 0,
) -> Dataset:
    """Group-correlated exposure: both groups share the same preference
    process, but one group's logged training interactions are partly driven
    by globally promoted items rather than preference, and the group is
    visible as a profile feature. Held-out targets follow true preference."""
    return planted_categories(
        n_users=n_users,
        n_items=n_items,
        n_categories=n_categories,
        interactions_per_user=16,
        seed=seed,
        explicit_fraction=0.5,
        group_sizes={"g0": 0.5, "g1": 0.5},
        group_feature=True,
        exposure_noise_by_group={"g0": 0.0, "g1": 0.6},
    )


def two_tasks(
    n_users: int = 80,
    n_items: int = 200,
    n_categories: int = 8,
    seed: int = 0,
    interactions_per_user: int = 16,
) -> tuple[Dataset, Dataset]:
    """Two sequential tasks over one catalog with disjoint planted
    preferences (first half vs second half of the categories)."""
    half = n_categories // 2
    ds_a = planted_categories(
        n_users=n_users, n_items=n_items, n_categories=n_categories,
        interactions_per_user=interactions_per_user, seed=seed,
        preferred_cat_pool=list(range(half)),
    )
    ds_b = planted_categories(
        n_users=n_users, n_items=n_items, n_categories=n_categories,
        interactions_per_user=interactions_per_user, seed=seed + 1,
        preferred_cat_pool=list(range(half, n_categories)),
    )
    return ds_a, ds_b


def write_dataset_files(ds: Dataset, directory: str) -> dict[str, str]:
    """Write a Dataset back out as the on-disk interchange files
    (interactions TSV + items/users JSON-lines). Returns the paths."""
    import json
    import os

    os.makedirs(directory, exist_ok=True)
    ipath = os.path.join(directory, "interactions.tsv")
    with open(ipath, "w", encoding="utf-8") as fh:
        fh.write("user_id\titem_id\trating\ttimestamp\n")
        for it in ds.interactions:
            r = "-" if it.rating is None else f"{it.rating}"
            fh.write(f"{it.user_id}\t{it.item_id}\t{r}\t{it.timestamp}\n")
    # invert the token ids back to stable placeholder words so that
    # reloading rebuilds an equivalent vocabulary
    inv = {v: k for k, v in ds.vocab.items()}
    tpath = os.path.join(directory, "items.jsonl")
    with open(tpath, "w", encoding="utf-8") as fh:
        for iid in ds.item_ids:
            rec = ds.items[iid]
            fh.write(json.dumps({
                "item_id": iid,
                "title": rec.title,
                "description": " ".join(inv.get(t, "unk") for t in rec.description_tokens),
                "categories": sorted(rec.categories),
                "numeric": rec.numeric_features.tolist(),
            }) + "\n")
    upath = os.path.join(directory, "users.jsonl")
    with open(upath, "w", encoding="utf-8") as fh:
        for uid in sorted(ds.users):
            u = ds.users[uid]
            fh.write(json.dumps({
                "user_id": uid,
                "group": u.group_label,
                "profile": u.profile_features.tolist(),
            }) + "\n")
    return {"interactions": ipath, "items": tpath, "users": upath}
