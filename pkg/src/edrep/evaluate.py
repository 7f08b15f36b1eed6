"""Metrics and experiment drivers: partition agreement, trajectory
deviation, and the community-detection benchmark pipeline."""

from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np

from .errors import DimensionError, ValidationError
from .graphs import DcsbmInstance, DcsbmParams, dcsbm_sample, walk_operator
from .mixture import kmeans_label
from .optimizer import OptimizerConfig, fit


def nmi(labels_a, labels_b) -> float:
    """Mutual information between two partitions, normalized by the
    arithmetic mean of their entropies; 0 for independent assignments,
    1 for identical partitions (up to relabeling)."""
    a = np.asarray(getattr(labels_a, "labels", labels_a)).ravel()
    b = np.asarray(getattr(labels_b, "labels", labels_b)).ravel()
    if a.size != b.size:
        raise DimensionError(f"partitions have lengths {a.size} and {b.size}")
    if a.size == 0:
        raise ValidationError("cannot compare empty partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = ai.max() + 1, bi.max() + 1
    cont = np.zeros((ka, kb))
    np.add.at(cont, (ai, bi), 1.0)
    n = a.size
    pa = cont.sum(axis=1) / n
    pb = cont.sum(axis=0) / n
    mi = 0.0
    for r in range(ka):
        for c in range(kb):
            nij = cont[r, c]
            if nij > 0:
                mi += (nij / n) * math.log(nij * n / (cont[r].sum() * cont[:, c].sum()))
    ha = -np.sum(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa)))
    hb = -np.sum(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb)))
    mean_h = 0.5 * (ha + hb)
    if mean_h == 0.0:
        # Both partitions are trivial single-class assignments.
        return 1.0
    return float(max(0.0, min(1.0, mi / mean_h)))


def deviation_ct(X_traj, Y_traj) -> np.ndarray:
    """Per-epoch Frobenius deviation between the Gram matrices of two
    embedding trajectories, (1/n) ||X X' - Y Y'||_F.

    Uses the trace expansion over d x d blocks, so the n x n Gram
    matrices are never materialized.  Invariant under column-orthogonal
    transforms of either trajectory; exactly zero where the iterates
    coincide.
    """
    if len(X_traj) != len(Y_traj):
        raise DimensionError(
            f"trajectories have lengths {len(X_traj)} and {len(Y_traj)}"
        )
    out = np.empty(len(X_traj))
    for t, (X, Y) in enumerate(zip(X_traj, Y_traj)):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.shape != Y.shape:
            raise DimensionError(
                f"epoch {t}: shapes {X.shape} and {Y.shape} differ"
            )
        gxx = np.sum((X.T @ X) ** 2)
        gyy = np.sum((Y.T @ Y) ** 2)
        gxy = np.sum((Y.T @ X) ** 2)
        out[t] = np.sqrt(max(0.0, gxx - 2.0 * gxy + gyy)) / X.shape[0]
    return out


def community_pipeline(
    instance: DcsbmInstance, w: int, cfg: OptimizerConfig
) -> tuple[float, float]:
    """Embed a sampled graph and score the recovered communities.

    Builds the averaged walk operator, fits the embedding, clusters it
    into the ground-truth class count (10 restarts, best inertia) and
    returns the partition agreement plus the wall time of those three
    stages (graph generation excluded).
    """
    t0 = time.perf_counter()
    chain = walk_operator(instance.adjacency, w)
    result = fit(chain, cfg)
    predicted = kmeans_label(
        result.X, instance.labels.kappa, seed=cfg.seed, restarts=10
    )
    wall = time.perf_counter() - t0
    return nmi(predicted, instance.labels), wall


def dcsbm_benchmark(
    n: int,
    q: int,
    c: float,
    alphas,
    seeds,
    w: int,
    cfg: OptimizerConfig,
    theta_recipe: str = "powerlaw",
):
    """Run the community pipeline over a hardness grid.

    Returns tidy rows (alpha, seed, nmi, wall_time), one per
    alpha/seed combination.
    """
    rows = []
    for alpha in alphas:
        for seed in seeds:
            params = DcsbmParams(
                n=n, q=q, c=c, alpha=float(alpha), theta_recipe=theta_recipe, seed=int(seed)
            )
            instance = dcsbm_sample(params)
            score, wall = community_pipeline(
                instance, w, replace(cfg, seed=int(seed))
            )
            rows.append((float(alpha), int(seed), score, wall))
    return rows
