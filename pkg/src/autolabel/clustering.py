"""Streaming mini-batch K-means over pooled mask features.

Centers are updated one point at a time with learning rate 1/count, so
each center is exactly the running mean of the points it has absorbed.
Fitting a corpus therefore never needs more memory than one mini-batch,
and the whole procedure is deterministic given (stream order, k, seed).

Center state is kept in float64. Checkpoints store the float64 bits
losslessly (as a uint16 limb tensor, since the tensor container only
carries f32/u8/u16), plus a float32 view of the centers for
interoperability; resuming from a checkpoint is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .interchange import read_tensor, write_tensor


class UnderPopulatedError(ValueError):
    """First batch holds fewer distinct vectors than requested centers."""


class CheckpointMismatchError(ValueError):
    """Checkpoint disagrees with the expected model shape or version."""


@dataclass
class ClusterModel:
    k: int
    centers: np.ndarray  # float64, shape (k, dim)
    counts: np.ndarray  # uint64, shape (k,); points absorbed per center
    seed: int
    epoch: int = 0
    inertia_history: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    # transient bookkeeping, not persisted
    init_indices: tuple[int, ...] = ()
    _sq_sum: float = 0.0
    _sq_n: int = 0

    @property
    def dim(self) -> int:
        return int(self.centers.shape[1])

    def reset_epoch_accumulators(self) -> None:
        self._sq_sum = 0.0
        self._sq_n = 0

    def epoch_inertia(self) -> float:
        return self._sq_sum / self._sq_n if self._sq_n else float("nan")


def init_centers(first_batch: np.ndarray, k: int, seed: int) -> ClusterModel:
    """Seed k centers from the first batch by the D^2-weighted rule.

    The chosen points count as already absorbed (counts start at 1);
    their batch indices are recorded in init_indices so a fit driver
    can skip re-feeding them.
    """
    X = _as_batch(first_batch)
    n = X.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if np.unique(X, axis=0).shape[0] < k:
        raise UnderPopulatedError(
            f"need {k} distinct vectors to seed {k} centers, batch has fewer"
        )
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen[0]])
    while len(chosen) < k:
        total = d2.sum()
        idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx]))
    return ClusterModel(
        k=k,
        centers=X[chosen].copy(),
        counts=np.ones(k, dtype=np.uint64),
        seed=seed,
        init_indices=tuple(chosen),
    )


def partial_fit(model: ClusterModel, batch: np.ndarray) -> ClusterModel:
    """Absorb a mini-batch, point by point in batch order.

    Each point moves its nearest center (squared Euclidean, ties to the
    lowest index) by 1/count of the residual. Updates are sequential,
    so the result is independent of how the caller parallelizes
    anything upstream.
    """
    X = _as_batch(batch)
    if X.shape[1] != model.dim:
        raise ValueError(f"batch dim {X.shape[1]} != model dim {model.dim}")
    centers, counts = model.centers, model.counts
    for x in X:
        diff = centers - x
        d2 = np.einsum("ij,ij->i", diff, diff)
        c = int(np.argmin(d2))
        model._sq_sum += float(d2[c])
        model._sq_n += 1
        counts[c] += 1
        centers[c] += (x - centers[c]) / counts[c]
    return model


def predict_batch(model: ClusterModel, X: np.ndarray) -> np.ndarray:
    """Nearest-center index per row; pure, ties to the lowest index."""
    X = _as_batch(X)
    if X.shape[1] != model.dim:
        raise ValueError(f"vector dim {X.shape[1]} != model dim {model.dim}")
    out = np.empty(X.shape[0], dtype=np.intp)
    for s in range(0, X.shape[0], 4096):  # bound the (n, k, dim) broadcast
        diff = X[s : s + 4096, None, :] - model.centers[None, :, :]
        d2 = np.einsum("nkj,nkj->nk", diff, diff)
        out[s : s + 4096] = np.argmin(d2, axis=1)
    return out


def predict(model: ClusterModel, x: np.ndarray) -> int:
    return int(predict_batch(model, np.asarray(x)[None, :])[0])


def reseed_empty(model: ClusterModel, candidate_pool: np.ndarray) -> ClusterModel:
    """Replace centers that never absorbed a streamed point.

    A center still at its initial count after a full epoch is moved to
    the pool point farthest from its nearest current center, skipping
    pool points that exactly duplicate an existing center. Deterministic
    given pool order; a pool with no eligible point leaves the center
    unchanged.
    """
    pool = _as_batch(candidate_pool)
    if pool.shape[0] == 0:
        raise ValueError("candidate pool is empty")
    for c in range(model.k):
        if model.counts[c] != 1:
            continue
        diff = pool[:, None, :] - model.centers[None, :, :]
        d2 = np.einsum("nkj,nkj->nk", diff, diff).min(axis=1)
        duplicate = (pool[:, None, :] == model.centers[None, :, :]).all(axis=2).any(axis=1)
        d2 = np.where(duplicate, -np.inf, d2)
        best = int(np.argmax(d2))
        if not np.isfinite(d2[best]):
            continue
        model.centers[c] = pool[best]
        model.counts[c] = 1
    return model


def fit_batches(
    make_batches: Callable[[], Iterable[np.ndarray]],
    k: int,
    seed: int,
    epochs: int = 2,
    tol: float = 1e-4,
    model: ClusterModel | None = None,
    on_epoch_end: Callable[[ClusterModel], None] | None = None,
) -> ClusterModel:
    """Run full epochs over a re-iterable batch stream.

    The first epoch seeds centers from the first batch and skips the
    seed points when streaming it. Fitting stops after `epochs` epochs
    or once mean center displacement over an epoch drops below `tol`.
    Passing a checkpointed model resumes exactly where it left off.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if model is not None and model.converged:
        return model
    start = model.epoch if model is not None else 0
    for epoch in range(start, epochs):
        prev = model.centers.copy() if model is not None else None
        if model is not None:
            model.reset_epoch_accumulators()
        for batch in make_batches():
            if model is None:
                model = init_centers(batch, k, seed)
                model.reset_epoch_accumulators()
                rest = np.delete(_as_batch(batch), list(model.init_indices), axis=0)
                if rest.shape[0]:
                    partial_fit(model, rest)
            else:
                partial_fit(model, batch)
        if model is None:
            raise ValueError("batch stream was empty")
        model.epoch = epoch + 1
        model.inertia_history.append((model.epoch, model.epoch_inertia()))
        if prev is not None:
            displacement = float(np.linalg.norm(model.centers - prev, axis=1).mean())
            if displacement < tol:
                model.converged = True
        if on_epoch_end is not None:
            on_epoch_end(model)
        if model.converged:
            break
    return model


_META_COLUMNS = ("seed", "epoch", "k", "dim", "converged")


def save_checkpoint(model: ClusterModel, path: str | Path) -> None:
    """Write a checkpoint directory; see module docstring for the layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_tensor(model.centers.astype(np.float32), path / "centers.alpt")
    write_tensor(_f64_to_limbs(model.centers), path / "centers64.alpt")
    write_tensor(_u64_to_limbs(model.counts), path / "counts.alpt")
    meta = "\t".join(_META_COLUMNS) + "\n"
    meta += f"{model.seed}\t{model.epoch}\t{model.k}\t{model.dim}\t{int(model.converged)}\n"
    (path / "meta.tsv").write_text(meta, encoding="utf-8")
    lines = ["epoch\tmean_sq_dist"]
    lines += [f"{e}\t{v!r}" for e, v in model.inertia_history]
    (path / "inertia.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path, expected_k: int | None = None) -> ClusterModel:
    path = Path(path)
    try:
        meta_lines = (path / "meta.tsv").read_text(encoding="utf-8").splitlines()
        header, row = meta_lines[0].split("\t"), meta_lines[1].split("\t")
    except (OSError, IndexError) as exc:
        raise CheckpointMismatchError(f"unreadable checkpoint meta in {path}: {exc}") from exc
    if tuple(header) != _META_COLUMNS:
        raise CheckpointMismatchError(f"{path}: unexpected meta columns {header}")
    seed, epoch, k, dim, converged = (int(v) for v in row)
    if expected_k is not None and k != expected_k:
        raise CheckpointMismatchError(f"{path}: checkpoint k={k}, expected k={expected_k}")
    centers = _limbs_to_f64(read_tensor(path / "centers64.alpt"))
    counts = _limbs_to_u64(read_tensor(path / "counts.alpt"))
    if centers.shape != (k, dim) or counts.shape != (k,):
        raise CheckpointMismatchError(
            f"{path}: tensor shapes {centers.shape}/{counts.shape} disagree with meta"
        )
    history = []
    inertia_path = path / "inertia.tsv"
    if inertia_path.exists():
        for line in inertia_path.read_text(encoding="utf-8").splitlines()[1:]:
            e, v = line.split("\t")
            history.append((int(e), float(v)))
    return ClusterModel(
        k=k,
        centers=centers,
        counts=counts,
        seed=seed,
        epoch=epoch,
        inertia_history=history,
        converged=bool(converged),
    )


def models_equal(a: ClusterModel, b: ClusterModel) -> bool:
    """Bit-exact equality of the persisted model state."""
    return (
        a.k == b.k
        and a.seed == b.seed
        and a.epoch == b.epoch
        and a.converged == b.converged
        and a.centers.shape == b.centers.shape
        and np.array_equal(
            a.centers.view(np.uint64), b.centers.view(np.uint64)
        )
        and np.array_equal(a.counts, b.counts)
        and a.inertia_history == b.inertia_history
    )


def _as_batch(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a (n, dim) batch, got shape {X.shape}")
    return X


def _sq_dists(X: np.ndarray, point: np.ndarray) -> np.ndarray:
    diff = X - point
    return np.einsum("ij,ij->i", diff, diff)


def _f64_to_limbs(arr: np.ndarray) -> np.ndarray:
    le = np.ascontiguousarray(arr).astype("<f8")
    return np.frombuffer(le.tobytes(), dtype="<u2").reshape(*arr.shape, 4).copy()


def _limbs_to_f64(limbs: np.ndarray) -> np.ndarray:
    le = np.ascontiguousarray(limbs).astype("<u2")
    return np.frombuffer(le.tobytes(), dtype="<f8").reshape(limbs.shape[:-1]).copy()


def _u64_to_limbs(arr: np.ndarray) -> np.ndarray:
    le = np.ascontiguousarray(arr).astype("<u8")
    return np.frombuffer(le.tobytes(), dtype="<u2").reshape(*arr.shape, 4).copy()


def _limbs_to_u64(limbs: np.ndarray) -> np.ndarray:
    le = np.ascontiguousarray(limbs).astype("<u2")
    return np.frombuffer(le.tobytes(), dtype="<u8").reshape(limbs.shape[:-1]).copy()
