"""N-way K-shot episode sampling with an adversarial source pool.

An episode carries a labelled support set and query set drawn from N sampled
classes, plus an unlabelled source set drawn from classes outside the
episode.  Sampling is deterministic under a seeded generator; samplers with
independent generators may run in parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, Example

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeSpec:
    """Episode shape: N classes, K support and L query examples per class."""

    n_way: int
    k_shot: int
    l_query: int

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.l_query < 1:
            raise ValueError("l_query must be >= 1")


@dataclass(frozen=True)
class Episode:
    """One sampled task.  Labels in support/query are local (0..N-1)."""

    support: tuple[tuple[Example, int], ...]
    query: tuple[tuple[Example, int], ...]
    source: tuple[Example, ...]
    episode_classes: tuple[int, ...]  # sorted global class ids
    support_indices: tuple[int, ...]
    query_indices: tuple[int, ...]
    source_indices: tuple[int, ...]

    @property
    def n_way(self) -> int:
        return len(self.episode_classes)


def relabel(episode: Episode) -> dict[int, int]:
    """Bijection from the episode's global class ids to 0..N-1 (sorted order)."""
    return {c: i for i, c in enumerate(sorted(episode.episode_classes))}


def sample_episode(dataset: Dataset, allowed_classes, spec: EpisodeSpec,
                   rng: np.random.Generator, source_excludes: str = "all",
                   with_source: bool = True) -> Episode:
    """Sample one episode from ``allowed_classes``.

    Per class, K+L examples are drawn without replacement and split into
    support and query.  The source set (N*L examples) is drawn from allowed
    classes outside the episode; ``source_excludes="current"`` instead
    excludes only the class being iterated per draw, so other episode
    classes may leak into the source set.  ``with_source=False`` skips the
    source draw entirely (evaluation episodes never use it).
    """
    if source_excludes not in ("all", "current"):
        raise ValueError(f"source_excludes must be 'all' or 'current', got {source_excludes!r}")
    need = spec.k_shot + spec.l_query
    allowed = sorted(allowed_classes)
    eligible = [c for c in allowed if len(dataset.class_index.get(c, ())) >= need]
    if len(eligible) < len(allowed) and len(eligible) >= spec.n_way:
        logger.warning("excluding %d class(es) with fewer than %d examples",
                       len(allowed) - len(eligible), need)
    if len(eligible) < spec.n_way:
        raise ValueError(
            f"need {spec.n_way} classes with >= {need} examples, have {len(eligible)}")

    chosen = rng.choice(len(eligible), size=spec.n_way, replace=False)
    classes = sorted(eligible[i] for i in chosen)
    local = {c: i for i, c in enumerate(classes)}

    support, query = [], []
    sup_idx, qry_idx = [], []
    for c in classes:
        pool = np.asarray(dataset.class_index[c], dtype=np.intp)
        pick = rng.choice(pool, size=need, replace=False)
        for j in pick[:spec.k_shot]:
            support.append((dataset.examples[j], local[c]))
            sup_idx.append(int(j))
        for j in pick[spec.k_shot:]:
            query.append((dataset.examples[j], local[c]))
            qry_idx.append(int(j))

    src_idx: list[int] = []
    if with_source:
        n_src_per_class = spec.l_query
        if source_excludes == "all":
            pools = [np.asarray(dataset.class_index[c], dtype=np.intp)
                     for c in allowed if c not in local]
            pool = np.concatenate(pools) if pools else np.empty(0, dtype=np.intp)
            n_src = spec.n_way * n_src_per_class
            if pool.size < n_src:
                raise ValueError(
                    f"source pool has {pool.size} examples, need {n_src}")
            src_idx = [int(j) for j in rng.choice(pool, size=n_src, replace=False)]
        else:
            for c in classes:
                pools = [np.asarray(dataset.class_index[cc], dtype=np.intp)
                         for cc in allowed if cc != c]
                pool = np.concatenate(pools) if pools else np.empty(0, dtype=np.intp)
                if pool.size < n_src_per_class:
                    raise ValueError(
                        f"source pool has {pool.size} examples, need {n_src_per_class}")
                src_idx.extend(int(j) for j in rng.choice(pool, size=n_src_per_class,
                                                          replace=False))
    source = tuple(dataset.examples[j] for j in src_idx)

    return Episode(
        support=tuple(support),
        query=tuple(query),
        source=source,
        episode_classes=tuple(classes),
        support_indices=tuple(sup_idx),
        query_indices=tuple(qry_idx),
        source_indices=tuple(src_idx),
    )
