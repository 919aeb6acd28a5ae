"""Kept/removed manifests from score tables, and overlap between pruned sets"""

import logging
import math
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import ValidationError
from ..models.records import Direction, PruneManifest, PrunePolicy, ScoreTable

logger = logging.getLogger(__name__)


def removal_count(n: int, fraction: Optional[float] = None, count: Optional[int] = None) -> int:
    """Number of samples to remove: floor(fraction * n), or count as given"""
    if (fraction is None) == (count is None):
        raise ValidationError("give exactly one of fraction and count")
    if count is not None:
        if not 0 <= count <= n:
            raise ValidationError(f"count {count} outside [0, {n}]")
        return int(count)
    if not (0.0 <= fraction < 1.0):
        raise ValidationError(f"fraction must be in [0, 1), got {fraction}")
    return math.floor(fraction * n)


def _ranking(scores: ScoreTable, ids: Sequence[str], direction: Direction) -> List[str]:
    """ids in removal order: least important first, ties by sample id"""
    if Direction(direction) == Direction.KEEP_HIGH:
        return sorted(ids, key=lambda i: (scores.entries[i], i))
    return sorted(ids, key=lambda i: (-scores.entries[i], i))


def _manifest(universe: Sequence[str], removed: Sequence[str], policy: PrunePolicy) -> PruneManifest:
    gone = set(removed)
    return PruneManifest(
        kept=sorted(i for i in universe if i not in gone),
        removed=sorted(gone),
        policy=policy,
    )


def _class_quotas(
    class_sizes: Dict[int, int],
    total: int,
    fraction: Optional[float],
    count: Optional[int],
) -> Dict[int, int]:
    """Per-class removal counts summing to total.

    Each class first gets floor(q_c), q_c = fraction * n_c (or count * n_c / n).
    Leftover removals go one per class in descending order of q_c - floor(q_c),
    ties to the lower class index.
    """
    n = sum(class_sizes.values())
    exact: Dict[int, float] = {}
    for c, size in class_sizes.items():
        exact[c] = Fraction(count * size, n) if count is not None else fraction * size
    quotas = {c: min(math.floor(q), class_sizes[c]) for c, q in exact.items()}
    remainder = {c: exact[c] - quotas[c] for c in quotas}

    extra = total - sum(quotas.values())
    if extra >= 0:
        order = sorted(quotas, key=lambda c: (-remainder[c], c))
        for c in order:
            if extra == 0:
                break
            if quotas[c] < class_sizes[c]:
                quotas[c] += 1
                extra -= 1
    else:
        # Float products can floor above the global floor; give the surplus back
        order = sorted(quotas, key=lambda c: (remainder[c], -c))
        for c in order:
            if extra == 0:
                break
            if quotas[c] > 0:
                quotas[c] -= 1
                extra += 1
    return quotas


def _by_class(ids: Sequence[str], labels: Mapping[str, int]) -> Dict[int, List[str]]:
    missing = [i for i in ids if i not in labels]
    if missing:
        raise ValidationError(f"{len(missing)} ids have no label, e.g. '{sorted(missing)[0]}'")
    groups: Dict[int, List[str]] = {}
    for sample_id in ids:
        groups.setdefault(int(labels[sample_id]), []).append(sample_id)
    return dict(sorted(groups.items()))


def prune_by_score(
    scores: ScoreTable,
    fraction: Optional[float] = None,
    direction: Direction = Direction.KEEP_HIGH,
    count: Optional[int] = None,
) -> PruneManifest:
    """Remove the least important samples across the whole set"""
    if len(scores) == 0:
        raise ValidationError("cannot prune an empty score table")
    direction = Direction(direction)
    ids = scores.ids
    total = removal_count(len(ids), fraction, count)
    removed = _ranking(scores, ids, direction)[:total]

    logger.info(f"Pruning {total} of {len(ids)} samples by {scores.metric.value} ({direction.value})")
    return _manifest(ids, removed, PrunePolicy(
        fraction=fraction, count=count, direction=direction, metric=scores.metric.value,
    ))


def prune_balanced(
    scores: ScoreTable,
    labels: Mapping[str, int],
    fraction: Optional[float] = None,
    direction: Direction = Direction.KEEP_HIGH,
    count: Optional[int] = None,
) -> PruneManifest:
    """Rank and prune inside each class so class proportions survive"""
    if len(scores) == 0:
        raise ValidationError("cannot prune an empty score table")
    direction = Direction(direction)
    ids = scores.ids
    total = removal_count(len(ids), fraction, count)
    groups = _by_class(ids, labels)
    quotas = _class_quotas({c: len(members) for c, members in groups.items()}, total, fraction, count)

    removed: List[str] = []
    for c, members in groups.items():
        removed.extend(_ranking(scores, members, direction)[:quotas[c]])
        logger.debug(f"class {c}: removing {quotas[c]} of {len(members)}")

    logger.info(
        f"Class-balanced pruning of {total} of {len(ids)} samples over {len(groups)} classes "
        f"by {scores.metric.value} ({direction.value})"
    )
    return _manifest(ids, removed, PrunePolicy(
        fraction=fraction, count=count, direction=direction, balanced=True, metric=scores.metric.value,
    ))


def random_keys(n: int, seed: int) -> np.ndarray:
    """First n raw 64-bit outputs of PCG64(seed)"""
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    return np.random.PCG64(seed).random_raw(n).astype(np.uint64)


def prune_random(
    ids: Sequence[str],
    fraction: Optional[float] = None,
    seed: int = 0,
    labels: Optional[Mapping[str, int]] = None,
    balanced: bool = False,
    count: Optional[int] = None,
) -> PruneManifest:
    """Uniform random removal, per class when balanced.

    Sample i in lexicographic id order gets key i of the PCG64(seed) raw stream;
    the smallest keys are removed.
    """
    ordered = sorted(ids)
    if len(set(ordered)) != len(ordered):
        raise ValidationError("duplicate ids given to the random pruner")
    if balanced and labels is None:
        raise ValidationError("class-balanced random pruning needs labels")
    total = removal_count(len(ordered), fraction, count)
    keys = dict(zip(ordered, random_keys(len(ordered), seed).tolist()))

    def smallest(members: Sequence[str], m: int) -> List[str]:
        return sorted(members, key=lambda i: (keys[i], i))[:m]

    if balanced:
        groups = _by_class(ordered, labels)
        quotas = _class_quotas({c: len(members) for c, members in groups.items()}, total, fraction, count)
        removed = [i for c, members in groups.items() for i in smallest(members, quotas[c])]
    else:
        removed = smallest(ordered, total)

    logger.info(f"Randomly pruning {total} of {len(ordered)} samples (seed {seed}, balanced={balanced})")
    return _manifest(ordered, removed, PrunePolicy(
        fraction=fraction, count=count, balanced=balanced, seed=seed, random=True,
    ))


def overlap(a: PruneManifest, b: PruneManifest) -> float:
    """Share of removed samples the two manifests have in common"""
    if a.universe != b.universe:
        raise ValidationError(
            f"manifests cover different ids ({len(a.universe)} vs {len(b.universe)})"
        )
    if len(a.removed) != len(b.removed):
        raise ValidationError(f"removed sets differ in size: {len(a.removed)} vs {len(b.removed)}")
    if not a.removed:
        return 1.0
    return len(set(a.removed) & set(b.removed)) / len(a.removed)


def class_counts(manifest: PruneManifest, labels: Mapping[str, int]) -> Dict[int, Tuple[int, int]]:
    """class -> (kept, removed)"""
    counts: Dict[int, List[int]] = {}
    for column, members in ((0, manifest.kept), (1, manifest.removed)):
        for sample_id in members:
            counts.setdefault(int(labels[sample_id]), [0, 0])[column] += 1
    return {c: (kept, removed) for c, (kept, removed) in sorted(counts.items())}
