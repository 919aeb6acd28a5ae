"""End-to-end runs: embeddings from a trained model and the pruning benchmark"""

import logging
from typing import Optional, Sequence

import pandas as pd

from ..models.records import EmbeddingSet, Variant
from ..pruning.pruner import prune_by_score, prune_random
from ..scoring.dynamic_uncertainty import DuConfig, score_traces_du
from .attack import AttackConfig
from .data import Dataset, make_blobs
from .model import ToyModel, embed
from .trainer import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


def embed_dataset(model: ToyModel, dataset: Dataset) -> EmbeddingSet:
    """Penultimate activations of every sample, labeled"""
    return dataset.to_embeddings(embed(model, dataset.inputs))


def compare_pruning(
    seeds: Sequence[int],
    train_cfg: TrainConfig,
    attack: AttackConfig,
    fraction: float = 0.25,
    hidden: Sequence[int] = (16,),
    n_per_class: int = 500,
    n_classes: int = 2,
    dim: int = 2,
    separation: float = 3.0,
    spread: float = 0.1,
    window: int = 10,
    eval_attack: Optional[AttackConfig] = None,
) -> pd.DataFrame:
    """DU-pruned vs randomly pruned retraining, one row per seed.

    Per seed: train adversarially recording adversarial traces, score them
    with DU, remove `fraction` keep-high and the same count at random,
    retrain from the same initialization on each kept set and measure PGD
    robust accuracy on a held-out blob sample.
    """
    eval_attack = eval_attack or attack
    sizes = [dim, *hidden, n_classes]
    rows = []
    for seed in seeds:
        data = make_blobs(n_per_class, n_classes, dim, separation, seed, spread)
        test = make_blobs(n_per_class, n_classes, dim, separation, seed + 100_000, spread)
        cfg = train_cfg.model_copy(update={"seed": seed, "record_variants": (Variant.ADVERSARIAL,)})
        init = ToyModel.initialize(sizes, seed)

        scoring = train(init, data, cfg, attack)
        scores = score_traces_du(scoring.traces[Variant.ADVERSARIAL], DuConfig(window=window))
        by_du = prune_by_score(scores, fraction=fraction)
        by_chance = prune_random(list(data.ids), count=len(by_du.removed), seed=seed)

        retrain_cfg = cfg.model_copy(update={"record_variants": ()})
        row = {"seed": seed, "removed": len(by_du.removed)}
        for name, manifest in (("du", by_du), ("random", by_chance)):
            result = train(init, data, retrain_cfg, attack, keep_ids=manifest.kept)
            clean, robust = evaluate(result.model, test, eval_attack, seed)
            row[f"{name}_clean"] = clean
            row[f"{name}_robust"] = robust
        logger.info(
            f"seed {seed}: DU-pruned robust {row['du_robust']:.4f}, random-pruned robust {row['random_robust']:.4f}"
        )
        rows.append(row)
    return pd.DataFrame(rows)
