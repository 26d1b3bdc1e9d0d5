"""Fold planning and the cross-validation harness."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..augment import augment_dataset
from ..errors import FoldPlanError
from ..metrics import MetricReport
from ..volgrid import PairedSample
from .config import SEED_AUGMENT, SEED_FOLD, TrainConfig, derive_seed
from .inference import downsample_eval, evaluate_model
from .loops import train


@dataclass(frozen=True)
class FoldPlan:
    kind: str  # "leave_one_out" or "k_fold"
    k: int
    assignments: Tuple[Tuple[Tuple[str, ...], Tuple[str, ...]], ...]  # (train ids, held-out ids) per fold

    def __len__(self) -> int:
        return len(self.assignments)

    def validate(self, subject_ids: Optional[Sequence[str]] = None) -> None:
        """Raise ``FoldPlanError`` on leakage or if held-out sets do not partition the subjects."""
        held_all: List[str] = []
        for i, (tr, held) in enumerate(self.assignments):
            leaked = set(tr) & set(held)
            if leaked:
                raise FoldPlanError(f"fold {i} trains on held-out subjects {sorted(leaked)}")
            if not held or not tr:
                raise FoldPlanError(f"fold {i} has an empty side")
            held_all.extend(held)
        if len(held_all) != len(set(held_all)):
            raise FoldPlanError("a subject is held out in more than one fold")
        universe = set(held_all)
        for i, (tr, held) in enumerate(self.assignments):
            if set(tr) | set(held) != universe:
                raise FoldPlanError(f"fold {i} does not cover every subject")
        if subject_ids is not None and set(subject_ids) != universe:
            raise FoldPlanError("plan subjects differ from the dataset subjects")


def parse_plan_spec(spec: str) -> Tuple[str, Optional[int]]:
    """``"loo"`` or ``"kfold:K"`` -> (kind, k)."""
    if spec == "loo":
        return "leave_one_out", None
    if spec.startswith("kfold:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise FoldPlanError(f"bad fold count in {spec!r}") from None
        return "k_fold", k
    raise FoldPlanError(f"plan must be 'loo' or 'kfold:K', got {spec!r}")


def make_fold_plan(subject_ids: Sequence[str], kind: str = "leave_one_out", k: Optional[int] = None, seed: int = 0,
                   strata: Optional[Mapping[str, str]] = None) -> FoldPlan:
    """Leave-one-out in input order, or seeded k-fold.

    k-fold shuffles subjects with ``seed``; with ``strata`` (subject -> group,
    e.g. acquisition site) subjects are dealt round-robin group by group so each
    fold mixes groups evenly. Fold sizes differ by at most one.
    """
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise FoldPlanError("subject ids must be unique")
    if len(ids) < 2:
        raise FoldPlanError("cross-validation needs at least two subjects")
    if kind in ("loo", "leave_one_out"):
        folds = [[s] for s in ids]
        kind, k = "leave_one_out", len(ids)
    elif kind in ("kfold", "k_fold"):
        if k is None or not 2 <= k <= len(ids):
            raise FoldPlanError(f"k must lie in [2, {len(ids)}], got {k}")
        rng = np.random.default_rng(seed)
        order = [ids[i] for i in rng.permutation(len(ids))]
        if strata is not None:
            missing = [s for s in ids if s not in strata]
            if missing:
                raise FoldPlanError(f"no stratum for {missing}")
            groups = sorted(set(strata.values()))
            order = [s for g in groups for s in order if strata[s] == g]
        folds = [[] for _ in range(k)]
        for i, s in enumerate(order):
            folds[i % k].append(s)
        folds = [sorted(f, key=ids.index) for f in folds]
        kind = "k_fold"
    else:
        raise FoldPlanError(f"unknown plan kind {kind!r}")
    assignments = tuple(
        (tuple(s for s in ids if s not in held), tuple(held)) for held in folds
    )
    plan = FoldPlan(kind, k, assignments)
    plan.validate(ids)
    return plan


def fold_config(cfg: TrainConfig, fold: int) -> TrainConfig:
    """Per-fold copy with seeds derived from the root seed."""
    seed = derive_seed(cfg.seed, SEED_FOLD, fold)
    aug = cfg.augmentation
    if aug is not None:
        aug = replace(aug, seed=derive_seed(seed, SEED_AUGMENT))
    return replace(cfg, seed=seed, augmentation=aug)


def cross_validate(plan: FoldPlan, cfg: TrainConfig, pairs: Sequence[PairedSample],
                   downsample_factors: Sequence[float] = (),
                   on_fold: Optional[Callable[[int, object, object], None]] = None) -> List[MetricReport]:
    """Train one model per fold (augmenting its training side only) and score the held-out subjects.

    Reports are ordered by fold, then subject; for each fold the original
    condition comes first, followed by one block per downsampling factor.
    """
    by_id = {p.subject_id: p for p in pairs}
    if len(by_id) != len(pairs):
        raise FoldPlanError("duplicate subject ids in dataset")
    plan.validate(list(by_id))
    reports: List[MetricReport] = []
    for i, (train_ids, held_ids) in enumerate(plan.assignments):
        fcfg = fold_config(cfg, i)
        train_pairs = [by_id[s] for s in train_ids]
        if fcfg.augmentation is not None:
            train_pairs = augment_dataset(train_pairs, fcfg.augmentation)
        weights, log = train(fcfg, train_pairs)
        held = [by_id[s] for s in held_ids]
        reports.extend(evaluate_model(weights, held, fcfg, fold=i))
        for s in downsample_factors:
            reports.extend(downsample_eval(weights, held, s, fcfg, fold=i))
        if on_fold:
            on_fold(i, weights, log)
    return reports
