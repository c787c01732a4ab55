"""
Fold Service

Stratified three-fold split and the rotation of (train, validation, test) roles
across the three evaluation rounds.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NUM_FOLDS = 3
NUM_GENRES = 10
TRACKS_PER_GENRE = 100
# (train, validation, test) per round; each fold takes each role exactly once.
ROUND_ROLES = ((1, 2, 3), (2, 3, 1), (3, 1, 2))


class FoldProtocolError(Exception):
    """Dataset or split violates the fold protocol"""

    def __init__(self, message: str, offending: Dict[str, int] = None):
        super().__init__(message)
        self.offending = offending or {}


class ProtocolViolationError(FoldProtocolError):
    """Leakage across folds or label inconsistency detected at batch assembly"""
    pass


@dataclass(frozen=True)
class RoundRoles:
    index: int
    train: int
    validation: int
    test: int


@dataclass
class FoldPlan:
    assignment: Dict[str, int]
    seed: int
    labels: Dict[str, int] = field(default_factory=dict)
    rounds: Tuple[Tuple[int, int, int], ...] = ROUND_ROLES

    def fold_of(self, track_id: str) -> int:
        try:
            return self.assignment[track_id]
        except KeyError:
            raise FoldProtocolError(f"Track {track_id} is not part of the fold plan")

    def tracks_in(self, fold: int) -> List[str]:
        return sorted(t for t, f in self.assignment.items() if f == fold)

    def roles(self, round_index: int) -> RoundRoles:
        """Roles for round 1, 2 or 3."""
        if not 1 <= round_index <= len(self.rounds):
            raise FoldProtocolError(f"Round must be in 1..{len(self.rounds)}, got {round_index}")
        train, validation, test = self.rounds[round_index - 1]
        return RoundRoles(round_index, train, validation, test)

    def fold_sizes(self) -> Dict[int, int]:
        sizes = {fold: 0 for fold in range(1, NUM_FOLDS + 1)}
        for fold in self.assignment.values():
            sizes[fold] += 1
        return sizes


def _group_by_genre(tracks: Iterable[Tuple[str, int]]) -> Dict[int, List[str]]:
    groups: Dict[int, List[str]] = defaultdict(list)
    seen = set()
    for track_id, genre in tracks:
        if track_id in seen:
            raise FoldProtocolError(f"Duplicate track id {track_id}")
        seen.add(track_id)
        groups[int(genre)].append(track_id)
    return groups


def fold_quota(count: int) -> List[int]:
    """Per-fold sizes for ``count`` tracks of one genre: count // 3 each, remainder to the lowest folds."""
    base, remainder = divmod(count, NUM_FOLDS)
    return [base + (1 if fold < remainder else 0) for fold in range(NUM_FOLDS)]


def make_folds(tracks: Sequence[Tuple[str, int]], seed: int, strict: bool = True) -> FoldPlan:
    """
    Shuffle each genre with ``seed`` and deal it into folds of 34/33/33.

    ``tracks`` is a sequence of (track_id, genre_label). In strict mode every one
    of the ten genres must hold exactly 100 tracks; otherwise fold sizes follow
    ``fold_quota`` per genre.
    """
    groups = _group_by_genre(tracks)
    if strict:
        counts = {str(g): len(groups.get(g, [])) for g in range(NUM_GENRES)}
        offending = {g: n for g, n in counts.items() if n != TRACKS_PER_GENRE}
        extra = sorted(g for g in groups if not 0 <= g < NUM_GENRES)
        if offending or extra:
            offending.update({str(g): len(groups[g]) for g in extra})
            detail = ", ".join(f"genre {g}: {n}" for g, n in sorted(offending.items()))
            raise FoldProtocolError(
                f"Each of {NUM_GENRES} genres needs exactly {TRACKS_PER_GENRE} tracks ({detail})", offending
            )

    rng = np.random.default_rng(seed)
    assignment: Dict[str, int] = {}
    labels: Dict[str, int] = {}
    for genre in sorted(groups):
        ids = sorted(groups[genre])
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        quota = fold_quota(len(ids))
        if not strict and min(quota) == 0:
            logger.warning(f"[PREPARE] Genre {genre} has {len(ids)} tracks; some folds receive none")
        start = 0
        for fold, size in enumerate(quota, start=1):
            for track_id in shuffled[start:start + size]:
                assignment[track_id] = fold
                labels[track_id] = genre
            start += size

    plan = FoldPlan(assignment=assignment, seed=seed, labels=labels)
    logger.info(f"[PREPARE] Fold sizes {plan.fold_sizes()} (seed={seed})")
    return plan


def check_assignment(plan: FoldPlan, round_index: int, role: str, origins: Iterable[str]):
    """Raise ProtocolViolationError if any origin track does not belong to the fold playing ``role``."""
    roles = plan.roles(round_index)
    fold = getattr(roles, role)
    leaked = sorted({o for o in origins if plan.assignment.get(o) != fold})
    if leaked:
        raise ProtocolViolationError(
            f"Round {round_index} {role} set draws from tracks outside fold {fold}: {leaked[:5]}"
        )
