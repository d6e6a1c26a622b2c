"""Rank-threshold union of the similarity and utility rankings.

A candidate is admitted when its similarity score reaches the k_R-th
largest similarity score, or its utility score reaches the k_U-th largest
utility score. Thresholds use ``>=`` so every document tied at a threshold
gets in, which can push the admitted set past ``k_R + k_U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import CandidatePoolMismatch, InputError, KExceedsListLength
from .records import SENTINEL_ID
from .retriever import ScoredDoc, rank


class Admit(str, Enum):
    BY_SIMILARITY = "by_similarity"
    BY_UTILITY = "by_utility"
    BOTH = "both"


@dataclass(frozen=True)
class FusionConfig:
    k_sim: int
    k_util: int
    total_k: int

    def __post_init__(self) -> None:
        if self.k_sim < 0 or self.k_util < 0:
            raise InputError("k_sim and k_util must be non-negative")
        if self.k_sim + self.k_util < 1:
            raise InputError("k_sim + k_util must be >= 1")
        if self.total_k < 1:
            raise InputError("total_k must be >= 1")

    @classmethod
    def from_total(cls, total_k: int, k_sim: int | None = None, k_util: int | None = None) -> FusionConfig:
        """Half of ``total_k`` (rounded down) per channel unless overridden.

        ``total_k == 1`` would give zero per channel, so the utility channel
        gets the single slot.
        """
        half = total_k // 2
        ks = half if k_sim is None else k_sim
        ku = half if k_util is None else k_util
        if ks + ku == 0 and k_util is None:
            ku = 1
        return cls(ks, ku, total_k)


@dataclass(frozen=True)
class AdmittedSet:
    doc_ids: tuple[str, ...]
    admit_flags: dict[str, Admit]

    def __len__(self) -> int:
        return len(self.doc_ids)


def thresholds(scored: Sequence[ScoredDoc], k: int) -> float:
    """The k-th largest score; ``+inf`` for ``k == 0`` (channel admits nothing)."""
    if k < 0:
        raise InputError("k must be non-negative")
    if k == 0:
        return math.inf
    if k > len(scored):
        raise KExceedsListLength(f"k={k} but only {len(scored)} scores")
    return sorted((s.score for s in scored), reverse=True)[k - 1]


def fuse(sim_scored: Sequence[ScoredDoc], util_scored: Sequence[ScoredDoc], config: FusionConfig) -> AdmittedSet:
    """Admit by either channel; utility-admitted first, then similarity-only.

    The sentinel is dropped from both lists. ``k`` larger than the pool is
    clamped to the pool size.
    """
    sim = {s.doc_id: s.score for s in sim_scored if s.doc_id != SENTINEL_ID}
    util = {s.doc_id: s.score for s in util_scored if s.doc_id != SENTINEL_ID}
    if sim.keys() != util.keys():
        raise CandidatePoolMismatch("similarity and utility scores cover different candidates")
    if not sim:
        return AdmittedSet((), {})
    sim_list = [s for s in sim_scored if s.doc_id != SENTINEL_ID]
    util_list = [s for s in util_scored if s.doc_id != SENTINEL_ID]
    zeta_sim = thresholds(sim_list, min(config.k_sim, len(sim)))
    zeta_util = thresholds(util_list, min(config.k_util, len(util)))

    flags: dict[str, Admit] = {}
    for doc_id in sim:
        by_s = sim[doc_id] >= zeta_sim
        by_u = util[doc_id] >= zeta_util
        if by_s and by_u:
            flags[doc_id] = Admit.BOTH
        elif by_u:
            flags[doc_id] = Admit.BY_UTILITY
        elif by_s:
            flags[doc_id] = Admit.BY_SIMILARITY

    util_first = [i for i, _ in rank({i: util[i] for i, f in flags.items() if f is not Admit.BY_SIMILARITY})]
    sim_only = [i for i, _ in rank({i: sim[i] for i, f in flags.items() if f is Admit.BY_SIMILARITY})]
    return AdmittedSet(tuple(util_first + sim_only), flags)
