"""Per-token privacy sensitivity scoring.

Two complementary signals are fused per token position:

* predictive uncertainty ``score1 = -ln P(t_i | t_<i)`` under the current
  (adapted) model, on clean embeddings, and
* contextual discriminativeness ``score2 = (1/N) * sum_n p_n(t) * ln(N / (1 + d(t)))``
  over the observed tasks,

combined as ``score = 1 - exp(-(alpha * score1 + (1 - alpha) * score2))``,
which lies in [0, 1).  Stopword positions are forced to score 0 after fusion,
and the first position, which has no predictive context, uses score1 = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .corpus import CorpusStats, Token, Vocabulary, load_stopwords
from .tinylm import LoraAdapter, TinyLM, token_losses


@dataclass(frozen=True)
class SensitivityConfig:
    alpha: float = 0.5
    stopwords: frozenset[str] = field(default_factory=load_stopwords)
    clamp_negative_score2: bool = True
    stopword_ids: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")

    def bind(self, vocab: Vocabulary) -> "SensitivityConfig":
        """Resolve the stopword surfaces against a vocabulary."""
        return replace(self, stopword_ids=vocab.ids_of(self.stopwords))


class ProfileEntry(NamedTuple):
    score: float
    epsilon: float
    sigma: float


@dataclass
class SensitivityProfile:
    """Per-position scores for one sequence, frozen for a task's epochs.

    ``epsilon``/``sigma`` stay NaN until a privacy budget is assigned; they
    are defined exactly for positions with score > 0.
    """

    tokens: list[int]
    score1: np.ndarray
    score2: np.ndarray
    score: np.ndarray
    is_stopword: np.ndarray
    epsilon: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)

    def entry(self, pos: int) -> ProfileEntry:
        return ProfileEntry(
            score=float(self.score[pos]),
            epsilon=float(self.epsilon[pos]),
            sigma=float(self.sigma[pos]),
        )


def surprisal_score(
    model: TinyLM, adapter: LoraAdapter | None, seq, i: int
) -> float:
    """-ln P(t_i | t_<i) for 1-indexed position i >= 2, on clean embeddings."""
    ids = list(seq.tokens) if hasattr(seq, "tokens") else list(seq)
    if not 2 <= i <= len(ids):
        raise ValueError(f"position {i} out of range for a length-{len(ids)} sequence")
    losses, _ = token_losses(model, adapter, ids)
    return float(losses[i - 2])


def contextual_score(
    stats: CorpusStats, token: Token | int, clamp: bool = True
) -> float:
    """Cross-task discriminativeness of a token; optionally clamped at 0.

    The raw value goes negative once a token's support d(t) reaches N, which
    would break the non-negativity the fused score relies on, hence the clamp.
    """
    token_id = token.id if isinstance(token, Token) else int(token)
    n_tasks = stats.num_tasks_observed
    total = sum(stats.salience(tid, token_id) for tid in stats.task_ids)
    if total == 0.0:
        return 0.0
    raw = (total / n_tasks) * math.log(n_tasks / (1.0 + stats.support_of(token_id)))
    return max(raw, 0.0) if clamp else raw


def fuse_scores(score1, score2, alpha: float):
    """Fused sensitivity 1 - exp(-(alpha*score1 + (1-alpha)*score2)) in [0, 1).

    Accepts scalars or numpy arrays; both scores must be non-negative.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    s1 = np.asarray(score1, dtype=float)
    s2 = np.asarray(score2, dtype=float)
    if (s1 < 0).any() or (s2 < 0).any():
        raise ValueError("scores must be non-negative")
    fused = 1.0 - np.exp(-(alpha * s1 + (1.0 - alpha) * s2))
    if fused.ndim == 0:
        return float(fused)
    return fused


def build_profile(
    model: TinyLM,
    adapter: LoraAdapter | None,
    stats: CorpusStats,
    seq,
    config: SensitivityConfig,
) -> SensitivityProfile:
    """Score every position of a sequence with the model state of the moment.

    Stopword positions are zeroed after fusion; budgets are left unassigned
    (see privacy.assign_budgets).
    """
    ids = list(seq.tokens) if hasattr(seq, "tokens") else list(seq)
    n = len(ids)
    score1 = np.zeros(n)
    if n >= 2:
        losses, _ = token_losses(model, adapter, ids)
        score1[1:] = losses

    s2_cache: dict[int, float] = {}
    score2 = np.empty(n)
    for pos, tok in enumerate(ids):
        if tok not in s2_cache:
            s2_cache[tok] = contextual_score(stats, tok, clamp=config.clamp_negative_score2)
        score2[pos] = s2_cache[tok]

    score = np.asarray(fuse_scores(score1, score2, config.alpha))
    is_stop = np.array([tok in config.stopword_ids for tok in ids])
    score[is_stop] = 0.0

    return SensitivityProfile(
        tokens=ids,
        score1=score1,
        score2=score2,
        score=score,
        is_stopword=is_stop,
        epsilon=np.full(n, np.nan),
        sigma=np.full(n, np.nan),
    )
