"""Bundled synthetic multi-task stream with planted sensitive tokens.

Three topic-word classification tasks (banking, medical, legal) stand in for
large public benchmarks.  Each example is a handful of shared function words
plus class-indicative content words; a fraction of training sentences carries
a planted "sensitive" token (fake account ids, rare names) so memorization
and unlearning effects have a known ground truth.  Everything is driven by a
single seed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import TaskCorpus, TokenizedSequence, Vocabulary, build_vocab
from .seeding import spawn_rng

FUNCTION_WORDS = [
    "the", "a", "is", "was", "to", "of", "and", "in", "it", "for",
    "on", "with", "this", "that", "at", "by",
]

# Planted tokens always follow this marker (a stopword, so its embedding is
# never noised): it gives models a clean context through which secrets can be
# memorized, which unlearning should then suppress.
PLANT_TRIGGER = "per"

# (label_a, words_a, label_b, words_b) per topic: task-incremental streams
# with disjoint label tokens, so later tasks really do overwrite earlier ones.
TOPICS = [
    (
        "flagged",
        ["transfer", "overdraft", "wire", "chargeback", "suspicious", "frozen"],
        "routine",
        ["deposit", "savings", "statement", "balance", "branch", "interest"],
    ),
    (
        "urgent",
        ["fracture", "hemorrhage", "seizure", "overdose", "cardiac", "trauma"],
        "stable",
        ["checkup", "vitamins", "allergy", "followup", "therapy", "rest"],
    ),
    (
        "liable",
        ["breach", "negligence", "damages", "injunction", "fraudulent", "violation"],
        "dismissed",
        ["settlement", "mediation", "compliance", "waiver", "notary", "filing"],
    ),
]

_CONSONANTS = "bcdfghjklmnpqrstvwz"
_VOWELS = "aeiou"


@dataclass
class SyntheticStream:
    tasks: list[TaskCorpus]
    vocab: Vocabulary
    sensitive_surfaces: frozenset[str]
    sensitive_ids: frozenset[int]
    label_surfaces: frozenset[str] = frozenset()


def _rare_name(rng) -> str:
    length = int(rng.integers(3, 5))
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(length)
    )


def _fake_id(rng) -> str:
    digits = "".join(str(rng.integers(10)) for _ in range(5))
    return f"acct{digits}"


def _sensitive_pool(rng, size: int) -> list[str]:
    pool: list[str] = []
    seen = set()
    while len(pool) < size:
        surface = _rare_name(rng) if rng.random() < 0.5 else _fake_id(rng)
        if surface not in seen:
            seen.add(surface)
            pool.append(surface)
    return pool


def _topic_for(task_index: int) -> tuple[str, list[str], str, list[str]]:
    la, wa, lb, wb = TOPICS[task_index % len(TOPICS)]
    if task_index < len(TOPICS):
        return la, wa, lb, wb
    sfx = str(task_index // len(TOPICS) + 1)
    return la + sfx, [w + sfx for w in wa], lb + sfx, [w + sfx for w in wb]


def _sentence(rng, class_words: list[str], plant: str | None) -> list[str]:
    content = list(rng.choice(class_words, size=3, replace=False))
    fillers = list(rng.choice(FUNCTION_WORDS, size=3, replace=True))
    words = []
    for c, f in zip(content, fillers):
        words.extend([f, c])
    if plant is not None:
        # Secrets lead the sentence behind their marker, so every occurrence
        # shares the same clean left context.
        words[0:0] = [PLANT_TRIGGER, plant]
    return words


def synthetic_stream(
    num_tasks: int = 3,
    train_per_task: int = 300,
    eval_per_task: int = 100,
    seed: int = 0,
    plant_rate: float = 0.15,
    plants_per_task: int = 20,
) -> SyntheticStream:
    """Generate the seeded multi-task stream (task ids 1..num_tasks).

    Sensitive tokens are planted only in training sentences, one per planted
    sentence, at ``plant_rate``; each task draws them from a pool of
    ``plants_per_task`` distinct secrets (smaller pools repeat more, so they
    are easier to memorize).
    """
    if num_tasks < 1:
        raise ValueError(f"num_tasks must be >= 1, got {num_tasks}")
    if train_per_task < 1 or eval_per_task < 1:
        raise ValueError("train_per_task and eval_per_task must be >= 1")

    rng = spawn_rng(seed, "synthetic-stream")
    per_task: list[dict] = []
    sensitive: list[str] = []
    for idx in range(num_tasks):
        label_a, words_a, label_b, words_b = _topic_for(idx)
        pool = _sensitive_pool(rng, size=plants_per_task)
        sensitive.extend(pool)
        records = {"train": [], "eval": []}
        for split, count in (("train", train_per_task), ("eval", eval_per_task)):
            for _ in range(count):
                label, words = (label_a, words_a) if rng.random() < 0.5 else (label_b, words_b)
                plant = None
                if split == "train" and rng.random() < plant_rate:
                    plant = pool[int(rng.integers(len(pool)))]
                records[split].append((" ".join(_sentence(rng, words, plant)), label))
        per_task.append(
            {"task_id": idx + 1, "records": records, "labels": [label_a, label_b]}
        )

    texts = [
        text
        for task in per_task
        for split in ("train", "eval")
        for text, _ in task["records"][split]
    ]
    labels = [lab for task in per_task for lab in task["labels"]]
    vocab = build_vocab(texts, labels)

    tasks = []
    for task in per_task:
        groups: dict[str, list[TokenizedSequence]] = {"train": [], "eval": []}
        label_ids = set()
        for split in ("train", "eval"):
            for text, label in task["records"][split]:
                lab_id = vocab.id_of(label)
                label_ids.add(lab_id)
                groups[split].append(
                    TokenizedSequence(
                        tokens=vocab.encode(text) + [lab_id],
                        task_id=task["task_id"],
                        label_token=lab_id,
                    )
                )
        tasks.append(
            TaskCorpus(
                task_id=task["task_id"],
                train=groups["train"],
                eval=groups["eval"],
                label_set=label_ids,
                vocab=vocab,
            )
        )

    surfaces = frozenset(sensitive)
    return SyntheticStream(
        tasks=tasks,
        vocab=vocab,
        sensitive_surfaces=surfaces,
        sensitive_ids=vocab.ids_of(surfaces),
        label_surfaces=frozenset(lab for task in per_task for lab in task["labels"]),
    )
