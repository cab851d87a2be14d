"""Sequential multi-task training under pecl / seqft / uniform_dp modes,
task-by-task evaluation, and the continual-learning metrics.

Modes share the same model, adapter lifecycle (one evolving adapter, warm
started per task), data order, and optimizer; they differ only in noise and
loss assembly:

* ``pecl``      : frozen per-task sensitivity profiles, per-token budgets and
                  Gaussian noise on input embeddings, drift regularization
                  against the previous task's adapter delta, and thresholded
                  unlearning.
* ``seqft``     : task loss only, no noise, empty ledger.
* ``uniform_dp``: fixed-epsilon noise on every non-stopword input token,
                  task loss only.

R[k][i] is the accuracy on the i-th task of the order after training tasks
1..k; BWT, Last and Avg are computed from that lower-triangular matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import PAD_ID, CorpusStats, TaskCorpus, compute_corpus_stats
from .errors import DataError, NumericError
from .privacy import (
    PrivacyConfig,
    PrivacyLedger,
    assign_budgets,
    noise_sigma,
    perturb_embedding,
)
from .seeding import spawn_rng
from .sculpt import (
    AdapterSnapshot,
    ImportanceState,
    SculptConfig,
    dynamic_lambda,
    mean_task_sensitivity,
    reg_loss,
    task_importance,
    unlearn_loss,
    update_running_importance,
)
from .sensitivity import ProfileEntry, SensitivityConfig, build_profile
from .tinylm import (
    AdamW,
    LoraAdapter,
    LossSpec,
    TinyLM,
    backward,
    cosine_lr,
    forward,
    init_adapter,
    init_lm,
    lora_delta,
    sgd_step,
    token_losses,
)

MODES = ("pecl", "seqft", "uniform_dp")
STATS_SCOPES = ("seen", "all")
UNLEARN_MODES = ("suppress", "additive")
OPTIMIZERS = ("sgd", "adamw")


@dataclass
class RunConfig:
    """Everything a run needs; fully determines the trajectory given the seed."""

    mode: str = "pecl"
    task_order: list[int] | None = None
    epochs: int = 3
    batch_size: int = 32
    lr: float = 5e-4
    seed: int = 0
    optimizer: str = "sgd"
    weight_decay: float = 0.0  # adamw mode only
    d_emb: int = 32
    n_ctx: int = 8
    d_hidden: int = 64
    rank: int = 4
    tau: float = 0.2
    stats_scope: str = "seen"
    uniform_eps: float = 1.0
    unlearn_mode: str = "suppress"
    delta_prime: float = 1e-6
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    sculpt: SculptConfig = field(default_factory=SculptConfig)
    corpus: str = "synthetic"
    num_tasks: int = 3
    train_per_task: int = 300
    eval_per_task: int = 100
    stopword_file: str | None = None  # provenance for replay; the words live in .sensitivity

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.stats_scope not in STATS_SCOPES:
            raise ValueError(f"stats_scope must be one of {STATS_SCOPES}, got {self.stats_scope!r}")
        if self.unlearn_mode not in UNLEARN_MODES:
            raise ValueError(
                f"unlearn_mode must be one of {UNLEARN_MODES}, got {self.unlearn_mode!r}"
            )
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.uniform_eps <= 0:
            raise ValueError(f"uniform_eps must be positive, got {self.uniform_eps}")
        if not 0.0 < self.delta_prime < 1.0:
            raise ValueError(f"delta_prime must be in (0, 1), got {self.delta_prime}")
        for name in ("d_emb", "n_ctx", "d_hidden", "rank", "num_tasks",
                     "train_per_task", "eval_per_task"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.task_order is not None:
            if len(set(self.task_order)) != len(self.task_order):
                raise ValueError("task_order must not repeat task ids")


@dataclass
class AccuracyMatrix:
    """Lower-triangular accuracies: values[k-1, i-1] = R_{k,i} for i <= k."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"accuracy matrix must be square, got shape {v.shape}")
        tri = np.tril_indices(v.shape[0])
        if not np.isfinite(v[tri]).all():
            raise DataError("incomplete accuracy matrix: lower triangle has gaps")
        if (v[tri] < 0).any() or (v[tri] > 1).any():
            raise ValueError("accuracies must lie in [0, 1]")
        self.values = v

    @property
    def num_tasks(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AccuracyMatrix":
        n = len(rows)
        values = np.full((n, n), np.nan)
        for k, row in enumerate(rows, start=1):
            if len(row) != k:
                raise DataError(f"row {k} must have {k} entries, got {len(row)}")
            values[k - 1, :k] = row
        return cls(values)

    def rows(self) -> list[list[float]]:
        return [[float(v) for v in self.values[k, : k + 1]] for k in range(self.num_tasks)]


def bwt(matrix: AccuracyMatrix) -> float:
    """Mean of R_{N,i} - R_{i,i} over i < N; needs at least two tasks."""
    n = matrix.num_tasks
    if n < 2:
        raise ValueError("BWT requires at least 2 tasks")
    v = matrix.values
    return float(np.mean([v[n - 1, i] - v[i, i] for i in range(n - 1)]))


def last_acc(matrix: AccuracyMatrix) -> float:
    """Mean of the final row."""
    n = matrix.num_tasks
    return float(np.mean(matrix.values[n - 1, :n]))


def avg_acc(matrix: AccuracyMatrix) -> float:
    """Mean over steps k of the running mean accuracy over tasks 1..k."""
    n = matrix.num_tasks
    v = matrix.values
    return float(np.mean([np.mean(v[k, : k + 1]) for k in range(n)]))


@dataclass
class TaskReport:
    """Per-task sculpting diagnostics (None where a mode leaves them undefined)."""

    task_id: int
    omega: float
    omega_bar: float
    s_bar: float | None
    lambda_dyn: float | None
    final_l_reg: float
    final_l_unlearn: float | None


@dataclass
class RunResult:
    matrix: AccuracyMatrix
    ledger: PrivacyLedger
    reports: list[TaskReport]
    model: TinyLM
    adapter: LoraAdapter
    # pecl mode: the frozen task-arrival profiles, keyed by task id, aligned
    # with each task's train list.  Other modes leave this empty.
    profiles: dict[int, list] = field(default_factory=dict)


def evaluate(model: TinyLM, adapter: LoraAdapter | None, task: TaskCorpus) -> float:
    """Fraction of eval sequences whose label-position argmax is the label.

    Forward passes use clean embeddings; evaluation consumes no randomness
    and never mutates the model.
    """
    if not task.eval:
        raise DataError(f"task {task.task_id} has an empty eval set")
    correct = 0
    for seq in task.eval:
        context = seq.tokens[:-1][-model.n_ctx :]
        probs = forward(model, adapter, context)
        if int(np.argmax(probs)) == seq.label_token:
            correct += 1
    return correct / len(task.eval)


def _uniform_entries(
    seq_tokens: list[int],
    stopword_ids: frozenset[int],
    eps: float,
    sigma: float,
) -> list[ProfileEntry]:
    return [
        ProfileEntry(0.0, math.nan, math.nan)
        if tok in stopword_ids
        else ProfileEntry(1.0, eps, sigma)
        for tok in seq_tokens
    ]


def _noisy_rows(
    model: TinyLM,
    seq,
    entries,
    config: PrivacyConfig,
    rng: np.random.Generator,
    ledger: PrivacyLedger,
    sequence_id: str,
    epoch: int,
) -> np.ndarray:
    """Sample one noisy embedding row per consumed position (all but the last).

    The final position is only ever a prediction target, so its embedding is
    never fed to the model and is not an exposure.  ``entries`` is a
    SensitivityProfile or an indexable of ProfileEntry.
    """
    get = entries.entry if hasattr(entries, "entry") else entries.__getitem__
    n = len(seq.tokens)
    rows = np.empty((n - 1, model.d_emb))
    for pos in range(n - 1):
        rows[pos] = perturb_embedding(
            model.embed[seq.tokens[pos]],
            get(pos),
            config,
            rng,
            ledger=ledger,
            sequence_id=sequence_id,
            position=pos,
            epoch=epoch,
        )
    return rows


def _batches(indices: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]


def run_continual(config: RunConfig, corpora: list[TaskCorpus]) -> RunResult:
    """Train tasks sequentially per the configured mode and evaluate after each.

    Deterministic: identical (config, corpora, seed) reproduce the accuracy
    matrix, ledger, reports and final parameters bit for bit.
    """
    by_id = {task.task_id: task for task in corpora}
    order = config.task_order if config.task_order is not None else sorted(by_id)
    missing = [tid for tid in order if tid not in by_id]
    if missing:
        raise DataError(f"task_order references missing tasks: {missing}")
    if set(order) != set(by_id):
        raise DataError(
            "task_order must be a permutation of the provided task ids "
            f"(order {sorted(order)} vs corpus {sorted(by_id)})"
        )
    for task in corpora:
        if not task.train:
            raise DataError(f"task {task.task_id} has no training sequences")
        for seq in task.train + task.eval:
            if len(seq.tokens) < 2:
                raise DataError(
                    f"task {task.task_id} has a sequence with no text before its label; "
                    "next-token training needs at least 2 tokens"
                )

    vocab = corpora[0].vocab
    if vocab is None:
        raise DataError("corpora carry no vocabulary")
    sens_cfg = config.sensitivity.bind(vocab)

    model = init_lm((len(vocab), config.d_emb, config.n_ctx, config.d_hidden),
                    seed=config.seed)
    adapter = init_adapter(model, config.rank, seed=config.seed, task_id=order[0])
    ledger = PrivacyLedger(delta_prime=config.delta_prime)
    noise_rng = spawn_rng(config.seed, "embedding-noise", config.privacy.noise_seed)
    state = ImportanceState()
    snapshot: AdapterSnapshot | None = None
    unlearn_sign = -1.0 if config.unlearn_mode == "suppress" else 1.0
    uniform_sigma = noise_sigma(
        config.uniform_eps, config.privacy.delta, config.privacy.clip_norm,
        config.privacy.sensitivity_variant,
    )

    n_tasks = len(order)
    matrix_values = np.full((n_tasks, n_tasks), np.nan)
    reports: list[TaskReport] = []
    kept_profiles: dict[int, list] = {}

    for k, task_id in enumerate(order, start=1):
        task = by_id[task_id]
        adapter = adapter.copy(task_id=task_id) if k > 1 else adapter
        state.reset_activations()

        seen = [by_id[tid] for tid in order[:k]]
        stats_pool = corpora if config.stats_scope == "all" else seen
        stats: CorpusStats = compute_corpus_stats(stats_pool, config.tau)

        profiles = None
        s_bar = lam_dyn = None
        reg_weight = 0.0
        lambda_unlearn = 0.0
        if config.mode == "pecl":
            profiles = [
                assign_budgets(build_profile(model, adapter, stats, seq, sens_cfg),
                               config.privacy)
                for seq in task.train
            ]
            kept_profiles[task_id] = profiles
            s_bar = mean_task_sensitivity(profiles)
            lam_dyn = dynamic_lambda(s_bar, config.sculpt)
            if k >= 2:
                reg_weight = lam_dyn * state.omega_bar
            lambda_unlearn = config.sculpt.lambda_unlearn

        optimizer = AdamW(weight_decay=config.weight_decay) if config.optimizer == "adamw" else None
        steps_per_epoch = math.ceil(len(task.train) / config.batch_size)
        total_steps = steps_per_epoch * config.epochs
        step = 0
        for epoch in range(config.epochs):
            perm = spawn_rng(config.seed, "shuffle", k, epoch).permutation(len(task.train))
            for batch_idx in _batches(perm, config.batch_size):
                batch = [task.train[i] for i in batch_idx]
                noisy = None
                scores = None
                if config.mode == "pecl":
                    noisy = [
                        _noisy_rows(model, seq, profiles[i], config.privacy, noise_rng,
                                    ledger, f"{task_id}:{i}", epoch)
                        for i, seq in zip(batch_idx, batch)
                    ]
                    scores = [profiles[i].score for i in batch_idx]
                elif config.mode == "uniform_dp":
                    noisy = [
                        _noisy_rows(
                            model, seq,
                            _uniform_entries(seq.tokens, sens_cfg.stopword_ids,
                                             config.uniform_eps, uniform_sigma),
                            config.privacy, noise_rng, ledger, f"{task_id}:{i}", epoch,
                        )
                        for i, seq in zip(batch_idx, batch)
                    ]
                spec = LossSpec(
                    noisy=noisy,
                    scores=scores,
                    theta=config.sculpt.theta,
                    lambda_unlearn=lambda_unlearn,
                    unlearn_sign=unlearn_sign,
                    reg_weight=reg_weight,
                    reg_reference=snapshot.delta_w if reg_weight != 0.0 else None,
                )
                try:
                    grads = backward(model, adapter, batch, spec)
                except NumericError as exc:
                    raise NumericError(
                        f"task {task_id} epoch {epoch}: {exc}"
                    ) from exc
                if optimizer is None:
                    sgd_step(model, adapter, grads, config.lr)
                else:
                    optimizer.step(model, adapter, grads,
                                   cosine_lr(config.lr, step, total_steps))
                step += 1

        # Task wrap-up: importance from the final delta and clean activations.
        for seq in task.train:
            for j in range(1, len(seq.tokens)):
                window = seq.tokens[max(0, j - model.n_ctx) : j]
                x = np.concatenate(
                    [model.embed[PAD_ID]] * (model.n_ctx - len(window))
                    + [model.embed[t] for t in window]
                )
                state.observe_activation(float(np.linalg.norm(x)))
        delta_final = lora_delta(adapter)
        omega_k = task_importance(delta_final, state.activation_norm_accum)
        final_l_reg = reg_loss(delta_final, snapshot,
                               lam_dyn if lam_dyn is not None else 0.0,
                               state.omega_bar) if k >= 2 and config.mode == "pecl" else 0.0
        final_l_unlearn = None
        if config.mode == "pecl":
            per_seq = []
            for seq, prof in zip(task.train, profiles):
                losses, _ = token_losses(model, adapter, seq)
                per_seq.append(unlearn_loss(prof.score[1:], losses, config.sculpt.theta))
            final_l_unlearn = float(np.mean(per_seq))
        state = update_running_importance(state, omega_k)
        snapshot = AdapterSnapshot(task_id=task_id, delta_w=delta_final.copy())
        reports.append(
            TaskReport(
                task_id=task_id,
                omega=omega_k,
                omega_bar=state.omega_bar,
                s_bar=s_bar,
                lambda_dyn=lam_dyn,
                final_l_reg=final_l_reg,
                final_l_unlearn=final_l_unlearn,
            )
        )

        for i in range(k):
            matrix_values[k - 1, i] = evaluate(model, adapter, by_id[order[i]])

    return RunResult(
        matrix=AccuracyMatrix(matrix_values),
        ledger=ledger,
        reports=reports,
        model=model,
        adapter=adapter,
        profiles=kept_profiles,
    )


def metrics_summary(matrix: AccuracyMatrix) -> dict:
    """bwt/last/avg for reporting; single-task runs report BWT as 0.0."""
    if matrix.num_tasks < 2:
        warnings.warn("BWT is undefined for a single task; reporting 0.0", stacklevel=2)
        bwt_value = 0.0
    else:
        bwt_value = bwt(matrix)
    return {"bwt": bwt_value, "last": last_acc(matrix), "avg": avg_acc(matrix)}
