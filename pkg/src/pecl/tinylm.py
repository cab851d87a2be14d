"""A fixed-context MLP language model with low-rank per-task adapters.

Architecture: embedding lookup for the last ``n_ctx`` tokens (left-padded
with PAD), concatenation, one tanh hidden layer, softmax over the vocabulary.
The hidden layer is the single adapted layer: its effective weight is
``W0 + B @ A`` when an adapter is attached, and W0 is frozen in that case.

All parameters are float64 and every forward/backward is exact arithmetic,
so analytic gradients can be checked against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import PAD_ID
from .errors import NumericError
from .seeding import spawn_rng


@dataclass
class TinyLM:
    vocab: int
    d_emb: int
    n_ctx: int
    d_hidden: int
    seed: int
    embed: np.ndarray      # (vocab, d_emb)
    w_hidden: np.ndarray   # (d_hidden, n_ctx * d_emb)
    b_hidden: np.ndarray   # (d_hidden,)
    w_out: np.ndarray      # (vocab, d_hidden)
    b_out: np.ndarray      # (vocab,)

    @property
    def d_in(self) -> int:
        return self.n_ctx * self.d_emb

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("embed", self.embed),
            ("w_hidden", self.w_hidden),
            ("b_hidden", self.b_hidden),
            ("w_out", self.w_out),
            ("b_out", self.b_out),
        ]

    def copy(self) -> "TinyLM":
        return TinyLM(
            vocab=self.vocab,
            d_emb=self.d_emb,
            n_ctx=self.n_ctx,
            d_hidden=self.d_hidden,
            seed=self.seed,
            embed=self.embed.copy(),
            w_hidden=self.w_hidden.copy(),
            b_hidden=self.b_hidden.copy(),
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
        )


@dataclass
class LoraAdapter:
    """Low-rank update for one layer: the effective delta is ``b @ a``."""

    a: np.ndarray          # (rank, d_in)
    b: np.ndarray          # (d_out, rank)
    rank: int
    task_id: int
    layer_id: str = "hidden"

    def __post_init__(self) -> None:
        if self.a.shape[0] != self.rank or self.b.shape[1] != self.rank:
            raise ValueError("adapter factor shapes do not match the declared rank")
        if self.rank > min(self.a.shape[1], self.b.shape[0]):
            raise ValueError("rank exceeds min(d_in, d_out)")

    def copy(self, task_id: int | None = None) -> "LoraAdapter":
        return LoraAdapter(
            a=self.a.copy(),
            b=self.b.copy(),
            rank=self.rank,
            task_id=self.task_id if task_id is None else task_id,
            layer_id=self.layer_id,
        )


def lora_delta(adapter: LoraAdapter) -> np.ndarray:
    """Materialize the low-rank update ``b @ a`` (shape d_out x d_in)."""
    if adapter.b.shape[1] != adapter.a.shape[0]:
        raise ValueError(
            f"shape mismatch: b is {adapter.b.shape}, a is {adapter.a.shape}"
        )
    return adapter.b @ adapter.a


def init_lm(dims: tuple[int, int, int, int], seed: int) -> TinyLM:
    """Create a model with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameters.

    ``dims`` is (vocab, d_emb, n_ctx, d_hidden); all must be >= 1.  The same
    (dims, seed) pair always yields bitwise-identical parameters.
    """
    vocab, d_emb, n_ctx, d_hidden = dims
    for name, v in zip(("vocab", "d_emb", "n_ctx", "d_hidden"), dims):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    rng = spawn_rng(seed, "tinylm-init")
    d_in = n_ctx * d_emb

    def u(scale: float, shape) -> np.ndarray:
        return rng.uniform(-scale, scale, size=shape)

    return TinyLM(
        vocab=vocab,
        d_emb=d_emb,
        n_ctx=n_ctx,
        d_hidden=d_hidden,
        seed=seed,
        embed=u(1.0 / np.sqrt(d_emb), (vocab, d_emb)),
        w_hidden=u(1.0 / np.sqrt(d_in), (d_hidden, d_in)),
        b_hidden=u(1.0 / np.sqrt(d_in), (d_hidden,)),
        w_out=u(1.0 / np.sqrt(d_hidden), (vocab, d_hidden)),
        b_out=u(1.0 / np.sqrt(d_hidden), (vocab,)),
    )


def init_adapter(model: TinyLM, rank: int, seed: int, task_id: int) -> LoraAdapter:
    """Fresh adapter: random A, zero B, so the initial delta is exactly 0."""
    if rank < 1 or rank > min(model.d_in, model.d_hidden):
        raise ValueError(f"rank must be in [1, {min(model.d_in, model.d_hidden)}], got {rank}")
    rng = spawn_rng(seed, "adapter-init", task_id)
    a = rng.uniform(-1.0 / np.sqrt(model.d_in), 1.0 / np.sqrt(model.d_in), size=(rank, model.d_in))
    b = np.zeros((model.d_hidden, rank))
    return LoraAdapter(a=a, b=b, rank=rank, task_id=task_id)


def _sequence_ids(seq) -> list[int]:
    return list(seq.tokens) if hasattr(seq, "tokens") else list(seq)


def _effective_hidden(model: TinyLM, adapter: LoraAdapter | None) -> np.ndarray:
    if adapter is None:
        return model.w_hidden
    return model.w_hidden + lora_delta(adapter)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _context_x(
    model: TinyLM,
    ids: list[int],
    start: int,
    end: int,
    noisy: np.ndarray | None,
) -> tuple[np.ndarray, list[int]]:
    """Concatenated input for the window ids[start:end], left-padded to n_ctx.

    Returns the input vector and, per slot, the embedding row it was read
    from (PAD_ID for padding, -1 when the slot came from ``noisy``).
    """
    window = ids[start:end]
    n_pad = model.n_ctx - len(window)
    rows = []
    sources = []
    for _ in range(n_pad):
        rows.append(model.embed[PAD_ID])
        sources.append(PAD_ID)
    for offset, tok in enumerate(window):
        pos = start + offset
        if noisy is not None:
            rows.append(noisy[pos])
            sources.append(-1)
        else:
            rows.append(model.embed[tok])
            sources.append(tok)
    return np.concatenate(rows), sources


def _check_ids(model: TinyLM, ids: Sequence[int]) -> None:
    for tok in ids:
        if not 0 <= tok < model.vocab:
            raise ValueError(f"token id {tok} out of vocab range [0, {model.vocab})")


def forward(
    model: TinyLM,
    adapter: LoraAdapter | None,
    context: Sequence[int],
    noisy_embeddings: np.ndarray | None = None,
) -> np.ndarray:
    """Predictive distribution over the vocabulary given a context.

    The context must not exceed ``n_ctx`` tokens and is left-padded with PAD.
    When ``noisy_embeddings`` is given (one row per context position) those
    vectors replace the embedding lookup.
    """
    ids = list(context)
    _check_ids(model, ids)
    if len(ids) > model.n_ctx:
        raise ValueError(f"context length {len(ids)} exceeds n_ctx={model.n_ctx}")
    if noisy_embeddings is not None:
        noisy_embeddings = np.asarray(noisy_embeddings, dtype=float)
        if noisy_embeddings.shape != (len(ids), model.d_emb):
            raise ValueError(
                f"noisy embeddings must have shape ({len(ids)}, {model.d_emb}), "
                f"got {noisy_embeddings.shape}"
            )
    x, _ = _context_x(model, ids, 0, len(ids), noisy_embeddings)
    w_eff = _effective_hidden(model, adapter)
    h = np.tanh(w_eff @ x + model.b_hidden)
    logits = model.w_out @ h + model.b_out
    return _softmax_rows(logits)


def _position_batch(
    model: TinyLM,
    adapter: LoraAdapter | None,
    ids: list[int],
    noisy: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[list[int]]]:
    """Forward every predicted position of one sequence in a single batch.

    Returns (X, H, P, losses, slot_sources) where row j corresponds to
    predicting ids[j+1] from its preceding window.
    """
    n = len(ids)
    n_pred = n - 1
    X = np.empty((n_pred, model.d_in))
    slot_sources: list[list[int]] = []
    for j in range(1, n):
        start = max(0, j - model.n_ctx)
        X[j - 1], sources = _context_x(model, ids, start, j, noisy)
        slot_sources.append(sources)
    w_eff = _effective_hidden(model, adapter)
    H = np.tanh(X @ w_eff.T + model.b_hidden)
    P = _softmax_rows(H @ model.w_out.T + model.b_out)
    targets = np.asarray(ids[1:])
    losses = -np.log(P[np.arange(n_pred), targets])
    return X, H, P, losses, slot_sources


def _validate_noisy(model: TinyLM, n: int, noisy: np.ndarray | None) -> np.ndarray | None:
    if noisy is None:
        return None
    noisy = np.asarray(noisy, dtype=float)
    if noisy.ndim != 2 or noisy.shape[1] != model.d_emb or noisy.shape[0] not in (n, n - 1):
        raise ValueError(
            f"per-position embeddings must be ({n} or {n - 1}) x {model.d_emb}, got {noisy.shape}"
        )
    return noisy


def token_losses(
    model: TinyLM,
    adapter: LoraAdapter | None,
    seq,
    noisy_embeddings: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Per-token cross-entropy losses and their mean.

    Position i >= 2 contributes -log P(t_i | t_<i); the appended label token
    is included.  ``noisy_embeddings`` carries one row per sequence position
    (the final row is never consumed and may be omitted).
    """
    ids = _sequence_ids(seq)
    if len(ids) < 2:
        raise ValueError("sequence must have at least 2 tokens to produce a loss")
    _check_ids(model, ids)
    noisy = _validate_noisy(model, len(ids), noisy_embeddings)
    _, _, _, losses, _ = _position_batch(model, adapter, ids, noisy)
    return losses, float(losses.mean())


@dataclass
class LossSpec:
    """How backward() assembles the training objective for a batch.

    The objective is

        J = L_task + reg_weight * ||delta - reg_reference||_F^2
                   + unlearn_sign * lambda_unlearn * L_unlearn

    where L_task is the mean over sequences of their mean token loss and
    L_unlearn is the thresholded, sensitivity-weighted token loss.  With the
    default ``unlearn_sign=-1`` the flagged tokens' gradient contribution is
    suppressed; +1 adds the term as a plain penalty instead.  ``scores`` and
    ``noisy`` hold one entry per batch sequence (None allowed per entry);
    score arrays may cover all positions or just the predicted ones.
    """

    noisy: Sequence[np.ndarray | None] | None = None
    scores: Sequence[np.ndarray | None] | None = None
    theta: float = 0.6
    lambda_unlearn: float = 0.0
    unlearn_sign: float = -1.0
    reg_weight: float = 0.0          # lambda_dyn * omega_bar, premultiplied
    reg_reference: np.ndarray | None = None


@dataclass
class GradientBundle:
    """Gradients congruent with the trainable parameters, plus loss parts.

    Adapter mode fills ``a``/``b`` and leaves base entries None; full-finetune
    mode (no adapter) fills the base entries instead.
    """

    embed: np.ndarray | None = None
    w_hidden: np.ndarray | None = None
    b_hidden: np.ndarray | None = None
    w_out: np.ndarray | None = None
    b_out: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    token_losses: list[np.ndarray] = field(default_factory=list)
    l_task: float = 0.0
    l_reg: float = 0.0
    l_unlearn: float = 0.0
    objective: float = 0.0

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in ("embed", "w_hidden", "b_hidden", "w_out", "b_out", "a", "b"):
            arr = getattr(self, name)
            if arr is not None:
                out.append((name, arr))
        return out


def _aligned_scores(scores: np.ndarray | None, n_pred: int) -> np.ndarray | None:
    if scores is None:
        return None
    s = np.asarray(scores, dtype=float)
    if s.shape[0] == n_pred + 1:
        s = s[1:]
    if s.shape[0] != n_pred:
        raise ValueError(f"scores length {s.shape[0]} does not align with {n_pred} predicted tokens")
    return s


def backward(
    model: TinyLM,
    adapter: LoraAdapter | None,
    batch: Sequence,
    loss_spec: LossSpec | None = None,
) -> GradientBundle:
    """Exact gradients of the assembled objective over a batch.

    With an adapter attached only its factors receive gradients (W0 and the
    rest of the base stay frozen); without one, all base parameters do.
    Positions read from per-position noisy embeddings contribute no gradient
    to the embedding table: the perturbed vectors are fixed inputs.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    spec = loss_spec or LossSpec()
    nbatch = len(batch)

    d_w_eff = np.zeros_like(model.w_hidden)
    d_b_hidden = np.zeros_like(model.b_hidden)
    d_w_out = np.zeros_like(model.w_out)
    d_b_out = np.zeros_like(model.b_out)
    d_embed = np.zeros_like(model.embed) if adapter is None else None
    w_eff = _effective_hidden(model, adapter)

    all_losses: list[np.ndarray] = []
    l_task = 0.0
    l_unlearn = 0.0
    for s_idx, seq in enumerate(batch):
        ids = _sequence_ids(seq)
        if len(ids) < 2:
            raise ValueError("every batch sequence needs at least 2 tokens")
        _check_ids(model, ids)
        noisy = None
        if spec.noisy is not None:
            noisy = _validate_noisy(model, len(ids), spec.noisy[s_idx])
        X, H, P, losses, slot_sources = _position_batch(model, adapter, ids, noisy)
        if not np.isfinite(losses).all():
            raise NumericError("non-finite token loss encountered")
        all_losses.append(losses)
        n_pred = len(losses)
        l_task += losses.mean() / nbatch

        # Per-position objective weights: task term plus the unlearning term
        # for tokens whose frozen sensitivity score exceeds theta.
        weights = np.full(n_pred, 1.0 / (nbatch * n_pred))
        scores = None
        if spec.scores is not None:
            scores = _aligned_scores(spec.scores[s_idx], n_pred)
        if scores is not None:
            flagged = scores > spec.theta
            if flagged.any():
                margin = np.where(flagged, scores - spec.theta, 0.0)
                l_unlearn += float((margin * losses).sum()) / (n_pred * nbatch)
                if spec.lambda_unlearn != 0.0:
                    weights = weights + (
                        spec.unlearn_sign * spec.lambda_unlearn * margin / (n_pred * nbatch)
                    )

        targets = np.asarray(ids[1:])
        dU = P.copy()
        dU[np.arange(n_pred), targets] -= 1.0
        dU *= weights[:, None]
        d_w_out += dU.T @ H
        d_b_out += dU.sum(axis=0)
        dH = dU @ model.w_out
        dZ = dH * (1.0 - H * H)
        d_w_eff += dZ.T @ X
        d_b_hidden += dZ.sum(axis=0)
        if d_embed is not None:
            dX = dZ @ w_eff
            for j, sources in enumerate(slot_sources):
                dx_slots = dX[j].reshape(model.n_ctx, model.d_emb)
                for slot, src in enumerate(sources):
                    if src >= 0:
                        d_embed[src] += dx_slots[slot]

    l_reg = 0.0
    d_a = d_b = None
    if adapter is not None:
        delta = lora_delta(adapter)
        reg_grad = None
        if spec.reg_weight != 0.0 and spec.reg_reference is not None:
            drift = delta - spec.reg_reference
            l_reg = float(spec.reg_weight * (drift * drift).sum())
            reg_grad = 2.0 * spec.reg_weight * drift
        d_delta = d_w_eff if reg_grad is None else d_w_eff + reg_grad
        d_a = adapter.b.T @ d_delta
        d_b = d_delta @ adapter.a.T

    objective = l_task + l_reg + spec.unlearn_sign * spec.lambda_unlearn * l_unlearn
    if not np.isfinite(objective):
        raise NumericError("non-finite total loss")

    return GradientBundle(
        embed=d_embed,
        w_hidden=d_w_eff if adapter is None else None,
        b_hidden=d_b_hidden if adapter is None else None,
        w_out=d_w_out if adapter is None else None,
        b_out=d_b_out if adapter is None else None,
        a=d_a,
        b=d_b,
        token_losses=all_losses,
        l_task=float(l_task),
        l_reg=float(l_reg),
        l_unlearn=float(l_unlearn),
        objective=float(objective),
    )


def _trainable_pairs(
    model: TinyLM, adapter: LoraAdapter | None, grads: GradientBundle
) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    if adapter is not None:
        if grads.a is not None:
            pairs.append((adapter.a, grads.a))
        if grads.b is not None:
            pairs.append((adapter.b, grads.b))
    else:
        for name, param in model.param_items():
            g = getattr(grads, name)
            if g is not None:
                pairs.append((param, g))
    return pairs


def sgd_step(
    model: TinyLM, adapter: LoraAdapter | None, grads: GradientBundle, lr: float
) -> None:
    """In-place update p <- p - lr * g for every trainable parameter."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    pairs = _trainable_pairs(model, adapter, grads)
    for _, g in pairs:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")
    for p, g in pairs:
        p -= lr * g


class AdamW:
    """Decoupled-weight-decay Adam; the optional optimizer mode.

    Pair with ``cosine_lr`` to reproduce a cosine-annealed schedule.
    """

    def __init__(
        self,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(
        self,
        model: TinyLM,
        adapter: LoraAdapter | None,
        grads: GradientBundle,
        lr: float,
    ) -> None:
        pairs = _trainable_pairs(model, adapter, grads)
        for _, g in pairs:
            if not np.isfinite(g).all():
                raise NumericError("non-finite gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for slot, (p, g) in enumerate(pairs):
            m = self._m.setdefault(slot, np.zeros_like(p))
            v = self._v.setdefault(slot, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr to 0 over total_steps."""
    if total_steps <= 1:
        return base_lr
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def save_checkpoint(path: str | Path, model: TinyLM, adapter: LoraAdapter | None = None) -> None:
    """Write a bit-exact checkpoint (.npz with a JSON metadata entry)."""
    meta = {
        "vocab": model.vocab,
        "d_emb": model.d_emb,
        "n_ctx": model.n_ctx,
        "d_hidden": model.d_hidden,
        "seed": model.seed,
        "task_id": adapter.task_id if adapter is not None else None,
        "rank": adapter.rank if adapter is not None else None,
    }
    arrays = {name: arr for name, arr in model.param_items()}
    if adapter is not None:
        arrays["adapter_a"] = adapter.a
        arrays["adapter_b"] = adapter.b
    # Write through a file object so the exact path is kept (np.savez would
    # append .npz to a bare path).
    with Path(path).open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[TinyLM, LoraAdapter | None]:
    """Read a checkpoint written by ``save_checkpoint``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        model = TinyLM(
            vocab=meta["vocab"],
            d_emb=meta["d_emb"],
            n_ctx=meta["n_ctx"],
            d_hidden=meta["d_hidden"],
            seed=meta["seed"],
            embed=data["embed"].copy(),
            w_hidden=data["w_hidden"].copy(),
            b_hidden=data["b_hidden"].copy(),
            w_out=data["w_out"].copy(),
            b_out=data["b_out"].copy(),
        )
        adapter = None
        if meta["rank"] is not None:
            adapter = LoraAdapter(
                a=data["adapter_a"].copy(),
                b=data["adapter_b"].copy(),
                rank=meta["rank"],
                task_id=meta["task_id"],
            )
    return model, adapter
