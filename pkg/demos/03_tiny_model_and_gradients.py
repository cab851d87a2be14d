"""The tiny language model: forward pass, low-rank adapters, per-token losses,
and a finite-difference spot check of the analytic gradients."""

import numpy as np

from pecl import (
    LossSpec,
    backward,
    forward,
    init_adapter,
    init_lm,
    lora_delta,
    sgd_step,
    token_losses,
)

model = init_lm((vocab := 12, 8, 4, 10), seed=42)
adapter = init_adapter(model, rank=2, seed=1, task_id=1)

print("== forward ==")
probs = forward(model, adapter, [3, 7, 1])
print(f"distribution over {vocab} tokens, sum = {probs.sum():.15f}")
print(f"adapter starts at delta = B @ A = 0, so it is a no-op: "
      f"{np.array_equal(probs, forward(model, None, [3, 7, 1]))}\n")

print("== token losses ==")
seq = [3, 7, 1, 5, 2]
losses, l_task = token_losses(model, adapter, seq)
print(f"per-token -log P(t_i | t_<i): {np.round(losses, 3)}")
print(f"mean task loss: {l_task:.4f} (uniform would be ln {vocab} = {np.log(vocab):.4f})\n")

print("== analytic vs finite-difference gradient (spot check) ==")
adapter.b[:] = np.random.default_rng(2).normal(scale=0.2, size=adapter.b.shape)
batch = [[3, 7, 1, 5], [2, 4, 9]]
grads = backward(model, adapter, batch, LossSpec())
step = 1e-5
for idx in [(0, 0), (1, 5)]:
    orig = adapter.a[idx]
    adapter.a[idx] = orig + step
    up = sum(token_losses(model, adapter, s)[1] for s in batch) / len(batch)
    adapter.a[idx] = orig - step
    down = sum(token_losses(model, adapter, s)[1] for s in batch) / len(batch)
    adapter.a[idx] = orig
    fd = (up - down) / (2 * step)
    print(f"dL/dA{idx}: analytic {grads.a[idx]:+.8f}, finite difference {fd:+.8f}")

print("\n== one SGD step moves only the adapter (base weights stay frozen) ==")
w_before = model.w_hidden.copy()
delta_before = lora_delta(adapter).copy()
sgd_step(model, adapter, grads, lr=0.5)
print(f"base hidden weights unchanged: {np.array_equal(model.w_hidden, w_before)}")
print(f"adapter delta moved by {np.linalg.norm(lora_delta(adapter) - delta_before):.6f} (Frobenius)")
loss_after = sum(token_losses(model, adapter, s)[1] for s in batch) / len(batch)
print(f"batch loss after the step: {loss_after:.4f} (was {grads.l_task:.4f})")
