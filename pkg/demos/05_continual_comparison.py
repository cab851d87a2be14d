"""The headline experiment: sequential training on the bundled synthetic
stream under the three modes, plus the no-unlearning ablation.

Runs in about a minute on one core.  The configuration matches the desk-scale
recipe used by the acceptance suite: SGD (so that unlearning weights keep
their scale), label surfaces treated as public stopwords, and epsilon /
lambda ranges recalibrated to this model size.
"""

import numpy as np

from pecl import (
    PrivacyConfig,
    RunConfig,
    SculptConfig,
    SensitivityConfig,
    bwt,
    compose_sequence,
    load_stopwords,
    metrics_summary,
    run_continual,
    synthetic_stream,
    token_losses,
)

SEED = 0
stream = synthetic_stream(num_tasks=3, train_per_task=200, eval_per_task=80,
                          seed=SEED, plant_rate=0.35, plants_per_task=4)
stopwords = frozenset(load_stopwords() | stream.label_surfaces)


def config(mode, lambda_unlearn=3.5):
    return RunConfig(
        mode=mode, seed=SEED, lr=1.0, epochs=24, batch_size=8, optimizer="sgd",
        sensitivity=SensitivityConfig(alpha=0.5, stopwords=stopwords),
        privacy=PrivacyConfig(sensitivity_variant="main_text", clip_norm=0.3,
                              eps_lower=8.0, eps_upper=80.0),
        sculpt=SculptConfig(lambda_max=1e-4, lambda_min=1e-5,
                            lambda_unlearn=lambda_unlearn),
        num_tasks=3, train_per_task=200, eval_per_task=80,
    )


def planted_loss(result):
    total, count = 0.0, 0
    for task in stream.tasks:
        for seq in task.train:
            hits = [j for j in range(1, len(seq.tokens))
                    if seq.tokens[j] in stream.sensitive_ids]
            if not hits:
                continue
            losses, _ = token_losses(result.model, result.adapter, seq)
            for j in hits:
                total += losses[j - 1]
                count += 1
    return total / count


results = {}
for label, cfg in (
    ("seqft", config("seqft")),
    ("uniform_dp", config("uniform_dp")),
    ("pecl", config("pecl")),
    ("pecl (no unlearning)", config("pecl", lambda_unlearn=0.0)),
):
    results[label] = run_continual(cfg, stream.tasks)

print(f"{'mode':>22} {'bwt':>8} {'last':>7} {'avg':>7} {'noise records':>14}")
for label, result in results.items():
    summary = metrics_summary(result.matrix)
    print(f"{label:>22} {summary['bwt']:>+8.3f} {summary['last']:>7.3f} "
          f"{summary['avg']:>7.3f} {len(result.ledger):>14}")

print("\naccuracy matrices (row k = after training k tasks):")
for label in ("seqft", "pecl"):
    print(f"  {label}:")
    for row in results[label].matrix.rows():
        print("   ", [round(v, 3) for v in row])

print("\nsequential fine-tuning overwrites earlier tasks; the sculpted run")
print("trades peak accuracy for retention, so its backward transfer is near 0.")

print("\nper-task sculpting report (pecl):")
print(f"{'task':>5} {'Omega':>8} {'Omega_bar':>10} {'s_bar':>7} {'lambda_dyn':>11}")
for rep in results["pecl"].reports:
    print(f"{rep.task_id:>5} {rep.omega:>8.3f} {rep.omega_bar:>10.3f} "
          f"{rep.s_bar:>7.3f} {rep.lambda_dyn:>11.5f}")

print("\nmemorization of planted secrets (mean clean loss, higher = less memorized):")
for label in ("pecl", "pecl (no unlearning)", "seqft"):
    print(f"  {label:>22}: {planted_loss(results[label]):.3f}")

eps_total, delta_total = compose_sequence(results["pecl"].ledger, delta_prime=1e-6)
print(f"\ncomposed budget over the whole pecl run: eps_total = {eps_total:,.1f} "
      f"across {len(results['pecl'].ledger)} exposures (delta_total = {delta_total:.1e})")
print("Composition over every exposure of a full training run is intentionally")
print("loose; the per-token guarantee is the unit this mechanism accounts for.")
