import numpy as np
import pytest

from pecl.corpus import TaskCorpus, TokenizedSequence
from pecl.errors import DataError
from pecl.synthetic import synthetic_stream
from pecl.tinylm import init_lm
from pecl.trainer import (
    AccuracyMatrix,
    RunConfig,
    avg_acc,
    bwt,
    evaluate,
    last_acc,
    metrics_summary,
    run_continual,
)


def matrix_n2():
    return AccuracyMatrix.from_rows([[0.5], [0.4, 0.6]])


def small_config(**overrides):
    defaults = dict(
        mode="pecl",
        epochs=1,
        batch_size=16,
        seed=11,
        num_tasks=2,
        train_per_task=30,
        eval_per_task=10,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def small_stream(config):
    return synthetic_stream(
        num_tasks=config.num_tasks,
        train_per_task=config.train_per_task,
        eval_per_task=config.eval_per_task,
        seed=config.seed,
    )


def test_bwt_examples():
    assert bwt(matrix_n2()) == pytest.approx(-0.1, rel=1e-9)
    flat = AccuracyMatrix.from_rows([[0.7], [0.7, 0.2], [0.7, 0.2, 0.9]])
    assert bwt(flat) == pytest.approx(0.0, abs=1e-15)
    improving = AccuracyMatrix.from_rows([[0.5], [0.8, 0.6]])
    assert bwt(improving) > 0


def test_bwt_requires_two_tasks():
    with pytest.raises(ValueError):
        bwt(AccuracyMatrix.from_rows([[0.5]]))


def test_last_acc_examples():
    assert last_acc(matrix_n2()) == pytest.approx(0.5, rel=1e-12)
    ones = AccuracyMatrix.from_rows([[1.0], [1.0, 1.0]])
    assert last_acc(ones) == 1.0
    single = AccuracyMatrix.from_rows([[0.37]])
    assert last_acc(single) == pytest.approx(0.37)


def test_avg_acc_examples():
    assert avg_acc(matrix_n2()) == pytest.approx(0.5, rel=1e-12)
    v = 0.42
    const = AccuracyMatrix.from_rows([[v], [v, v], [v, v, v]])
    assert avg_acc(const) == pytest.approx(v, rel=1e-12)


def test_metrics_match_brute_force_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        rows = [list(rng.uniform(0, 1, size=k + 1)) for k in range(n)]
        m = AccuracyMatrix.from_rows(rows)
        brute_bwt = sum(rows[n - 1][i] - rows[i][i] for i in range(n - 1)) / (n - 1)
        brute_last = sum(rows[n - 1]) / n
        brute_avg = sum(sum(r) / len(r) for r in rows) / n
        assert bwt(m) == pytest.approx(brute_bwt, abs=1e-12)
        assert last_acc(m) == pytest.approx(brute_last, abs=1e-12)
        assert avg_acc(m) == pytest.approx(brute_avg, abs=1e-12)


def test_metrics_summary_single_task_warns_and_reports_zero():
    m = AccuracyMatrix.from_rows([[0.8]])
    with pytest.warns(UserWarning, match="BWT"):
        summary = metrics_summary(m)
    assert summary["bwt"] == 0.0
    assert summary["last"] == pytest.approx(0.8)


def test_accuracy_matrix_validation():
    with pytest.raises(DataError):
        AccuracyMatrix.from_rows([[0.5], [0.4]])
    with pytest.raises(ValueError):
        AccuracyMatrix.from_rows([[1.5]])
    incomplete = np.full((2, 2), np.nan)
    incomplete[0, 0] = 0.5
    with pytest.raises(DataError):
        AccuracyMatrix(incomplete)


def eval_task(sequences, label_tokens, task_id=1):
    seqs = [
        TokenizedSequence(tokens=list(ctx) + [lab], task_id=task_id, label_token=lab)
        for ctx, lab in zip(sequences, label_tokens)
    ]
    return TaskCorpus(task_id=task_id, train=[], eval=seqs, label_set=set(label_tokens))


def test_evaluate_forced_correct_model():
    model = init_lm((6, 4, 3, 5), seed=0)
    model.w_out[:] = 0.0
    model.b_out[:] = -50.0
    model.b_out[3] = 50.0
    task = eval_task([[1, 2], [2, 4], [5, 1]], [3, 3, 3])
    assert evaluate(model, None, task) == 1.0


def test_evaluate_random_labels_hit_rate_near_one_over_c():
    c = 6
    model = init_lm((c, 4, 3, 5), seed=1)
    rng = np.random.default_rng(2)
    n = 2000
    contexts = [list(rng.integers(0, c, size=3)) for _ in range(n)]
    labels = [int(rng.integers(0, c)) for _ in range(n)]
    task = eval_task(contexts, labels)
    acc = evaluate(model, None, task)
    p = 1.0 / c
    tol = 4 * np.sqrt(p * (1 - p) / n)
    assert abs(acc - p) < tol


def test_evaluate_is_deterministic_and_pure():
    model = init_lm((6, 4, 3, 5), seed=3)
    before = model.embed.copy()
    task = eval_task([[1, 2], [4, 5]], [2, 3])
    first = evaluate(model, None, task)
    second = evaluate(model, None, task)
    assert first == second
    assert np.array_equal(model.embed, before)


def test_evaluate_empty_eval_set_errors():
    model = init_lm((6, 4, 3, 5), seed=3)
    task = TaskCorpus(task_id=1, train=[], eval=[], label_set=set())
    with pytest.raises(DataError, match="empty eval"):
        evaluate(model, None, task)


def test_run_single_task_gives_1x1_matrix():
    config = small_config(num_tasks=1, mode="seqft")
    result = run_continual(config, small_stream(config).tasks)
    assert result.matrix.num_tasks == 1
    assert len(result.matrix.rows()[0]) == 1
    with pytest.warns(UserWarning):
        assert metrics_summary(result.matrix)["bwt"] == 0.0


def test_seqft_ledger_empty_and_no_sculpting():
    config = small_config(mode="seqft")
    result = run_continual(config, small_stream(config).tasks)
    assert len(result.ledger) == 0
    for report in result.reports:
        assert report.final_l_reg == 0.0
        assert report.s_bar is None and report.lambda_dyn is None
        assert report.final_l_unlearn is None


def test_pecl_ledger_nonempty_with_bounded_epsilons():
    config = small_config(mode="pecl")
    result = run_continual(config, small_stream(config).tasks)
    assert len(result.ledger) > 0
    eps = result.ledger.epsilons()
    assert ((eps >= config.privacy.eps_lower) & (eps <= config.privacy.eps_upper)).all()
    for report in result.reports:
        assert report.s_bar is not None and 0.0 <= report.s_bar < 1.0
        assert config.sculpt.lambda_min <= report.lambda_dyn <= config.sculpt.lambda_max


def test_uniform_dp_ledger_carries_fixed_epsilon():
    config = small_config(mode="uniform_dp", uniform_eps=1.0)
    result = run_continual(config, small_stream(config).tasks)
    assert len(result.ledger) > 0
    eps = result.ledger.epsilons()
    assert (eps == 1.0).all()


def test_run_deterministic_replay():
    config = small_config(mode="pecl", num_tasks=3, train_per_task=25, eval_per_task=8)
    tasks_a = small_stream(config).tasks
    tasks_b = small_stream(config).tasks
    r1 = run_continual(config, tasks_a)
    r2 = run_continual(config, tasks_b)
    assert np.array_equal(r1.matrix.values, r2.matrix.values, equal_nan=True)
    assert r1.ledger.records == r2.ledger.records
    for (_, a), (_, b) in zip(r1.model.param_items(), r2.model.param_items()):
        assert np.array_equal(a, b)
    assert np.array_equal(r1.adapter.a, r2.adapter.a)
    assert np.array_equal(r1.adapter.b, r2.adapter.b)
    assert r1.reports == r2.reports


def test_run_rejects_bad_task_order():
    config = small_config(task_order=[1, 5])
    stream = small_stream(config)
    with pytest.raises(DataError, match="missing tasks"):
        run_continual(config, stream.tasks)
    config2 = small_config(task_order=[1])
    with pytest.raises(DataError, match="permutation"):
        run_continual(config2, stream.tasks)


def test_run_respects_task_order():
    config = small_config(mode="seqft", task_order=[2, 1])
    result = run_continual(config, small_stream(config).tasks)
    assert [r.task_id for r in result.reports] == [2, 1]


def test_stats_scope_variants_both_run():
    for scope in ("seen", "all"):
        config = small_config(stats_scope=scope, train_per_task=20, eval_per_task=5)
        result = run_continual(config, small_stream(config).tasks)
        assert result.matrix.num_tasks == 2


def test_run_config_validation():
    with pytest.raises(ValueError, match="mode"):
        RunConfig(mode="finetune")
    with pytest.raises(ValueError, match="epochs"):
        RunConfig(epochs=0)
    with pytest.raises(ValueError, match="task_order"):
        RunConfig(task_order=[1, 1])


def test_synthetic_stream_shape_and_determinism():
    a = synthetic_stream(num_tasks=3, train_per_task=40, eval_per_task=15, seed=5)
    b = synthetic_stream(num_tasks=3, train_per_task=40, eval_per_task=15, seed=5)
    assert [t.task_id for t in a.tasks] == [1, 2, 3]
    for ta, tb in zip(a.tasks, b.tasks):
        assert len(ta.train) == 40 and len(ta.eval) == 15
        assert [s.tokens for s in ta.train] == [s.tokens for s in tb.train]
    assert a.sensitive_surfaces == b.sensitive_surfaces
    c = synthetic_stream(num_tasks=3, train_per_task=40, eval_per_task=15, seed=6)
    assert [s.tokens for s in c.tasks[0].train] != [s.tokens for s in a.tasks[0].train]


def test_synthetic_stream_plants_sensitive_tokens_in_train_only():
    stream = synthetic_stream(num_tasks=3, train_per_task=200, eval_per_task=50, seed=0)
    assert stream.sensitive_ids
    train_hits = sum(
        1
        for task in stream.tasks
        for seq in task.train
        if any(t in stream.sensitive_ids for t in seq.tokens)
    )
    eval_hits = sum(
        1
        for task in stream.tasks
        for seq in task.eval
        if any(t in stream.sensitive_ids for t in seq.tokens)
    )
    assert eval_hits == 0
    total_train = sum(len(task.train) for task in stream.tasks)
    assert 0.05 < train_hits / total_train < 0.3


def test_synthetic_stream_labels_are_last_tokens():
    stream = synthetic_stream(num_tasks=2, train_per_task=10, eval_per_task=5, seed=1)
    for task in stream.tasks:
        for seq in task.train + task.eval:
            assert seq.tokens[-1] == seq.label_token
            assert seq.label_token in task.label_set
