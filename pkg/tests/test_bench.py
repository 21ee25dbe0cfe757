import csv
import io
import json
import math

import numpy as np
import pytest

from lowersimpler.autodiff import Tensor
from lowersimpler.bench import (
    Adam,
    AdamState,
    RunConfig,
    TrainReport,
    adam_step,
    emit_report,
    lm_metrics,
    param_audit,
    render_csv,
    render_markdown,
    span_f1,
    span_scores,
    spec_for_task,
    train_run,
)
from lowersimpler.bench.metrics import LMTally, eval_span
from lowersimpler.cells import CellConfig, count_params
from lowersimpler.cli import main as cli_main
from lowersimpler.data import SyntheticTaskSpec, batchify, collate_fn, generate
from lowersimpler.errors import ConfigError, EmptyBatchError, NonFiniteError
from lowersimpler.models import ModelSpec, build_model

# ---------------------------------------------------------------- Adam


def test_adam_first_step_is_minus_lr_sign():
    p = np.zeros(3)
    adam_step([p], [np.array([2.0, -5.0, 1e-3])], AdamState(), lr=0.001)
    np.testing.assert_allclose(p, [-0.001, 0.001, -0.001], rtol=1e-4)


def test_adam_zero_gradient_never_moves():
    p = np.array([0.3, -1.2])
    state = AdamState()
    for _ in range(20):
        adam_step([p], [np.zeros(2)], state, lr=0.1)
    assert p.tolist() == [0.3, -1.2]
    assert state.t == 20


def test_adam_descends_quadratic():
    theta = np.array([1.0])
    state = AdamState()
    values = [theta[0] ** 2]
    for _ in range(10):
        adam_step([theta], [2 * theta.copy()], state, lr=0.05)
        values.append(theta[0] ** 2)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_lr_zero_is_identity(rng):
    p = rng.normal(size=(3, 4))
    before = p.copy()
    state = AdamState()
    for _ in range(5):
        adam_step([p], [rng.normal(size=(3, 4))], state, lr=0.0)
    np.testing.assert_array_equal(p, before)


def test_adam_matches_hand_recurrence():
    p, g = np.array([1.0]), np.array([0.5])
    adam_step([p], [g], state := AdamState(), lr=0.1)
    adam_step([p], [g * 2], state, lr=0.1)
    m = 0.9 * (0.1 * 0.5) + 0.1 * 1.0
    v = 0.999 * (0.001 * 0.25) + 0.001 * 1.0
    step2 = 0.1 * (m / (1 - 0.9 ** 2)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p[0] == pytest.approx(1.0 - 0.1 - step2, rel=1e-6)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(NonFiniteError):
        adam_step([np.zeros(2)], [np.array([1.0, np.nan])], AdamState(), lr=0.1)


def test_adam_wrapper_updates_tensors():
    w = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([w], lr=0.5)
    w.grad[:] = [1.0, -1.0]
    opt.step()
    np.testing.assert_allclose(w.data, [0.5, 1.5], rtol=1e-6)
    opt.zero_grad()
    assert not w.grad.any()


# ---------------------------------------------------------------- metrics


def test_uniform_logits_perplexity_is_vocab_size():
    out = lm_metrics(np.zeros((9, 10)), np.arange(9))
    assert out["ppl"] == 10.0


def test_oracle_logits():
    targets = np.array([3, 1, 4, 1, 5])
    logits = np.full((5, 8), -50.0)
    logits[np.arange(5), targets] = 50.0
    out = lm_metrics(logits, targets)
    assert out["err_rate"] == 0.0
    assert out["ppl"] == pytest.approx(1.0, abs=1e-12)


def test_hand_computed_three_tokens():
    logits = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
    targets = np.array([0, 2, 1])
    nll = [
        -math.log(math.e / (math.e + 2)),
        -math.log(1 / (math.exp(2) + 2)),
        -math.log(1 / 3),
    ]
    out = lm_metrics(logits, targets)
    assert out["ppl"] == pytest.approx(math.exp(sum(nll) / 3), rel=1e-12)
    assert out["err_rate"] == pytest.approx(2 / 3)  # position 3 ties and argmax picks 0


def test_mask_excludes_positions():
    logits = np.zeros((4, 5))
    logits[3, 0] = 100.0
    out = lm_metrics(logits, np.array([0, 0, 0, 1]), mask=np.array([1, 1, 1, 0], bool))
    assert out["ppl"] == pytest.approx(5.0) and out["err_rate"] == 0.0
    with pytest.raises(EmptyBatchError):
        lm_metrics(logits, np.zeros(4, int), mask=np.zeros(4, bool))


def test_tally_blocks_equal_single_block(rng):
    logits, targets = rng.normal(size=(50, 7)), rng.integers(0, 7, size=50)
    tally = LMTally()
    for i in range(0, 50, 13):
        tally.add(logits[i:i + 13], targets[i:i + 13], np.ones(len(targets[i:i + 13]), bool))
    whole = lm_metrics(logits, targets)
    assert tally.result()["ppl"] == pytest.approx(whole["ppl"], rel=1e-13)
    assert tally.result()["err_rate"] == whole["err_rate"]


def test_span_f1_examples():
    assert span_f1(["a", "b"], ["b", "c"]) == 0.5
    assert span_f1(["a"], ["b"]) == 0.0
    assert span_f1(["a", "a", "b"], ["a", "b"]) == pytest.approx(0.8)
    passage = ["w", "x", "y", "z"]
    assert span_scores((1, 2), (1, 2), passage) == (1.0, 1.0)
    assert span_scores((0, 0), (3, 3), passage) == (0.0, 0.0)


def test_em_never_exceeds_f1(rng):
    for _ in range(300):
        T = int(rng.integers(1, 10))
        passage = rng.integers(0, 4, size=T).tolist()
        pred = tuple(sorted(rng.integers(0, T, size=2).tolist()))
        gold = tuple(sorted(rng.integers(0, T, size=2).tolist()))
        em, f1 = span_scores(pred, gold, passage)
        assert 0.0 <= em <= f1 <= 1.0


def test_eval_span_with_oracle_logits():
    class Oracle:
        def __call__(self, batch):
            s = np.full(batch.passage.shape, -9.0)
            e = s.copy()
            s[np.arange(batch.size), batch.spans[:, 0]] = 9.0
            e[np.arange(batch.size), batch.spans[:, 1]] = 9.0
            return type("Out", (), {"start_logits": Tensor(s), "end_logits": Tensor(e)})

    data = generate(SyntheticTaskSpec("toy_qa", 20, (3, 8), 40, seed=1))
    batches = list(batchify(data.samples, 16, None, collate_fn(data)))
    assert eval_span(Oracle(), batches) == {"EM": 1.0, "F1": 1.0}
    with pytest.raises(EmptyBatchError):
        eval_span(Oracle(), [])


# ---------------------------------------------------------------- training runs

SMALL = SyntheticTaskSpec("copy", 20, (2, 4), 60, seed=0)


def small_config(**kw):
    return RunConfig(spec_for_task("HRED", kw.pop("variant", "simplified"), SMALL, 8, (8, 16, 8)), SMALL, **kw)


def test_run_config_defaults():
    cfg = small_config()
    assert cfg.learning_rate == 1e-4 and cfg.batch_size == 32 and cfg.alpha == 0.9
    qa = SyntheticTaskSpec("toy_qa", 20, (3, 6), 10)
    r = RunConfig(spec_for_task("RNET", "baseline", qa, 4, (2, 4, 4, 4)), qa)
    assert r.learning_rate == 5e-4 and r.alpha == 0.7
    assert small_config(alpha=0.5).model.alpha == 0.5
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_run_config_validation():
    with pytest.raises(ConfigError):
        small_config(learning_rate=0.0)
    with pytest.raises(ConfigError):
        small_config(precision="half")
    with pytest.raises(ConfigError):
        RunConfig(spec_for_task("HRED", "baseline", SMALL, 8, (8, 16, 8)), SyntheticTaskSpec("toy_qa"))


def test_zero_epochs_reports_initial_metrics_only():
    rep = train_run(small_config(epochs=0))
    assert rep.epochs_run == 0 and rep.secs_per_epoch == [] and len(rep.history) == 1
    assert rep.final["ppl"] == pytest.approx(20, rel=0.1)
    assert math.isnan(rep.median_secs)


def test_training_is_deterministic_and_learns():
    a = train_run(small_config(epochs=3, learning_rate=0.01, seed=2))
    b = train_run(small_config(epochs=3, learning_rate=0.01, seed=2))
    assert a.history == b.history
    assert len(a.secs_per_epoch) == a.epochs_run == 3
    assert a.final["ppl"] < a.history[0]["ppl"]
    assert a.trainable_params == sum(a.param_breakdown.values())


def test_divergence_is_flagged():
    rep = train_run(small_config(epochs=3, learning_rate=1e30, variant="baseline"))
    assert rep.diverged
    assert rep.epochs_run < 3 and len(rep.secs_per_epoch) == rep.epochs_run


def test_param_audit():
    model = build_model(ModelSpec.hred(100, 8, 8, 16, 8, variant="simplified"))
    audit = param_audit(model)
    assert audit["layers"]["sentence_encoder"] == 0
    assert audit["total"] == sum(audit["layers"].values()) == model.num_params == 2544


# ---------------------------------------------------------------- reports


def demo_reports():
    base = TrainReport("HRED", "baseline", count_params(CellConfig("GRU", 3, 4)), [2.0, 1.0, 3.0], 3,
                       [{"ppl": 9.0, "err_rate": 0.5}])
    simp = TrainReport("HRED", "simplified", count_params(CellConfig("SGU", 3, 4)), [1.0, 0.5, 1.5], 3,
                       [{"ppl": 8.0, "err_rate": 0.25}])
    return [base, simp]


def test_emit_report_rows_and_ratio(tmp_path):
    path = emit_report(demo_reports(), tmp_path / "out" / "report.csv")
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert len(rows) == 3
    assert [r["variant"] for r in rows[:2]] == ["baseline", "simplified"]
    assert rows[0]["params"] == "84" and rows[1]["params"] == "42"
    assert float(rows[2]["params"]) == 0.5  # 42 / 84
    assert float(rows[2]["secs_per_epoch"]) == 0.5  # medians 1.0 / 2.0
    assert rows[1]["err_rate"] == "0.2500"


def test_markdown_report_layout(tmp_path):
    text = render_markdown(demo_reports())
    assert "Trainable Parameters" in text and "Training Time (secs * epochs)" in text
    assert "| HRED | baseline | 84 | 2.0000 * 3 | ppl 9.0000, err_rate 0.5000 |" in text
    emit_report(demo_reports(), tmp_path / "r.md", fmt="markdown")
    assert (tmp_path / "r.md").read_text() == text


def test_single_report_has_no_ratio_row():
    rows = list(csv.DictReader(io.StringIO(render_csv(demo_reports()[:1]))))
    assert len(rows) == 1
    with pytest.raises(ValueError):
        emit_report([], "unused.csv")


# ---------------------------------------------------------------- CLI


def test_cli_params(capsys, tmp_path):
    out = tmp_path / "audit.json"
    assert cli_main(["params", "--model", "hred", "--vocab-size", "100", "--embed-size", "8",
                     "--sizes", "8,16,8", "--json", str(out)]) == 0
    audit = json.loads(out.read_text())
    assert audit["baseline"]["total"] == 3648 and audit["simplified"]["total"] == 2544
    assert "ratio simplified/baseline: 0.6974" in capsys.readouterr().out


def test_cli_gen(tmp_path):
    out = tmp_path / "qa.jsonl"
    assert cli_main(["gen", "--task", "toy_qa", "--samples", "7", "--length", "4,6", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 7
    rec = json.loads(lines[0])
    assert rec["passage"][rec["span"][0]] == rec["question"][0]


def test_cli_bench_with_config_file(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"epochs": 1, "samples": 40, "sizes": [8, 16, 8], "embed-size": 8,
                                  "lr": 0.01, "variant": "simplified"}))
    md = tmp_path / "r.md"
    code = cli_main(["bench", "--epochs", "50", "--config", str(config), "--markdown", str(md),
                     "--json", str(tmp_path / "r.json")])
    assert code == 0
    reports = json.loads((tmp_path / "r.json").read_text())
    assert len(reports) == 1 and reports[0]["epochs_run"] == 1  # file overrides the flag
    assert "simplified" in md.read_text()


def test_cli_rejects_unknown_config_key(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"epochz": 1}))
    assert cli_main(["bench", "--config", str(config)]) == 2


def test_cli_check_needs_both_variants(tmp_path, capsys):
    code = cli_main(["bench", "--variant", "baseline", "--epochs", "1", "--samples", "40",
                     "--embed-size", "8", "--sizes", "8,16,8", "--check"])
    assert code == 1
    assert "FAIL --check needs both variants" in capsys.readouterr().out


def test_cli_divergence_exits_nonzero(capsys):
    code = cli_main(["bench", "--variant", "baseline", "--epochs", "2", "--samples", "40",
                     "--embed-size", "8", "--sizes", "8,16,8", "--lr", "1e30"])
    assert code == 1
    assert "diverged" in capsys.readouterr().out
