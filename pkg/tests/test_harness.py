import csv
import io
import os

import numpy as np
import pytest

from dime.cli import main
from dime.harness import (
    VARIANTS,
    RunConfig,
    atomic_write,
    emit_ablation,
    emit_results,
    emit_sweep,
    parse_key_values,
    run_ablation,
    run_continual,
    run_seed,
    run_sensitivity,
    run_variant,
)
from dime.stream_gen import allocate_classes, step_proportions

TINY = RunConfig(total_classes=8, num_steps=4, n_max=30, epochs=3, seed_list=(0,))


def test_single_step_has_no_merge(monkeypatch):
    import dime.harness as h

    def boom(*a, **k):
        raise AssertionError("merge called")

    monkeypatch.setattr(h, "merge_adapter", boom)
    monkeypatch.setattr(h, "average_adapters", boom)
    run = run_seed(TINY.with_updates(num_steps=1, total_classes=3), 0)
    rep = run.report
    assert len(rep.records) == 1
    assert rep.a_final == rep.a_bar == rep.wa_bar == rep.records[0].accuracy


def test_full_matches_ce_variant_under_uniform_counts():
    cfg = TINY.with_updates(class_rho=1.0, epochs=4)
    a = run_continual(cfg.with_updates(variant="full"), 1)
    b = run_continual(cfg.with_updates(variant="sm_ccw_rtm"), 1)
    for ra, rb in zip(a.records, b.records):
        assert abs(ra.accuracy - rb.accuracy) <= 1e-12
    assert abs(a.wa_bar - b.wa_bar) <= 1e-12


def test_run_is_deterministic():
    a, b = run_seed(TINY, 4), run_seed(TINY, 4)
    assert a.report == b.report
    assert a.trace == b.trace


def test_one_adapter_at_every_evaluation():
    seen = []
    run = run_seed(TINY, 2, observer=lambda t, s: seen.append((t, len(s.adapters()))))
    assert seen == [(t, 1) for t in range(1, 5)]
    assert run.adapter_counts == [1] * 4


def test_tiny_ablation_structure(tmp_path):
    results = run_ablation(TINY)
    assert list(results) == list(VARIANTS)
    dumps = {v: r.runs[0].protocol.dump() for v, r in results.items()}
    assert len(set(dumps.values())) == 1
    for r in results.values():
        rep = r.runs[0].report
        assert [rec.step_index for rec in rep.records] == [1, 2, 3, 4]
        assert rep.records[-1].accumulated_class_count == 8
        assert rep.a_final == rep.records[-1].accuracy
    # sm is the full-gate, equal-weight spectral merge, i.e. the direct average
    assert results["sm"].runs[0].report.a_final == pytest.approx(results["base"].runs[0].report.a_final)
    path = emit_ablation(results, tmp_path)
    rows = list(csv.reader(io.StringIO(path.read_text())))
    assert [r[0] for r in rows[1:]] == list(VARIANTS)


def test_sweep_single_value_equals_batch():
    rows = run_sensitivity(TINY, "gamma_head", [0.2])
    direct = run_variant(TINY.with_updates(gamma_head=0.2))
    assert rows[0][1].reports == direct.reports


def test_rho_sweep_follows_allocation():
    cfg = TINY.with_updates(total_classes=12, num_steps=4, epochs=1)
    for value, res in run_sensitivity(cfg, "rho", [1.0, 0.1, 0.01]):
        expected = sorted(allocate_classes(step_proportions(value, 4), 12).tolist())
        sizes = [int(line.split()[1]) for line in res.runs[0].protocol.dump().splitlines()]
        assert sorted(sizes) == expected


def test_sweep_rows_are_independent(tmp_path):
    cfg = TINY.with_updates(epochs=2)
    fwd = dict((v, r.aggregate()) for v, r in run_sensitivity(cfg, "gamma_tail", [0.5, 0.9]))
    rev = dict((v, r.aggregate()) for v, r in run_sensitivity(cfg, "gamma_tail", [0.9, 0.5]))
    assert fwd == rev


def test_sweep_rejects_unknown_param():
    with pytest.raises(ValueError, match="unknown sweep"):
        run_sensitivity(TINY, "epochs", [1])


def test_emit_results_is_byte_identical(tmp_path):
    cfg = TINY.with_updates(seed_list=(0, 1))
    for name in ("a", "b"):
        emit_results(run_variant(cfg), tmp_path / name)
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "timing.txt":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_summary_matches_recomputed_means(tmp_path):
    cfg = TINY.with_updates(seed_list=(0, 1, 2), epochs=2)
    emit_results(run_variant(cfg), tmp_path / "deep" / "missing")
    out = tmp_path / "deep" / "missing"
    finals = []
    for s in (0, 1, 2):
        lines = (out / f"metrics_seed{s}.csv").read_text().splitlines()
        finals.append([float(v) for v in lines[-1].split(",")[:3]])
    finals = np.array(finals)
    summary = (out / "summary.csv").read_text().splitlines()
    mean = [float(v) for v in summary[-2].split(",")[1:]]
    std = [float(v) for v in summary[-1].split(",")[1:]]
    np.testing.assert_allclose(mean, finals.mean(axis=0), atol=2e-6)
    np.testing.assert_allclose(std, finals.std(axis=0, ddof=1), atol=2e-6)


def test_aggregate_exact():
    res = run_variant(TINY.with_updates(seed_list=(0, 1, 2), epochs=1))
    agg = res.aggregate()
    finals = [r.a_final for r in res.reports]
    assert abs(agg["A_T"][0] - sum(finals) / 3) <= 1e-12
    m = sum(finals) / 3
    assert abs(agg["A_T"][1] - (sum((f - m) ** 2 for f in finals) / 2) ** 0.5) <= 1e-12


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_path(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    with pytest.raises(OSError, match=str(ro)):
        atomic_write(ro / "x.csv", "a")


def test_write_under_a_file_fails_with_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        atomic_write(blocker / "sub" / "x.csv", "a")


def test_config_text_roundtrip():
    cfg = TINY.with_updates(variant="sm_ccw", gamma_head=0.15, seed_list=(3, 9))
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_parsing_errors():
    with pytest.raises(ValueError):
        RunConfig.from_pairs({"variant": "nope"})
    with pytest.raises(ValueError):
        RunConfig.from_pairs({"epochs": "ten"})
    with pytest.raises(ValueError):
        RunConfig.from_pairs({"seed_list": ""})
    with pytest.raises(ValueError):
        parse_key_values(["epochs 3"])
    assert parse_key_values(["# comment", "", "epochs = 3  # trailing"]) == {"epochs": "3"}


def test_cli_run_and_errors(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("total_classes=8\nnum_steps=4\nepochs=1\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--seeds", "0,1", "--set", "n_max=20", "--out", str(out)]) == 0
    assert (out / "summary.csv").exists()
    assert "seed_list=0,1" in (out / "config.txt").read_text()
    assert "n_max=20" in (out / "config.txt").read_text()
    capsys.readouterr()

    assert main(["run", "--set", "bogus=1"]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "bogus" in err[0]
    assert main(["run", "--config", str(tmp_path / "none.txt")]) != 0
    assert main(["sweep", "--param", "rho", "--values", "a,b"]) != 0
    with pytest.raises(SystemExit):
        main(["sweep", "--param", "epochs", "--values", "1"])


def test_cli_selftest(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_cli_sweep(tmp_path, capsys):
    args = ["sweep", "--param", "gamma_head", "--values", "0.1,0.3", "--seeds", "0",
            "--set", "total_classes=8", "--set", "num_steps=4", "--set", "epochs=1", "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "sweep_gamma_head.csv").exists()
    assert (tmp_path / "gamma_head=0.1" / "summary.csv").exists()
