import csv
import io
import math
from contextlib import redirect_stdout

import numpy as np
import pytest

from taperpinn import cli, physics
from taperpinn.lossbuilder import evaluation_grid
from taperpinn.network import init_params, load_checkpoint
from taperpinn.numcore import SeededRng
from taperpinn.trainer import TrainConfig, evaluate_field

TINY = """\
problem:
  k: 8.0
  formulation: taper
network:
  hidden_layers: 2
  neurons: 6
sampling:
  grid_x: 6
  grid_z: 3
  n_b: 4
  eval_grid_x: 8
  eval_grid_z: 4
optimizer:
  total_steps: {steps}
run:
  seed: 5
  eval_every: 5
  output_dir: {out}
"""


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_zero_steps_dumps_untrained_field(tmp_path):
    out = tmp_path / "nested" / "missing"
    cfg = write(tmp_path, TINY.format(steps=0, out=out))
    assert cli.main(["run", cfg]) == 0
    for name in ("config.yaml", "trace.csv", "params.npz", "field.csv"):
        assert (out / name).exists()
    rows = read_csv(out / "field.csv")
    assert tuple(rows[0]) == cli.FIELD_HEADER
    assert len(rows) - 1 == 8 * 4
    tc = TrainConfig(k=8.0, hidden_layers=2, neurons=6, seed=5)
    params = init_params(SeededRng(5), tc.layer_sizes, tc.alpha0)
    spec = tc.problem()
    x, z = evaluation_grid(spec, 8, 4)
    expect = evaluate_field(params, spec, x, z)
    got = np.array([[float(v) for v in r] for r in rows[1:]])
    np.testing.assert_array_equal(got[:, 0], x)
    np.testing.assert_array_equal(got[:, 2] + 1j * got[:, 3], expect)


def test_run_outputs_reproduce_bitwise(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", write(tmp_path, TINY.format(steps=10, out=a), "a.yaml")]) == 0
    assert cli.main(["run", write(tmp_path, TINY.format(steps=10, out=b), "b.yaml")]) == 0
    for name in ("trace.csv", "field.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # stored config alone reproduces the run
    c = tmp_path / "c"
    text = (a / "config.yaml").read_text().replace(str(a), str(c))
    assert cli.main(["run", write(tmp_path, text, "c.yaml")]) == 0
    assert (a / "trace.csv").read_bytes() == (c / "trace.csv").read_bytes()


def test_resolved_config_round_trips(tmp_path):
    out = tmp_path / "r"
    cli.main(["run", write(tmp_path, TINY.format(steps=0, out=out))])
    exp = cli.load_config(out / "config.yaml")
    assert exp.train.neurons == 6 and exp.train.seed == 5
    assert exp.train.lr0 == TrainConfig().lr0


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg = write(tmp_path, TINY.format(steps=0, out="rel/run"))
    assert cli.main(["run", cfg]) == 0
    assert (tmp_path / "root" / "rel" / "run" / "field.csv").exists()


def test_config_error_has_line_context(tmp_path, capsys):
    text = TINY.format(steps=0, out=tmp_path).replace("neurons: 6", "neurons: six")
    cfg = write(tmp_path, text)
    assert cli.main(["run", cfg]) == 1
    err = capsys.readouterr().err
    assert f"{cfg}:6" in err and "network.neurons" in err


def test_unknown_key_and_bad_yaml(tmp_path, capsys):
    assert cli.main(["run", write(tmp_path, "network:\n  width: 3\n")]) == 1
    assert "network.width" in capsys.readouterr().err
    assert cli.main(["run", write(tmp_path, "problem: [1,\n", "bad.yaml")]) == 1
    assert "invalid YAML" in capsys.readouterr().err


def test_usage_error_exit_code():
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["run", "/nonexistent/cfg.yaml"]) == 1


def test_matrix_rows_dedup_and_failed_cell(tmp_path, caplog):
    out = tmp_path / "m"
    text = TINY.format(steps=5, out=out) + (
        "matrix:\n  formulations: [classical, taper, taper]\n"
        f"  k_values: [8.0, 13.0, 8.0, {3 * math.pi!r}]\n"
    )
    with caplog.at_level("WARNING"):
        code = cli.main(["matrix", write(tmp_path, text)])
    assert code == 2
    assert "duplicate" in caplog.text
    rows = read_csv(out / "error_table.csv")
    assert tuple(rows[0]) == cli.TABLE_HEADER
    body = rows[1:]
    assert len(body) == 6
    status = {(r[0], float(r[1])): r[2] for r in body}
    assert status[("classical", 8.0)] == "ok" and status[("taper", 13.0)] == "ok"
    assert status[("taper", 3 * math.pi)] == "failed"
    assert (out / "taper_k13" / "field.csv").exists()


def test_matrix_four_cells(tmp_path):
    out = tmp_path / "m4"
    text = TINY.format(steps=0, out=out) + (
        "matrix:\n  formulations: [classical, taper]\n  k_values: [8, 13]\n")
    assert cli.main(["matrix", write(tmp_path, text)]) == 0
    rows = read_csv(out / "error_table.csv")[1:]
    assert [(r[0], float(r[1])) for r in rows] == [
        ("classical", 8.0), ("classical", 13.0), ("taper", 8.0), ("taper", 13.0)]
    seeds = {cli.load_config(out / f"{f}_k{k:g}" / "config.yaml").train.seed
             for f in ("classical", "taper") for k in (8, 13)}
    assert len(seeds) == 4


def test_matrix_parallel_matches_sequential(tmp_path):
    base = "matrix:\n  formulations: [classical, taper]\n  k_values: [8]\n"
    seq, par = tmp_path / "seq", tmp_path / "par"
    cli.main(["matrix", write(tmp_path, TINY.format(steps=5, out=seq) + base, "s.yaml")])
    cli.main(["matrix", write(tmp_path, TINY.format(steps=5, out=par) + base
                              + "  parallel: true\n", "p.yaml")])
    for cell in ("classical_k8", "taper_k8"):
        assert (seq / cell / "trace.csv").read_bytes() == (par / cell / "trace.csv").read_bytes()


def test_verify_fresh_checkout(capsys):
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_verify_detects_perturbed_taper(monkeypatch, capsys):
    monkeypatch.setitem(physics.TAPER_COEFFS, 4, -15.001)
    assert cli.main(["verify"]) == 3
    out = capsys.readouterr().out
    assert "[FAIL] formulation equivalence" in out


def test_verify_forbidden_k(tmp_path, capsys):
    cfg = write(tmp_path, f"problem:\n  k: {3 * math.pi!r}\n")
    assert cli.main(["verify", cfg]) == 3
    out = capsys.readouterr().out
    assert "[FAIL] DtN precondition" in out


def test_eval_verb(tmp_path, capsys):
    out = tmp_path / "e"
    cli.main(["run", write(tmp_path, TINY.format(steps=5, out=out))])
    target = tmp_path / "eval.csv"
    assert cli.main(["eval", str(out / "params.npz"), "240x20", "-o", str(target)]) == 0
    rows = read_csv(target)
    assert len(rows) == 4801 and tuple(rows[0]) == cli.FIELD_HEADER
    assert "eps_R=" in capsys.readouterr().err
    buf = io.StringIO()
    with redirect_stdout(buf):
        assert cli.main(["eval", str(out / "params.npz"), "4x2"]) == 0
    lines = buf.getvalue().splitlines()
    assert len(lines) == 9
    params = load_checkpoint(out / "params.npz")
    spec = physics.ProblemSpec(8.0)
    x, z = evaluation_grid(spec, 4, 2)
    vals = evaluate_field(params, spec, x, z)
    assert float(lines[1].split(",")[2]) == vals[0].real


def test_eval_bad_grid(tmp_path):
    assert cli.main(["eval", str(tmp_path / "x.npz"), "240by20"]) == 1
