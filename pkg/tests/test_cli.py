import filecmp
import json

import pytest

from ksdflow.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from ksdflow.experiments import OUTPUT_ENV


def write(path, text):
    path.write_text(text)
    return str(path)


SMALL = """
experiment = "gaussian2d"
seed = 3
n_particles = 8
flow.schemes = ["KSD_LBFGS", "SVGD"]
flow.max_iters = 30
flow.svgd.max_iters = 30
"""


def test_run_writes_outputs(tmp_path):
    cfg = write(tmp_path / "c.toml", SMALL)
    out = tmp_path / "out"
    assert main(["run", cfg, "-o", str(out)]) == EXIT_OK
    m = json.loads((out / "metrics.json").read_text())
    assert m["experiment"] == "gaussian2d" and m["status"] == "ok"
    assert set(m["results"]) == {"KSD_LBFGS", "SVGD"}
    for tag in ("ksd_lbfgs", "svgd"):
        assert (out / f"{tag}_trace.json").exists()
        assert (out / f"{tag}_trace.csv").exists()
        assert (out / f"{tag}_particles.csv").exists()


def test_output_env_override(tmp_path, monkeypatch):
    cfg = write(tmp_path / "c.toml", SMALL + 'output_dir = "elsewhere"\n')
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", cfg]) == EXIT_OK
    assert (tmp_path / "env" / "metrics.json").exists()
    assert not (tmp_path / "elsewhere").exists()


def test_relative_output_dir_resolved_against_config(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    sub = tmp_path / "cfgs"
    sub.mkdir()
    cfg = write(sub / "c.toml", SMALL + 'output_dir = "../runs/x"\n')
    assert main(["run", cfg]) == EXIT_OK
    assert (tmp_path / "runs" / "x" / "metrics.json").exists()


def test_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


@pytest.mark.parametrize("text", [
    'experiment = "nope"\n',
    SMALL + "bogus = 1\n",
    'experiment = "gaussian2d"\nn_particles = 0\n',
    'experiment = "gaussian2d"\nseed = -4\n',
    'experiment = "gaussian2d"\nflow.schemes = ["NEWTON"]\n',
    'experiment = "logreg"\ndata.path = "missing.csv"\n',
    "experiment = [\n",
])
def test_bad_config_exit_1(tmp_path, text):
    cfg = write(tmp_path / "c.toml", text)
    assert main(["run", cfg, "-o", str(tmp_path / "o")]) == EXIT_CONFIG


def test_divergence_exit_2(tmp_path):
    cfg = write(tmp_path / "c.toml", """
experiment = "gaussian2d"
n_particles = 8
flow.schemes = ["SVGD"]
flow.svgd.step_size = 1e3
flow.svgd.max_iters = 200
""")
    out = tmp_path / "o"
    assert main(["run", cfg, "-o", str(out)]) == EXIT_DIVERGED
    m = json.loads((out / "metrics.json").read_text())
    assert m["status"] == "diverged"


def test_logreg_from_csv(tmp_path):
    spec = write(tmp_path / "g.toml", 'kind = "logreg"\npath = "d/l.csv"\np = 3\nq = 120\nseed = 2\n')
    assert main(["generate", spec]) == EXIT_OK
    cfg = write(tmp_path / "c.toml", """
experiment = "logreg"
data.path = "d/l.csv"
data.n_train = 80
flow.max_iters = 20
flow.svgd.max_iters = 20
""")
    assert main(["run", cfg, "-o", str(tmp_path / "o")]) == EXIT_OK
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert 0.0 <= m["results"]["SVGD"]["test_accuracy"] <= 1.0


def test_generate_identical_bytes(tmp_path):
    for d in ("a", "b"):
        spec = write(tmp_path / f"{d}.toml", f'kind = "ica"\npath = "{d}/x.csv"\nq = 50\nseed = 1\n')
        assert main(["generate", spec]) == EXIT_OK
    assert filecmp.cmp(tmp_path / "a" / "x.csv", tmp_path / "b" / "x.csv", shallow=False)
    assert filecmp.cmp(tmp_path / "a" / "x_W.csv", tmp_path / "b" / "x_W.csv", shallow=False)


def test_generate_bad_kind(tmp_path):
    spec = write(tmp_path / "g.toml", 'kind = "images"\npath = "x.csv"\n')
    assert main(["generate", spec]) == EXIT_CONFIG


def test_check_passes(capsys):
    assert main(["check", "--samples", "50000", "--fd-samples", "20"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "fd GaussianRBF(1)" in out and "FAIL" not in out


def test_check_too_few_samples():
    assert main(["check", "--samples", "1", "--fd-samples", "5"]) == EXIT_CONFIG


def test_check_failure_exit_3(monkeypatch, capsys):
    import ksdflow.cli as cli
    from ksdflow.diagnostics import SteinIdentityResult

    monkeypatch.setattr(cli, "stein_identity_check",
                        lambda *a, **k: SteinIdentityResult(1.0, 0.01, False))
    assert main(["check", "--fd-samples", "5"]) == EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out
