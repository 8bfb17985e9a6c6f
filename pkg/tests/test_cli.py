import json
import os

import numpy as np
import pytest

from scoreratio import io
from scoreratio.cli import DEFAULTS, load_config, main
from scoreratio.exceptions import InvalidConfig
from scoreratio.linalg import random_rotation


def run(tmp_path, command, *extra, out="out"):
    outdir = tmp_path / out
    rc = main([command, "--set", f"output.dir={json.dumps(str(outdir))}", *extra])
    return rc, outdir


def sets(**kw):
    args = []
    for k, v in kw.items():
        args += ["--set", f"{k.replace('__', '.')}={json.dumps(v)}"]
    return args


FAST = sets(train__epochs=2, train__batch_size=100, net__width=8)


def test_generate_banana(tmp_path):
    rc, out = run(tmp_path, "generate", *sets(problem__kind="banana", problem__d=10, problem__N=1000))
    assert rc == 0
    header, data = io.read_table(out / "samples.csv")
    assert header == [f"x{i}" for i in range(10)]
    assert data.shape == (1000, 10)
    doc = json.loads((out / "manifest.json").read_text())
    R = np.array(doc["oracle"]["R"])
    np.testing.assert_allclose(R.T @ R, np.eye(10), atol=1e-10)


def test_generate_lingauss_header(tmp_path):
    rc, out = run(tmp_path, "generate", *sets(problem__kind="lingauss", problem__n=2, problem__m=3, problem__N=5))
    assert rc == 0
    first = (out / "samples.csv").read_text().splitlines()[0]
    assert first == "x0,x1,y0,y1,y2"
    doc = json.loads((out / "manifest.json").read_text())
    assert np.array(doc["oracle"]["A"]).shape == (3, 2)
    assert np.array(doc["oracle"]["noise_cov"]).shape == (3, 3)


def _bytes(folder):
    return {name: (folder / name).read_bytes() for name in sorted(os.listdir(folder))}


@pytest.mark.parametrize("command", ["generate", "reduce"])
def test_commands_byte_identical(tmp_path, command):
    args = sets(problem__kind="lingauss", problem__N=300) + FAST
    assert run(tmp_path, command, *args, out="a")[0] == 0
    assert run(tmp_path, command, *args, out="b")[0] == 0
    assert _bytes(tmp_path / "a") == _bytes(tmp_path / "b")


def test_reduce_deflate_columns(tmp_path):
    args = sets(problem__kind="lingauss", problem__n=4, problem__m=3, problem__N=300, net__r_prime=2, net__s_prime=2) + FAST
    rc, out = run(tmp_path, "reduce", "--deflate", "3,1", *args)
    assert rc == 0
    for name in ("basis_x.csv", "basis_y.csv"):
        B = io.read_matrix(out / name)
        assert B.shape[1] == 3
        np.testing.assert_allclose(B.T @ B, np.eye(3), atol=1e-8)
    assert sorted(p for p in os.listdir(out) if p.startswith("checkpoint")) == [f"checkpoint_round{t}.json" for t in range(3)]


def test_reduce_large_tolerance_selects_zero(tmp_path):
    args = sets(problem__kind="lingauss", problem__N=300, algo__eps_x=1e6, algo__eps_y=1e6) + FAST
    rc, out = run(tmp_path, "reduce", *args)
    assert rc == 0
    ranks = json.loads((out / "ranks.json").read_text())
    assert ranks["rank_x"] == 0 and ranks["rank_y"] == 0
    _, table = io.read_table(out / "spectra_x.csv")
    assert table[0, 0] == 1
    np.testing.assert_allclose(table[:, 2], 0.5 * (table[::-1, 1].cumsum()[::-1] - table[:, 1]), atol=1e-15)
    assert (out / "run.log").read_text().startswith("reduce mode=single")


def test_reduce_sliced_trace_flag(tmp_path):
    args = sets(problem__kind="banana", problem__d=3, problem__N=200, net__r_prime=2, train__n_projections=4) + FAST
    rc, out = run(tmp_path, "reduce", "--trace-mode", "sliced", *args)
    assert rc == 0
    assert io.read_matrix(out / "basis_x.csv").shape == (3, 3)


def _write_basis(out, name, M, prefix):
    io.write_matrix(out / name, M, prefix)


def test_evaluate_optimal_basis_coincides(tmp_path):
    args = sets(problem__kind="lingauss", problem__n=3, problem__m=3)
    out = tmp_path / "out"
    out.mkdir()
    from scoreratio.cli import build_problem, true_diagnostics
    from scoreratio.linalg import sym_eigendecompose

    cfg = load_config(None, {"problem.kind": "lingauss", "problem.n": 3, "problem.m": 3})
    Hx, Hy = true_diagnostics(cfg, build_problem(cfg))
    _write_basis(out, "basis_x.csv", sym_eigendecompose(Hx).vectors, "u")
    _write_basis(out, "basis_y.csv", sym_eigendecompose(Hy).vectors[:, [2, 0, 1]], "v")
    assert run(tmp_path, "evaluate", *args)[0] == 0
    _, bx = io.read_table(out / "bounds_x.csv")
    np.testing.assert_allclose(bx[:, 1], bx[:, 2], atol=1e-12)
    _, by = io.read_table(out / "bounds_y.csv")
    assert np.all(by[:, 1] >= by[:, 2] - 1e-12)
    assert by[1, 1] > by[1, 2]
    np.testing.assert_array_equal(bx[:, 0], np.arange(4))


def test_evaluate_after_reduce_banana(tmp_path):
    args = sets(problem__kind="banana", problem__d=4, problem__N=200, net__r_prime=2) + FAST
    assert run(tmp_path, "reduce", *args)[0] == 0
    rc, out = run(tmp_path, "evaluate", *args)
    assert rc == 0
    _, bx = io.read_table(out / "bounds_x.csv")
    assert bx.shape == (5, 3)
    assert np.all(np.diff(bx[:, 1]) <= 1e-12)


def test_evaluate_csv_problem_has_no_oracle(tmp_path):
    run(tmp_path, "generate", *sets(problem__kind="lingauss", problem__N=20), out="gen")
    path = str(tmp_path / "gen" / "samples.csv")
    assert run(tmp_path, "evaluate", *sets(problem__kind="csv", problem__path=path))[0] == 2


def test_csv_problem_reduce(tmp_path):
    run(tmp_path, "generate", *sets(problem__kind="lingauss", problem__N=200), out="gen")
    path = str(tmp_path / "gen" / "samples.csv")
    rc, out = run(tmp_path, "reduce", *sets(problem__kind="csv", problem__path=path), *FAST)
    assert rc == 0
    assert io.read_matrix(out / "basis_y.csv").shape == (2, 2)


def test_invalid_config_exit_code(tmp_path):
    assert run(tmp_path, "generate", *sets(problem__bogus=1))[0] == 2
    assert run(tmp_path, "generate", *sets(problem__kind="nope"))[0] == 2
    assert run(tmp_path, "reduce", *sets(algo__eps_x=-1.0))[0] == 2
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[net]\nr_prime = \n")
    assert main(["generate", "--config", str(cfg)]) == 2
    cfg.write_text("[train]\nepoch = 3\n")
    assert main(["generate", "--config", str(cfg)]) == 2


def test_rank_exhausted_is_config_error(tmp_path):
    args = sets(problem__kind="lingauss", problem__N=100, net__r_prime=2, net__s_prime=2) + FAST
    assert run(tmp_path, "reduce", "--deflate", "3,1", *args)[0] == 2


def test_numerical_failure_exit_code(tmp_path):
    args = sets(problem__kind="lingauss", problem__N=100, train__learning_rate=1e200, train__clip_norm=1e300) + sets(
        train__epochs=3, train__batch_size=50, net__width=4
    )
    with np.errstate(all="ignore"):
        assert run(tmp_path, "reduce", *args)[0] == 3


def test_io_failure_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rc = main(["generate", "--set", f"output.dir={json.dumps(str(blocker / 'sub'))}", *sets(problem__N=5)])
    assert rc == 4
    # evaluating without a prior reduce has no basis files to read
    assert run(tmp_path, "evaluate", *sets(problem__kind="lingauss"), out="empty")[0] == 4


def test_csv_round_trip_bytes(tmp_path):
    run(tmp_path, "generate", *sets(problem__kind="lingauss", problem__N=50))
    path = tmp_path / "out" / "samples.csv"
    header, data = io.read_table(path)
    copy = tmp_path / "copy.csv"
    io.write_table(copy, header, data)
    assert copy.read_bytes() == path.read_bytes()
    M = random_rotation(4, np.random.default_rng(0)) * 1e-300
    io.write_matrix(tmp_path / "m.csv", M, "c")
    assert np.array_equal(io.read_matrix(tmp_path / "m.csv"), M)


def test_output_dir_environment_override(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("SCORERATIO_OUTPUT_DIR", str(target))
    assert main(["generate", *sets(problem__N=5)]) == 0
    assert (target / "samples.csv").exists()


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('seed = 4\n[problem]\nkind = "lingauss"\nN = 10\n[net]\nr_prime = 3\n')
    merged = load_config(cfg, {"seed": 9})
    assert merged["seed"] == 9 and merged["problem.N"] == 10 and merged["net.r_prime"] == 3
    assert merged["net.width"] == DEFAULTS["net.width"]
    with pytest.raises(InvalidConfig):
        load_config(None, {"net.depth": 2})


def test_deflate_flag_parse_error(tmp_path):
    assert run(tmp_path, "reduce", "--deflate", "three")[0] == 2
