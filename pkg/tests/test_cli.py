import csv
import math

import pytest

from meanfield import cli
from meanfield.cli import main, run
from meanfield.config import load_config, parse_config
from meanfield.errors import IntegrationError, ValidationError

SIS_SIMULATE = """
[model]
name = "sis"
tau = 2.0
rho = 1.0

[command]
name = "simulate"
seed = 42
N = 1000
T = 10.0
init = [0.7, 0.3]
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _config(model, command):
    return f"[model]\n{model}\n\n[command]\n{command}\n"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- parsing ---------------------------------------------------------------------


def test_minimal_sis_simulate_config():
    cfg = parse_config(SIS_SIMULATE)
    assert cfg.command == "simulate" and cfg.seed == 42
    assert cfg.params["N"] == 1000 and cfg.params["T"] == 10.0
    assert cfg.model == {"name": "sis", "tau": 2.0, "rho": 1.0}


def test_unknown_key_is_named():
    with pytest.raises(ValidationError, match="gamma_init"):
        parse_config(SIS_SIMULATE + "gamma_init = 0.3\n")


def test_missing_seed():
    with pytest.raises(ValidationError, match="seed required"):
        parse_config(SIS_SIMULATE.replace("seed = 42\n", ""))


def test_syntax_error_reports_line():
    with pytest.raises(ValidationError, match="line 4"):
        parse_config('[model]\nname = "sis"\ntau = 2.0\nrho = = 1\n')


@pytest.mark.parametrize("seed", ["-1", str(2**64), "1.5", "true"])
def test_seed_must_be_u64(seed):
    with pytest.raises(ValidationError):
        parse_config(SIS_SIMULATE.replace("seed = 42", f"seed = {seed}"))


def test_largest_seed_accepted():
    assert parse_config(SIS_SIMULATE.replace("seed = 42", f"seed = {2**64 - 1}")).seed == 2**64 - 1


@pytest.mark.parametrize(
    "snippet,key",
    [
        ('[model]\nname = "sis"\ntau = 2.0\n', "rho"),
        ('[model]\nname = "sis"\ntau = 2.0\nrho = 1.0\nbeta = 3\n', "beta"),
        ('[model]\nname = "ising"\n', "model name"),
    ],
)
def test_model_section_errors(snippet, key):
    text = snippet + '\n[command]\nname = "fixed-points"\nseed = 1\n'
    with pytest.raises(ValidationError, match=key):
        parse_config(text)


def test_unknown_command():
    with pytest.raises(ValidationError, match="command name"):
        parse_config(SIS_SIMULATE.replace('"simulate"', '"bifurcate"'))


def test_required_command_key():
    with pytest.raises(ValidationError, match="'T'"):
        parse_config(SIS_SIMULATE.replace("T = 10.0\n", ""))


def test_lln_replicas_checked_at_parse_time():
    text = _config('name = "sis"\ntau = 2.0\nrho = 1.0',
                   'name = "lln"\nseed = 1\nT = 10.0\ninit = [0.7, 0.3]\nN_list = [100, 1000]\nreplicas = 5')
    with pytest.raises(ValidationError, match="replicas"):
        parse_config(text)


def test_custom_model_config():
    text = """
[model]
name = "custom"
states = ["S", "I"]

[[model.edges]]
from = "S"
to = "I"
kind = "linear"
coef = 2.0
of = "I"

[[model.edges]]
from = "I"
to = "S"
kind = "constant"
value = 1.0

[command]
name = "fixed-points"
seed = 3
"""
    assert parse_config(text).model["states"] == ["S", "I"]


def test_wlan_needs_wlan_model_for_level1():
    with pytest.raises(ValidationError, match="wlan"):
        parse_config(_config('name = "sis"\ntau = 2.0\nrho = 1.0', 'name = "wlan-gamma"\nseed = 1'))


# --- running -----------------------------------------------------------------------


def test_wlan_gamma_command(tmp_path):
    cfg = _write(tmp_path, _config('name = "wlan"\nc = [1.0, 0.5, 0.25]', 'name = "wlan-gamma"\nseed = 7'))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    rows = _rows(tmp_path / "out" / "gamma.csv")
    assert rows[0][0] == "gamma_star"
    assert float(rows[1][0]) == pytest.approx(0.42749152492914539, abs=1e-10)
    assert "gamma_star:" in (tmp_path / "out" / "report.txt").read_text()
    assert (tmp_path / "out" / "manifest.toml").exists()


def test_cross_check_uniform_ln2_passes(tmp_path):
    c = ", ".join([repr(math.log(2))] * 3)
    cfg = _write(tmp_path, _config(f'name = "wlan"\nc = [{c}]', 'name = "cross-check"\nseed = 1'))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "result: PASS" in (tmp_path / "out" / "report.txt").read_text()


def test_cross_check_sweep(tmp_path):
    cfg = _write(tmp_path, _config('name = "wlan"\nc0 = 1.0\nK = 4',
                                   'name = "cross-check"\nseed = 1\nc0_list = [0.5, 2.0]\nK_list = [1, 2]'))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    rows = _rows(tmp_path / "out" / "sweep.csv")
    assert rows[0] == ["c0", "K", "gamma_star", "attempt_residual", "collision_residual", "result"]
    assert len(rows) == 5 and all(r[-1] == "PASS" for r in rows[1:])


def test_lln_with_too_few_replicas_exits_1(tmp_path):
    cfg = _write(tmp_path, _config('name = "sis"\ntau = 2.0\nrho = 1.0',
                                   'name = "lln"\nseed = 1\nT = 10.0\ninit = [0.7, 0.3]\nN_list = [100, 1000]\nreplicas = 5'))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out")]) == 1


def test_failed_threshold_exits_3(tmp_path):
    cfg = _write(tmp_path, _config('name = "sis"\ntau = 2.0\nrho = 1.0',
                                   'name = "lln"\nseed = 1\nT = 2.0\ninit = [0.7, 0.3]\nN_list = [20, 40]\n'
                                   'replicas = 30\nthreshold = 1e-6'))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out")]) == 3
    assert "FAIL" in (tmp_path / "out" / "report.txt").read_text()
    assert _rows(tmp_path / "out" / "lln.csv")[0] == ["N", "statistic", "stderr"]


def test_numerical_failure_exits_2(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise IntegrationError("step size underflow", time=1.0)

    monkeypatch.setitem(cli.COMMANDS, "integrate", boom)
    cfg = parse_config(_config('name = "sis"\ntau = 2.0\nrho = 1.0',
                               'name = "integrate"\nseed = 1\nT = 1.0\ninit = [0.5, 0.5]'))
    assert run(cfg, tmp_path / "out") == 2


def test_missing_config_file_exits_1(tmp_path):
    assert main(["--config", str(tmp_path / "nope.toml")]) == 1


def test_seed_flag_overrides_config(tmp_path):
    cfg = _write(tmp_path, SIS_SIMULATE.replace("N = 1000", "N = 50"))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "99"]) == 0
    manifest = load_config(tmp_path / "a" / "manifest.toml")
    assert manifest.seed == 99


def test_simulate_outputs(tmp_path):
    cfg = _write(tmp_path, SIS_SIMULATE.replace("N = 1000", "N = 100") + "tagged = [0, 5]\n")
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out)]) == 0
    traj = _rows(out / "trajectory.csv")
    assert traj[0] == ["time", "S", "I"]
    assert float(traj[1][0]) == 0.0
    assert _rows(out / "tagged_paths.csv")[0] == ["time", "particle_index", "state"]
    assert len(_rows(out / "trajectory_grid.csv")) == 1002


def test_fixed_points_outputs(tmp_path):
    cfg = _write(tmp_path, _config('name = "sis"\ntau = 2.0\nrho = 1.0', 'name = "fixed-points"\nseed = 3'))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out / "fixed_points.csv")
    assert rows[0] == ["S", "I", "residual", "stability", "max_real_eigenvalue", "starts_converged"]
    assert sorted(r[3] for r in rows[1:]) == ["stable", "unstable"]
    assert "spectrum:" in (out / "spectrum.txt").read_text()


def test_integrate_and_limit_cycle_outputs(tmp_path):
    cfg = _write(tmp_path, _config('name = "sis"\ntau = 2.0\nrho = 1.0',
                                   'name = "integrate"\nseed = 1\nT = 5.0\ninit = {S = 0.9, I = 0.1}'))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "flow")]) == 0
    assert _rows(tmp_path / "flow" / "flow.csv")[0] == ["time", "S", "I"]
    cfg = _write(tmp_path, _config('name = "wlan"\nc0 = 1.0\nK = 2',
                                   'name = "limit-cycle"\nseed = 1\nn_random_starts = 3\nT_max = 300.0'), "lc.toml")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "lc")]) == 0
    rows = _rows(tmp_path / "lc" / "limit_sets.csv")
    assert [r[1] for r in rows[1:]] == ["converged-to-point"] * 3


def test_limit_cycle_report_lists_loop(tmp_path):
    edges = "\n".join(
        f'[[model.edges]]\nfrom = "{a}"\nto = "{b}"\nkind = "linear"\ncoef = 2.0\nof = "{b}"\n'
        for a, b in (("R", "P"), ("P", "S"), ("S", "R"))
    )
    text = ('[model]\nname = "custom"\nstates = ["R", "P", "S"]\n' + edges
            + '\n[command]\nname = "limit-cycle"\nseed = 1\ninit = [[0.6, 0.3, 0.1]]\nT_max = 100.0\n')
    cfg = _write(tmp_path, text)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    report = (tmp_path / "out" / "report.txt").read_text()
    assert "verdict: limit-cycle" in report and "loop_csv: loop_0.csv" in report
    assert _rows(tmp_path / "out" / "loop_0.csv")[0] == ["time", "R", "P", "S"]


# --- manifests ------------------------------------------------------------------------


def _csv_bytes(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.glob("*.csv"))}


@pytest.mark.parametrize(
    "text",
    [
        SIS_SIMULATE.replace("N = 1000", "N = 300") + "tagged = [1]\n",
        _config('name = "sis"\ntau = 2.0\nrho = 1.0',
                'name = "decoupling"\nseed = 5\nT = 1.0\ninit = [0.7, 0.3]\nN_list = [10, 20]\nreplicas = 500'),
        _config('name = "wlan"\nc = [1.0, 0.5, 0.25]', 'name = "fixed-points"\nseed = 2\nn_starts = 8'),
    ],
    ids=["simulate", "decoupling", "fixed-points"],
)
def test_manifest_rerun_is_byte_identical(tmp_path, text):
    cfg = _write(tmp_path, text)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a")]) in (0, 3)
    assert main(["--config", str(tmp_path / "a" / "manifest.toml"), "--out", str(tmp_path / "b"),
                 "--workers", "2"]) in (0, 3)
    first, second = _csv_bytes(tmp_path / "a"), _csv_bytes(tmp_path / "b")
    assert first and first == second
