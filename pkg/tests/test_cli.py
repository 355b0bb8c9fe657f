import pytest

import yac.cli as cli
from yac.harness import run_scenario


def test_scenarios_lists_names(capsys):
    assert cli.main(["scenarios"]) == 0
    assert "bob-partition" in capsys.readouterr().out.split()


def test_run_writes_report_and_trace(tmp_path, capsys):
    out = tmp_path / "t.txt"
    assert cli.main(["run", "--scenario", "happy-4", "--out", str(out)]) == 0
    assert "invariants: ok" in capsys.readouterr().out
    assert out.read_text().count("\tcommit\t") == 4


def test_flags_override_the_scenario(capsys):
    assert cli.main(["run", "--scenario", "happy-4", "--peers", "7", "--seed", "4"]) == 0
    text = capsys.readouterr().out
    assert "7 peers, seed 4" in text


def test_byzantine_flags(capsys):
    assert cli.main(["run", "--peers", "7", "--byzantine", "2", "--behavior", "equivocator",
                     "--behavior", "silent", "--tx-count", "10", "--duration-s", "2"]) == 0
    text = capsys.readouterr().out
    assert "equivocator" in text and "silent" in text


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "missing"],
    ["run", "--peers", "0"],
    ["run", "--partition", "garbage"],
    ["run", "--drop-rate", "3"],
    ["sweep", "--peers", "4,x"],
    ["run", "--not-a-flag"],
])
def test_config_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exit_:
        raise SystemExit(cli.main(argv))
    assert exit_.value.code == 1


def test_violation_exits_2(monkeypatch, capsys):
    def broken(cfg, path=None):
        result = run_scenario(cfg, path)
        result.violations.append("t=0 planted")
        return result
    monkeypatch.setattr(cli, "run_scenario", broken)
    assert cli.main(["run", "--scenario", "happy-4"]) == 2
    assert "INVARIANT VIOLATIONS" in capsys.readouterr().out


def test_sweep_to_file(tmp_path):
    out = tmp_path / "s.csv"
    argv = ["sweep", "--scenario", "happy-4", "--peers", "4,5", "--vote-delay-ms", "1,50",
            "--trials", "2", "--out", str(out)]
    assert cli.main(argv) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n_peers,vote_step_delay_ms,trial_count,median_throughput,stalled_peers_total,seed_base"
    assert len(lines) == 5


def test_help_documents_lower_median(capsys):
    with pytest.raises(SystemExit) as exit_:
        cli.main(["sweep", "--help"])
    assert exit_.value.code == 0
    assert "lower median" in capsys.readouterr().out
