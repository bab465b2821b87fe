import os
import subprocess
import sys
from importlib import resources
from pathlib import Path

import pytest

from coofdma.cli import main
from coofdma.runner import OUT_ENV, run_scenario, run_sweep
from coofdma.scenario import (ScenarioError, apply_overrides, bundled_names, load_text,
                              parse_scenario)

FIG1 = parse_scenario("fig1_hidden_ap")
FIG1_TEXT = (resources.files("coofdma") / "scenarios" / "fig1_hidden_ap.toml").read_text()

MINIMAL = """
seed = 3
[topology]
links = [["AP1", "STA1"]]
[topology.aps.AP1]
channel = 6
[topology.stas.STA1]
ap = "AP1"
sta_id = 1
[[traffic]]
ap = "AP1"
sta = "STA1"
bytes = 100
"""


def errors_of(text):
    with pytest.raises(ScenarioError) as ei:
        load_text(text, "t.toml")
    return ei.value.errors


def test_fig1_topology():
    topo = FIG1.topology
    assert list(topo.aps) == ["AP1", "AP2"]
    assert list(topo.stas) == ["STA1", "STA2"]
    assert not topo.hears("AP1", "AP2") and not topo.hears("AP2", "AP1")
    assert topo.hears("STA1", "AP2") and topo.hears("STA2", "AP1")


def test_both_fans_out():
    assert FIG1.schemes == ["RTSCTS", "CO_OFDMA"]
    assert load_text(MINIMAL).schemes == ["RTSCTS", "CO_OFDMA"]
    assert load_text(MINIMAL.replace("seed = 3", 'seed = 3\nscheme = "RTSCTS"')).schemes == ["RTSCTS"]


def test_duplicate_sta_id():
    text = MINIMAL + '[topology.stas.STA2]\nap = "AP1"\nsta_id = 1\n'
    errs = errors_of(text)
    assert len(errs) == 1 and "duplicate sta_id 1" in errs[0] and errs[0].startswith("line 16:")


def test_missing_seed():
    assert errors_of(MINIMAL.replace("seed = 3", "")) == ["seed: missing required key"]


def test_unknown_keys_with_lines():
    text = MINIMAL.replace("bytes = 100", "byts = 100").replace("channel = 6", "chanel = 6")
    errs = errors_of(text)
    assert any(e.startswith("line 6: topology.aps.AP1.chanel: unknown key") for e in errs)
    assert any(e.startswith("line 13: traffic.[0].byts: unknown key") for e in errs)
    assert errors_of(MINIMAL + "[mac]\nslots_us = 9\n")[0].startswith("line 15: mac.slots_us")
    assert "unknown key" in errors_of("bogus = 1\n" + MINIMAL)[0]


def test_bad_values():
    assert "not a 2.4 GHz channel" in errors_of(MINIMAL.replace("channel = 6", "channel = 40"))[0]
    assert "expected a number" in errors_of(MINIMAL + "[expect]\nall_delivered = 'yes'\n")[0]
    assert "not an associated STA" in errors_of(MINIMAL.replace('sta = "STA1"', 'sta = "STA9"'))[0]
    assert len(errors_of("seed = = 1")) == 1


def test_overrides_and_seed():
    sc = apply_overrides(FIG1, ["n_sym=8", "mac.cw_min=31", "backoff={AP1 = [0, 2]}"])
    assert sc.n_sym_override == 8 and sc.mac.cw_min == 31
    assert sc.mac.backoff_slots == {"AP1": [0, 2]}
    assert FIG1.with_seed(2 ** 64 - 1).seed == 2 ** 64 - 1
    with pytest.raises(ScenarioError):
        apply_overrides(FIG1, ["mac.cw_mni=31"])


@pytest.mark.parametrize("name", bundled_names())
def test_bundled_summary_regression(name, tmp_path):
    rep = run_scenario(parse_scenario(name), tmp_path)
    expected = resources.files("coofdma") / "scenarios" / "expected" / f"{name}.txt"
    assert (tmp_path / "summary.txt").read_text() == expected.read_text()
    assert rep.ok
    # every expect key has exactly one verdict
    assert sorted(c.name for c in rep.checks) == sorted(set(rep.scenario.expect) - {"rtt_mean_tol_ns"})


def test_csv_byte_identical(tmp_path):
    sc = FIG1.with_seed(11)
    run_scenario(sc, tmp_path / "a")
    run_scenario(sc, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "packets_RTSCTS.csv" in names and "allocations_CO_OFDMA.csv" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_cli_run_pass_and_fail(tmp_path, capsys):
    assert main(["run", "--scenario", "fig1_hidden_ap", "--out", str(tmp_path / "ok")]) == 0
    out = capsys.readouterr().out
    assert "PASS co_ofdma_completion_us: 212.000 us" in out
    # the standard symbol count gives 198.4 us, so the 212 us check fails
    rc = main(["run", "--scenario", "fig1_hidden_ap", "--out", str(tmp_path / "bad"),
               "--override", "n_sym=8"])
    assert rc == 1
    assert "FAIL co_ofdma_completion_us: 198.400 us" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "nope.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL.replace("seed = 3", ""))
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "seed: missing required key" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "fig1_hidden_ap", "--seed", "-1"])


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    sc = tmp_path / "m.toml"
    sc.write_text(MINIMAL)
    assert main(["run", "--scenario", str(sc)]) == 0
    assert (tmp_path / "envout" / "m" / "packets_RTSCTS.csv").is_file()


def test_seed_flag_changes_only_seeded_outputs(tmp_path):
    assert main(["trigger-stats", "--out", str(tmp_path / "a"), "--seed", "1", "--trials", "50"]) == 0
    assert main(["trigger-stats", "--out", str(tmp_path / "b"), "--seed", "2", "--trials", "50"]) == 0
    a = (tmp_path / "a" / "trigger_rtt.csv").read_text()
    assert a != (tmp_path / "b" / "trigger_rtt.csv").read_text()
    assert len(a.splitlines()) == 1 + 100


def test_cfo_sim_subcommand(tmp_path, capsys):
    assert main(["cfo-sim", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "cfo_diff.csv").read_text().startswith("time_s,diff_hz,loop\n")
    assert not (tmp_path / "trigger_rtt.csv").exists()


def test_airtime_subcommand(capsys):
    assert main(["airtime", "--kind", "legacy", "--bytes", "20"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "total_us=52.0"
    assert main(["airtime", "--bytes", "500"]) == 0
    assert "total_us=104.0" in capsys.readouterr().out
    assert main(["airtime", "--kind", "mu", "--ru", "106", "--override", "n_sym=9"]) == 0
    assert "total_us=176.0 n_sym=9 standard_n_sym=8" in capsys.readouterr().out
    assert main(["airtime", "--override", "mcs=3"]) == 2


def test_sweep(tmp_path):
    rows = run_sweep(FIG1, {"backhaul.one_way_base_ns": [2000, 4000], "n_sym": [8, 9]},
                     tmp_path, jobs=2)
    assert [r["point"] for r in rows] == ["p000", "p001", "p002", "p003"]
    assert len({r["seed"] for r in rows}) == 4
    table = (tmp_path / "sweep.csv").read_text().splitlines()
    assert table[0].startswith("point,seed,backhaul.one_way_base_ns,n_sym,")
    # only the (2 us, n_sym=9) point reproduces the reference schedule
    assert [r["checks_failed"] == 0 for r in rows] == [False, True, False, False]
    serial = run_sweep(FIG1, {"backhaul.one_way_base_ns": [2000, 4000], "n_sym": [8, 9]},
                       tmp_path / "serial", jobs=1)
    assert (tmp_path / "serial" / "sweep.csv").read_text() == "\n".join(table) + "\n"
    assert serial == rows


def test_cli_sweep(tmp_path):
    rc = main(["sweep", "--scenario", "fig1_hidden_ap", "--out", str(tmp_path),
               "--param", "n_sym=8,9", "--jobs", "1"])
    assert rc == 1
    assert (tmp_path / "p001" / "summary.txt").is_file()


def test_plots(tmp_path):
    pytest.importorskip("matplotlib")
    assert main(["run", "--scenario", "fig1_hidden_ap", "--out", str(tmp_path / "a"), "--plots"]) == 0
    assert main(["run", "--scenario", "fig1_hidden_ap", "--out", str(tmp_path / "b"), "--plots"]) == 0
    svg = tmp_path / "a" / "schedule_RTSCTS.svg"
    assert svg.read_text().lstrip().startswith("<?xml")
    assert svg.read_bytes() == (tmp_path / "b" / "schedule_RTSCTS.svg").read_bytes()


def test_console_script_exit_code(tmp_path):
    env = dict(os.environ, **{OUT_ENV: str(tmp_path)})
    ok = subprocess.run([sys.executable, "-m", "coofdma.cli", "run", "--scenario", "withdrawal"],
                        env=env, capture_output=True, text=True)
    assert ok.returncode == 0, ok.stderr
    assert Path(tmp_path, "withdrawal", "summary.txt").is_file()


def test_allocation_dump_flags_padding(tmp_path):
    run_scenario(FIG1, tmp_path)
    rows = (tmp_path / "allocations_CO_OFDMA.csv").read_text().splitlines()
    assert rows[0] == ("txop,initiator,grant_ns,ap,sta_id,ru,mcs,n_sym,duration_us,padded,"
                       "start_ns,withdrawn")
    # each user needs 8 symbols; the n_sym=9 override pads both
    assert rows[1:] == ["0,AP1,34000,AP1,1,RU106-0,7,8,176.0,1,36000,0",
                        "0,AP1,34000,AP2,2,RU106-1,7,8,176.0,1,36000,0"]
