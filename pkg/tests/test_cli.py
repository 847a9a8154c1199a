import csv
import json
import subprocess
import sys
import textwrap

import pytest

from risiab import cli
from risiab.config import parse_document
from risiab.errors import InvariantError

SCENARIO = textwrap.dedent("""\
    seed: 3
    trials: 20
    ue_count: 8
    region: {width: 400, height: 400}
    trees: {mode: deterministic, total_depth_m: 50, in_leaf_probability: 0.5}
    sites:
      - {id: 0, kind: mbs, x: 200, y: 200, p_tx_dbm: 40}
      - {id: 1, kind: sbs_iab, x: 320, y: 200, p_tx_dbm: 40}
    ris: [{x: 305, y: 215, elements: 64, serves: 1}]
    ncr: [{x: 305, y: 185, serves: 1}]
""")


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(SCENARIO)
    return str(path)


def rows_of(path):
    with open(path) as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(body))


def header_of(path):
    with open(path) as fh:
        return [ln for ln in fh if ln.startswith("#")]


class TestParseValues:
    def test_list(self):
        assert cli.parse_values("1, 2.5,4") == (1.0, 2.5, 4.0)

    def test_range(self):
        assert cli.parse_values("0:200:25") == tuple(float(v) for v in range(0, 201, 25))

    @pytest.mark.parametrize("bad", ["", "a,b", "0:10:3", "5:0:1", "0:1:0"])
    def test_bad(self, bad):
        with pytest.raises(cli.ConfigError):
            cli.parse_values(bad)


class TestRun:
    def test_depth_sweep_row_count(self, config, tmp_path):
        out = tmp_path / "t.csv"
        code = cli.run(["--config", config, "--sweep", "tree_depth", "--values", "0:200:25",
                        "--variants", "direct,ris,ncr", "--trials", "2", "--output", str(out)])
        assert code == 0
        rows = rows_of(out)
        assert len(rows) == 27
        assert list(rows[0]) == list(cli.COLUMNS)
        assert {r["variant"] for r in rows} == {"direct", "ris", "ncr"}

    def test_single_trial_wide_interval(self, config, tmp_path):
        out = tmp_path / "t.csv"
        assert cli.run(["--config", config, "--trials", "1", "--output", str(out)]) == 0
        for r in rows_of(out):
            rho, lo, hi = float(r["rho_hat"]), float(r["ci_low"]), float(r["ci_high"])
            assert r["trials"] == "1" and lo <= rho <= hi
            if 0 < rho < 1:
                assert hi - lo > 0.4

    def test_byte_identical_reruns(self, config, tmp_path, monkeypatch):
        outs = []
        for n, workers in enumerate(("1", "2", "1")):
            monkeypatch.setenv("RISIAB_WORKERS", workers)
            out = tmp_path / f"t{n}.csv"
            assert cli.run(["--config", config, "--output", str(out)]) == 0
            outs.append((out.read_bytes(), (tmp_path / f"t{n}.csv.manifest.json").read_text()))
        assert outs[0][0] == outs[1][0] == outs[2][0]
        manifests = [json.loads(m) for _, m in outs]
        assert all({**m, "table": ""} == {**manifests[0], "table": ""} for m in manifests)

    def test_header_reproduces_run(self, config, tmp_path):
        out = tmp_path / "t.csv"
        assert cli.run(["--config", config, "--seed", "9", "--output", str(out)]) == 0
        doc = "".join(ln[2:] for ln in header_of(out)[1:])
        cfg = parse_document(doc)
        assert cfg.scenario.seed == 9
        again = tmp_path / "again.yaml"
        again.write_text(doc)
        out2 = tmp_path / "t2.csv"
        assert cli.run(["--config", str(again), "--output", str(out2)]) == 0
        assert out2.read_bytes() == out.read_bytes()

    def test_manifest_records_overrides(self, config, tmp_path):
        out = tmp_path / "t.csv"
        cli.run(["--config", config, "--trials", "3", "--seed", "4", "--output", str(out)])
        m = json.loads((tmp_path / "t.csv.manifest.json").read_text())
        assert m["overrides"] == {"trials": 3, "seed": 4}
        assert m["config"]["trials"] == 3 and m["seed"] == 4
        assert m["version"] == cli.__version__ and m["rows"] == 3

    def test_stdout(self, config, capsys):
        assert cli.run(["--config", config, "--trials", "2", "--variants", "direct"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("# risiab")
        assert [ln.split(",")[4] for ln in out.splitlines() if ln.startswith(",,")] == ["direct"]

    def test_print_config(self, config, capsys):
        assert cli.run(["--config", config, "--print-config", "--trials", "7"]) == 0
        assert parse_document(capsys.readouterr().out).scenario.trials == 7

    def test_preset(self, tmp_path):
        out = tmp_path / "p.csv"
        args = ["--preset", "fig3", "--trials", "1", "--values", "20", "--output", str(out)]
        assert cli.run(args) == 0
        assert len(rows_of(out)) == 2


class TestExitCodes:
    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text(SCENARIO + "psi: 1.5\n")
        out = tmp_path / "t.csv"
        assert cli.run(["--config", str(bad), "--output", str(out)]) == cli.EXIT_CONFIG
        assert not out.exists()

    def test_bad_override(self, config):
        assert cli.run(["--config", config, "--trials", "0"]) == cli.EXIT_CONFIG
        assert cli.run(["--config", config, "--values", "1,2"]) == cli.EXIT_CONFIG
        assert cli.run(["--config", config, "--variants", "laser"]) == cli.EXIT_CONFIG

    def test_missing_source(self):
        assert cli.run([]) == cli.EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert cli.run(["--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_IO

    def test_unwritable_output(self, config, tmp_path):
        out = tmp_path / "missing-dir" / "t.csv"
        assert cli.run(["--config", config, "--output", str(out)]) == cli.EXIT_IO

    def test_no_partial_output(self, config, tmp_path):
        # the manifest cannot be placed, so the table must not survive either
        out = tmp_path / "t.csv"
        (tmp_path / "t.csv.manifest.json").mkdir()
        assert cli.run(["--config", config, "--output", str(out)]) == cli.EXIT_IO
        assert not out.exists()
        assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".risiab")] == []

    def test_invariant(self, config, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise InvariantError("rates out of range")

        monkeypatch.setattr(cli, "execute", broken)
        out = tmp_path / "t.csv"
        assert cli.run(["--config", config, "--output", str(out)]) == cli.EXIT_INVARIANT
        assert not out.exists()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "risiab.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and cli.__version__ in proc.stdout
