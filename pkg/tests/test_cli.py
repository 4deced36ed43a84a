import csv
import io
import json
from pathlib import Path

import pytest

from perpetuity.cli import (
    MV_TAIL_CSV_COLUMNS,
    PER_N_CSV_COLUMNS,
    TAIL_CSV_COLUMNS,
    ExperimentSpec,
    run,
    to_csv,
)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "csv_schema.json").read_text())

LOGNORMAL = {"kind": "log_normal", "mu": -1.0, "s": 1.0}
FIXTURE = {"kind": "two_point", "a": 2.0, "b": 0.5, "p_a": 1 / 3}
LOGGAMMA = {"kind": "log_gamma", "gamma": 4.0, "beta": 1.0, "mu": 5.0}


@pytest.fixture
def write(tmp_path):
    def _write(name, obj):
        p = tmp_path / name
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return str(p)

    return _write


def call(capsys, *argv):
    code = run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def strip_comments(text):
    return "\n".join(line for line in text.splitlines() if not line.startswith("#"))


class TestExitCodes:
    def test_alpha_lognormal(self, capsys, write):
        code, out, _ = call(capsys, "alpha", "--model", write("m.json", LOGNORMAL))
        assert code == 0
        payload = json.loads(out)
        assert payload["result"]["alpha"] == pytest.approx(2.0, abs=1e-10)
        assert payload["spec"]["model"] == LOGNORMAL

    def test_malformed_json(self, capsys, write):
        code, _, err = call(capsys, "alpha", "--model", write("m.json", "{not json"))
        assert code == 2
        assert json.loads(err)["error"] == "validation"

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = call(capsys, "alpha", "--model", str(tmp_path / "absent.json"))
        assert code == 2

    def test_unknown_command_and_bad_flags(self, capsys, write):
        assert call(capsys, "frobnicate")[0] == 2
        assert call(capsys, "is-tail", "--model", write("m.json", LOGNORMAL), "--logx", "2", "--paths", "-5")[0] == 2

    def test_numerical_failure(self, capsys, write):
        code, _, err = call(capsys, "alpha", "--model",
                            write("m.json", {"kind": "log_gamma", "gamma": 0.5, "beta": 1.0, "mu": 10.0}))
        assert code == 3
        assert json.loads(err)["type"] == "BoundaryRootError"

    def test_infeasible_reports_range(self, capsys, write):
        ens = write("e.json", {"d": 2, "entries": [[FIXTURE, 0.0], [0.0, FIXTURE]]})
        code, _, err = call(capsys, "mv-tail", "--ensemble", ens, "--u", "1,0", "--v", "1,0", "--logx", "1,60",
                            "--paths", "200", "--samples", "20000", "--n-max", "40")
        assert code == 3
        assert json.loads(err)["feasible_log_x_max"] == 1.0


class TestOutputs:
    def test_tail_csv_schema(self, capsys, write, tmp_path):
        out = tmp_path / "t.csv"
        code, _, _ = call(capsys, "tail", "--model", write("m.json", LOGGAMMA), "--logx-min", "20",
                          "--logx-max", "30", "--per-decade", "5", "--out", str(out))
        assert code == 0
        text = out.read_text()
        assert text.startswith("# spec: ")
        rows = list(csv.reader(io.StringIO(strip_comments(text))))
        assert tuple(rows[0]) == tuple(GOLDEN["tail"]) == TAIL_CSV_COLUMNS
        assert all(len(r) == len(rows[0]) for r in rows)
        # 6 significant digits
        assert rows[1][1].count("e") == 1 and len(rows[1][1].split("e")[0].replace(".", "")) == 6

    def test_schema_constants(self):
        assert list(PER_N_CSV_COLUMNS) == GOLDEN["is_tail_per_n"]
        assert list(MV_TAIL_CSV_COLUMNS) == GOLDEN["mv_tail"]

    def test_per_n_csv(self, capsys, write, tmp_path):
        out = tmp_path / "per_n.csv"
        code, _, _ = call(capsys, "is-tail", "--model", write("m.json", FIXTURE), "--logx", "2", "--paths", "1000",
                          "--per-n-csv", str(out))
        assert code == 0
        header = strip_comments(out.read_text()).splitlines()[0]
        assert header.split(",") == GOLDEN["is_tail_per_n"]

    def test_fig2a(self, capsys, tmp_path):
        svg, table = tmp_path / "f.svg", tmp_path / "f.csv"
        code, out, _ = call(capsys, "fig2a", "--logx-min", "20", "--logx-max", "40", "--per-decade", "10",
                            "--out", str(svg), "--csv", str(table))
        assert code == 0 and "wrote" in out
        assert svg.read_text().count("<polyline") == 2
        assert strip_comments(table.read_text()).splitlines()[0].split(",") == GOLDEN["tail"]

    def test_no_stray_temp_files(self, capsys, write, tmp_path):
        call(capsys, "alpha", "--model", write("m.json", LOGNORMAL), "--out", str(tmp_path / "a.json"))
        assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]

    def test_spec_roundtrip(self):
        spec = ExperimentSpec("ruin", LOGNORMAL, {"logx": 3.0}, {"out": "x.json"}, 7)
        assert ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec

    def test_csv_comment_holds_timestamp_only(self):
        text = to_csv(("a",), [{"a": 1.0}], ExperimentSpec("alpha"))
        assert [line.split(":")[0] for line in text.splitlines() if line.startswith("#")] == ["# spec", "# generated"]


MC_COMMANDS = [
    ("simulate-y", LOGNORMAL, ["--logx", "1", "--paths", "20000"]),
    ("is-tail", FIXTURE, ["--logx", "3", "--paths", "2000"]),
    ("ruin", LOGNORMAL, ["--logx", "5", "--paths", "5000"]),
    ("lindley", LOGNORMAL, ["--steps", "200", "--paths", "100"]),
    ("goldie", FIXTURE, ["--paths", "5000", "--burn-in", "100"]),
]


class TestDeterminism:
    @pytest.mark.parametrize("cmd,model,extra", MC_COMMANDS, ids=[c[0] for c in MC_COMMANDS])
    def test_rerun_is_byte_identical(self, capsys, write, cmd, model, extra):
        m = write("m.json", model)
        a = call(capsys, cmd, "--model", m, "--seed", "5", "--workers", "2", *extra)
        b = call(capsys, cmd, "--model", m, "--seed", "5", "--workers", "2", *extra)
        assert a[0] == 0 and a[1] == b[1]

    def test_workers_env_default(self, capsys, write, monkeypatch):
        m = write("m.json", LOGNORMAL)
        monkeypatch.setenv("PERP_WORKERS", "3")
        _, out, _ = call(capsys, "ruin", "--model", m, "--logx", "2", "--paths", "300")
        assert json.loads(out)["result"]["config_echo"]["workers"] == 3
        monkeypatch.setenv("PERP_WORKERS", "nope")
        assert call(capsys, "ruin", "--model", m, "--logx", "2", "--paths", "300")[0] == 2

    def test_mv_alpha_rerun(self, capsys, write):
        ens = write("e.json", {"d": 2, "entries": [[FIXTURE, 0.0], [0.0, FIXTURE]]})
        a = call(capsys, "mv-alpha", "--ensemble", ens, "--samples", "20000", "--seed", "3")
        b = call(capsys, "mv-alpha", "--ensemble", ens, "--samples", "20000", "--seed", "3")
        assert a[0] == 0 and a[1] == b[1]
        assert json.loads(a[1])["result"]["m_alpha"] > 0
