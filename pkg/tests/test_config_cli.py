import json
import math
import textwrap
from pathlib import Path

import pytest

from nvdd import cli
from nvdd.config import ConfigError, EXPERIMENT_KINDS, load_config, parse_config

SYSTEM = {"nv": {"Bz": "0.09 T"}, "nuclei": [{"label": "13C", "position_nm": [1.2, 0.6, 1.0]}]}


def write(tmp_path: Path, text: str, name: str = "cfg.yaml") -> Path:
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def errors_of(doc) -> dict:
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    return dict(err.value.errors)


# -- configuration --------------------------------------------------------------------------


def test_units_are_converted():
    cfg = parse_config({"system": {"nv": {"Bz": "900 G", "D": "2.87 GHz"}, "nuclei": []},
                        "experiment": {"kind": "ccd-coherence", "rabi1": "1 MHz", "phi": "-90 deg",
                                       "noise": {"delta_rms": "50 kHz", "xi1_rms": 0.01}}})
    assert cfg.system.nv.Bz == pytest.approx(0.09)
    assert cfg.system.nv.D == pytest.approx(2 * math.pi * 2870)
    assert cfg.params["rabi1"] == pytest.approx(2 * math.pi)
    assert cfg.params["phi"] == pytest.approx(-math.pi / 2)
    assert cfg.params["noise"]["delta_rms"] == pytest.approx(2 * math.pi * 0.05)
    assert cfg.params["rabi2"] is None and cfg.params["n_realizations"] == 500


def test_grid_expansion():
    cfg = parse_config({"system": SYSTEM, "experiment": {"kind": "spectrum", "n_blocks": 4,
                                                         "tau": {"start": "0.4 us", "stop": "600 ns", "points": 3}}})
    assert cfg.params["tau"] == pytest.approx([0.4, 0.5, 0.6])


@pytest.mark.parametrize("doc, path, fragment", [
    ({"system": {"nv": {"Bz": "0.09 Tesla"}}, "experiment": {"kind": "ja-sweep", "z": [1]}},
     "system.nv.Bz", "unknown field unit 'Tesla'"),
    ({"system": {"nv": {"Bz": 0.09}}, "experiment": {"kind": "ja-sweep", "z": [1]}},
     "system.nv.Bz", "'<number> <unit>'"),
    ({"system": SYSTEM, "experiment": {"kind": "ja-sweep", "z": [1], "zz": 2}}, "experiment.zz", "unknown field"),
    ({"system": SYSTEM, "experiment": {"kind": "ja-sweep"}}, "experiment.z", "required"),
    ({"system": SYSTEM, "experiment": {"kind": "nmr"}}, "experiment.kind", "expected one of"),
    ({"system": SYSTEM, "experiment": {"kind": "ja-sweep", "z": [1], "target": 3}},
     "experiment.target", "out of range"),
    ({"system": {"nv": {"Bz": "0.2 T"}}, "experiment": {"kind": "ja-sweep", "z": [1]}},
     "system.nv", "must be positive"),
    ({"system": {"nv": {"Bz": "0.09 T"}, "nuclei": [{"label": "Xe", "position_nm": [1, 1, 1]}]},
      "experiment": {"kind": "ja-sweep", "z": [1]}}, "system.nuclei[0].gamma_n", "required for label"),
    ({"system": SYSTEM, "experiment": {"kind": "hh-transfer", "rabi": "1 MHz", "detuning": "1 kHz"}},
     "experiment.detuning", "not both"),
    ({"system": SYSTEM, "experiment": {"kind": "ja-sweep", "z": [1]}, "seed": -1}, "seed", ">= 0"),
])
def test_config_errors_name_the_field(doc, path, fragment):
    errs = errors_of(doc)
    assert path in errs, errs
    assert fragment in errs[path]


def test_nucleus_at_origin_names_the_invariant():
    doc = {"system": {"nv": {"Bz": "0.09 T"}, "nuclei": [{"position_nm": [0, 0, 0.05]}]},
           "experiment": {"kind": "ja-sweep", "z": [1]}}
    errs = errors_of(doc)
    assert "|r| > 0.1 nm" in errs["system.nuclei[0].position_nm"]


def test_all_errors_are_reported_together():
    doc = {"system": {"nv": {"Bz": "fast"}}, "experiment": {"kind": "spectrum", "n_blocks": 0, "tau": "x"}}
    errs = errors_of(doc)
    assert {"system.nv.Bz", "experiment.n_blocks", "experiment.tau"} <= set(errs)


def test_system_document_by_path(tmp_path):
    write(tmp_path, "nv: {Bz: 0.05 T}\nnuclei: [{position_nm: [1, 0, 1]}]\n", "sys.yaml")
    cfg = load_config(write(tmp_path, "system: sys.yaml\nexperiment: {kind: ja-sweep, z: [1.0]}\n"))
    assert cfg.system.nv.Bz == 0.05 and cfg.system.n_nuclei == 1
    with pytest.raises(ConfigError, match="cannot read system document"):
        load_config(write(tmp_path, "system: missing.yaml\nexperiment: {kind: ja-sweep, z: [1.0]}\n"))


def test_invalid_yaml_reports_position(tmp_path):
    with pytest.raises(ConfigError, match="line 3"):
        load_config(write(tmp_path, "system:\n  nv: [unclosed\n"))


def test_demo_configs_are_valid():
    for path in sorted(Path(__file__).resolve().parents[1].joinpath("demos", "configs").glob("*.yaml")):
        if path.name.startswith("system_"):
            continue
        assert load_config(path).kind in EXPERIMENT_KINDS


# -- command line ----------------------------------------------------------------------------


JA_CONFIG = """\
system:
  nv: {Bz: 0.09 T}
  nuclei: [{position_nm: [1.2, 0.6, 1.0]}]
experiment: {kind: ja-sweep, z: [0.5, 1.84]}
seed: 3
"""


def test_run_writes_table_and_result_document(tmp_path, capsys):
    cfg = write(tmp_path, JA_CONFIG)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    out = capsys.readouterr().out
    assert "ja-sweep: ok" in out
    table = (tmp_path / "a" / "ja-sweep.csv").read_text()
    assert table.splitlines()[0].startswith("z,")
    assert len(table.splitlines()) == 3
    doc = json.loads((tmp_path / "a" / "ja-sweep.result.json").read_text())
    assert doc["status"] == "ok" and doc["seed"] == 3 and doc["errors"] == {}
    assert doc["data_file"] == "ja-sweep.csv" and len(doc["config_digest"]) == 64


def test_run_is_byte_identical_across_repeats_and_threads(tmp_path):
    cfg = write(tmp_path, JA_CONFIG)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    for name in ("ja-sweep.csv", "ja-sweep.result.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_is_recorded(tmp_path):
    cfg = write(tmp_path, JA_CONFIG)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path), "--seed", "11", "--threads", "1"]) == 0
    assert json.loads((tmp_path / "ja-sweep.result.json").read_text())["seed"] == 11


def test_jsonlike_format(tmp_path):
    cfg = write(tmp_path, JA_CONFIG)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path), "--format", "jsonlike",
                     "--threads", "1"]) == 0
    lines = (tmp_path / "ja-sweep.jsonl").read_text().splitlines()
    assert [json.loads(line)["z"] for line in lines] == [0.5, 1.84]


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "system: {nv: {Bz: 0.09}}\nexperiment: {kind: ja-sweep, z: [1]}\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "system.nv.Bz" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert cli.main(["run"]) == 2
    assert cli.main(["run", "--config", str(cfg), "--format", "xml"]) == 2


def test_failed_points_give_partial_status_and_exit_3(tmp_path, capsys):
    cfg = write(tmp_path, JA_CONFIG.replace("[0.5, 1.84]", "[0.5, 60.0]"))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path), "--threads", "1"]) == 3
    doc = json.loads((tmp_path / "ja-sweep.result.json").read_text())
    assert doc["status"] == "partial"
    assert any("50" in msg for msg in doc["errors"].values())
    assert "failed" in capsys.readouterr().out


def test_runtime_exception_exit_3(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "run_experiment", boom)
    cfg = write(tmp_path, JA_CONFIG)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "solver exploded" in capsys.readouterr().err
    doc = json.loads((tmp_path / "ja-sweep.result.json").read_text())
    assert doc["status"] == "failed" and "solver exploded" in doc["errors"]["experiment"]


@pytest.mark.parametrize("kind", EXPERIMENT_KINDS)
def test_explain_every_kind(kind, capsys):
    assert cli.main(["explain", kind]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) >= 3


def test_explain_content_and_unknown_kind(capsys):
    cli.main(["explain", "spectrum"])
    assert "w_u" in capsys.readouterr().out
    cli.main(["explain", "hh-transfer"])
    assert "Omega = w_l" in capsys.readouterr().out
    assert cli.main(["explain", "foo"]) == 2
    assert "valid kinds" in capsys.readouterr().err


def test_validate_config_reports_margins_and_warnings(tmp_path, capsys):
    cfg = write(tmp_path, JA_CONFIG)
    assert cli.main(["validate-config", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK: ja-sweep with 1 nucleus, Bz = 0.09 T")
    assert "larmor" in out and "min margin" in out
    hh = write(tmp_path, JA_CONFIG.replace("{kind: ja-sweep, z: [0.5, 1.84]}", "{kind: hh-transfer, rabi: 7 rad/us}"),
               "hh.yaml")
    assert cli.main(["validate-config", "--config", str(hh)]) == 0
    assert "warning:" in capsys.readouterr().out


def test_validate_config_error_exit_code(tmp_path):
    cfg = write(tmp_path, "system: {nv: {Bz: 0.09 T}}\nexperiment: {kind: spectrum, n_blocks: 2, tau: [1 us]}\n")
    assert cli.main(["validate-config", "--config", str(cfg)]) == 2
