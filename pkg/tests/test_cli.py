import json

import pytest

from wlde.artifacts import read_manifest, verify_manifest
from wlde.cli import REPRODUCE_TARGETS, build_parser, main

SMALL_RUN = """\
name: small
growth: {s_f: 0.3, s_h: 0.7}
kernel: {family: gaussian, scale: 1.0}
dispersal: {delta: 0.5}
lattice: {extent: 64}
profile: {shape: pulse, amplitude: 0.8, half_width: 4.0}
horizon: 10
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_RUN)
    return path


def test_simulate_writes_manifest(tmp_path, config_file):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
    manifest = read_manifest(out)
    assert manifest["status"] == "ok"
    assert manifest["command"] == "simulate"
    assert [f["name"] for f in manifest["files"]] == ["summary.json", "trajectory.bin", "trajectory.csv"]
    assert verify_manifest(out) == []
    summary = json.loads((out / "summary.json").read_text())
    assert summary["generations"] == 10 and summary["stored"] == 11


def test_reruns_are_byte_identical(tmp_path, config_file):
    main(["simulate", "--config", str(config_file), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(config_file), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_stability_command(tmp_path, config_file):
    out = tmp_path / "out"
    assert main(["stability", "--config", str(config_file), "--out", str(out), "--seed", "7"]) == 0
    records = json.loads((out / "stability.json").read_text())
    assert [r["verdict"] for r in records] == ["LAS", "UNS", "LAS"]
    assert [r["perturbation"] for r in records] == ["decays", "grows", "decays"]
    assert read_manifest(out)["config"]["seed"] == 7
    assert (out / "phase_portrait.gp").exists()


def test_invalid_config_exits_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("growth: {s_f: 0.8, s_h: 0.3}\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_resource_failure_leaves_partial_manifest(tmp_path, config_file):
    config_file.write_text(SMALL_RUN + "simulate: {memory_budget_mb: 0.001}\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 3
    manifest = read_manifest(out)
    assert manifest["status"] == "partial"
    assert manifest["notes"][0].startswith("ResourceError")


def test_parser():
    parser = build_parser()
    args = parser.parse_args(["optimize", "--config", "table4", "--criterion", "acm", "--threads", "4"])
    assert (args.command, args.criterion, args.threads) == ("optimize", "acm", 4)
    assert parser.parse_args(["reproduce", "table4"]).target == "table4"
    with pytest.raises(SystemExit):
        parser.parse_args(["reproduce", "fig99"])
    with pytest.raises(SystemExit):
        parser.parse_args(["simulate"])


def test_every_target_has_a_shipped_config():
    from wlde.config import CONFIG_DIR
    from pathlib import Path

    for config_name, _ in REPRODUCE_TARGETS.values():
        assert (Path(CONFIG_DIR) / f"{config_name}.yaml").exists()


def test_reproduce_is_byte_identical(tmp_path):
    assert main(["reproduce", "fig2", "--out", str(tmp_path / "a")]) == 0
    assert main(["reproduce", "fig2", "--out", str(tmp_path / "b")]) == 0
    first, second = tmp_path / "a" / "fig2", tmp_path / "b" / "fig2"
    assert (first / "manifest.json").read_bytes() == (second / "manifest.json").read_bytes()
    for entry in read_manifest(first)["files"]:
        assert (first / entry["name"]).read_bytes() == (second / entry["name"]).read_bytes()


def test_reproduce_applies_seed(tmp_path):
    assert main(["reproduce", "fig2", "--out", str(tmp_path), "--seed", "5"]) == 0
    assert read_manifest(tmp_path / "fig2")["config"]["seed"] == 5


def test_reference_misses_are_noted(tmp_path):
    path = tmp_path / "fronts.yaml"
    path.write_text(
        "growth: {s_h: 0.8, allee: 0.1}\n"
        "dispersal: {delta: 0.5}\n"
        "lattice: {extent: 300}\n"
        "horizon: 100\n"
        "waves: {kernels: [{family: gaussian, scale: 2.0}], amplitude: 1.0, half_width: 10.0}\n"
        "reference: {values: {c_star/gaussian: 100.0}}\n"
    )
    out = tmp_path / "out"
    assert main(["wavespeed", "--config", str(path), "--out", str(out)]) == 0
    manifest = read_manifest(out)
    (cell,) = manifest["reference"]["cells"]
    assert cell["key"] == "c_star/gaussian" and not cell["within"]
    assert any(note.startswith("reference c_star/gaussian") for note in manifest["notes"])
