from __future__ import annotations

import json
from pathlib import Path

import pytest

from vorperc.cli import main
from vorperc.harness import ExperimentManifest, csv_text, emit_plots, write_result
from vorperc.osss import and2


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def result_dir(stdout) -> Path:
    return Path(stdout.splitlines()[0])


def snapshot(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


class TestManifest:
    def test_digest_ignores_outputs(self):
        a = ExperimentManifest("theta", {"p": [0.5], "n": 8})
        b = ExperimentManifest("theta", {"n": 8, "p": [0.5]}, outputs=["x"])
        assert a.digest() == b.digest()
        assert a.digest() != ExperimentManifest("theta", {"p": [0.5], "n": 9}).digest()

    def test_csv_floats_use_repr(self):
        text = csv_text(["a", "b"], [(0.1, 3), (1 / 3, 4)])
        assert text == "a,b\n0.1,3\n0.3333333333333333,4\n"

    def test_write_is_content_addressed(self, tmp_path):
        m = ExperimentManifest("theta", {"n": 1})
        out = write_result(tmp_path, m, {"a.csv": "x\n"})
        assert out.name == f"theta-{m.digest()[:16]}"
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["outputs"] == ["a.csv"] and doc["digest"] == m.digest()


class TestCommands:
    def test_theta_twice_identical(self, tmp_path, capsys):
        argv = ["theta", "--d", 2, "--p", 0.5, "--n", 8, "--trials", 1000, "--seed", 7]
        code1, out1, _ = run(capsys, *argv, "--out", tmp_path / "a")
        code2, out2, _ = run(capsys, *argv, "--out", tmp_path / "b")
        assert code1 == code2 == 0
        assert snapshot(result_dir(out1)) == snapshot(result_dir(out2))

    def test_threads_do_not_change_bytes(self, tmp_path, capsys):
        argv = ["theta", "--n", 4, "--trials", 60, "--seed", 3]
        _, out1, _ = run(capsys, *argv, "--out", tmp_path / "a", "--threads", 1)
        _, out2, _ = run(capsys, *argv, "--out", tmp_path / "b", "--threads", 2)
        assert result_dir(out1).name == result_dir(out2).name
        assert snapshot(result_dir(out1)) == snapshot(result_dir(out2))

    def test_osss_exact_instance(self, tmp_path, capsys):
        path = tmp_path / "and2.json"
        path.write_text(and2().to_json())
        code, out, _ = run(capsys, "osss-exact", "--instance", path, "--out", tmp_path, "--check")
        assert code == 0
        doc = json.loads((result_dir(out) / "result.json").read_text())
        assert doc["slack"] == "3/16" and doc["variance"] == "3/16" and doc["rhs"] == "3/8"

    def test_crossing_check(self, tmp_path, capsys):
        code, out, _ = run(capsys, "crossing", "--d", 2, "--p", 0.5, "--n", 8, "--trials", 4000, "--check",
                           "--out", tmp_path)
        assert code == 0 and "check passed" in out

    def test_config_file_and_override(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n": 3, "trials": 20, "p": [0.4, 0.6]}))
        code, out, _ = run(capsys, "theta", "--config", cfg, "--trials", 30, "--out", tmp_path)
        assert code == 0
        params = json.loads((result_dir(out) / "manifest.json").read_text())["params"]
        assert params["n"] == 3 and params["trials"] == 30 and params["p"] == [0.4, 0.6]

    def test_manifest_regenerates_outputs(self, tmp_path, capsys):
        _, out, _ = run(capsys, "decay", "--n-min", 2, "--n-max", 6, "--trials", 50, "--out", tmp_path / "a")
        first = result_dir(out)
        params = json.loads((first / "manifest.json").read_text())["params"]
        cfg = tmp_path / "again.json"
        cfg.write_text(json.dumps(params))
        _, out2, _ = run(capsys, "decay", "--config", cfg, "--out", tmp_path / "b")
        assert snapshot(first) == snapshot(result_dir(out2))

    def test_rerun_leaves_files_untouched(self, tmp_path, capsys):
        argv = ["lemma", "--N", 8, "--alpha1", 0.5, "--grid-step", 0.01, "--out", tmp_path]
        _, out, _ = run(capsys, *argv)
        d = result_dir(out)
        stamps = {p.name: p.stat().st_mtime_ns for p in d.iterdir()}
        run(capsys, *argv)
        assert stamps == {p.name: p.stat().st_mtime_ns for p in d.iterdir()}


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["theta", "--bogus"])
        assert e.value.code == 2

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_parameter_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "theta", "--p", 1.5, "--trials", 3, "--out", tmp_path)
        assert code == 2 and "p must lie" in err

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"nope": 1}')
        assert run(capsys, "theta", "--config", cfg, "--out", tmp_path)[0] == 2

    def test_resource_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "theta", "--h", 0.0005, "--n", 8, "--trials", 1, "--out", tmp_path)
        assert code == 3

    def test_failed_check(self, tmp_path, capsys):
        code, out, err = run(capsys, "lemma", "--N", 16, "--check", "--out", tmp_path)
        assert code == 4 and "check failed" in err
        # the measurement itself is still written
        assert (result_dir(out) / "dichotomy.json").exists()


class TestPlots:
    def test_decay_and_influence(self, tmp_path, capsys):
        _, out, _ = run(capsys, "decay", "--n-min", 2, "--n-max", 6, "--trials", 50, "--out", tmp_path)
        decay = result_dir(out)
        _, out, _ = run(capsys, "influence", "--n", 2, "--trials", 5, "--out", tmp_path)
        infl = result_dir(out)
        code, out, _ = run(capsys, "plots", decay, infl)
        assert code == 0
        d = (decay / "plot_decay.py").read_text()
        assert "semilogy" in d and "fit.json" in d
        assert "imshow" in (infl / "plot_influence.py").read_text()

    def test_empty_result_set(self, tmp_path, capsys):
        assert run(capsys, "plots")[0] == 2

    def test_no_partial_scripts(self, tmp_path, capsys):
        _, out, _ = run(capsys, "decay", "--n-min", 2, "--n-max", 5, "--trials", 20, "--out", tmp_path)
        good = result_dir(out)
        assert run(capsys, "plots", good, tmp_path / "missing")[0] == 2
        assert not (good / "plot_decay.py").exists()

    def test_emit_plots_direct(self, tmp_path):
        with pytest.raises(Exception):
            emit_plots([])
