import json
import subprocess
import sys

import numpy as np
import pytest

from entrep.cli import main, render, to_csv, to_plain
from entrep.orthogonalize import near_orthogonal_family
from entrep.rng import stream
from entrep.strategy import matrix_to_pairs


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_value_classical(chsh_files, capsys):
    game, _ = chsh_files
    code, out, _ = run(["value", "--method", "classical", "--game", game], capsys)
    assert code == 0
    assert json.loads(out)["value"] == 0.75


def test_value_evaluate_and_validate(chsh_files, capsys):
    game, strat = chsh_files
    code, out, _ = run(["value", "--method", "evaluate", "--game", game, "--strategy", strat], capsys)
    assert code == 0
    assert json.loads(out)["value"] == pytest.approx((2 + 2**0.5) / 4, abs=1e-12)
    code, out, _ = run(["validate", "--game", game, "--strategy", strat], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["valid"] and rep["game"]["is_projection"]


def test_repeat_reports_stderr_and_samples(chsh_files, capsys):
    game, strat = chsh_files
    code, out, _ = run(["repeat", "--game", game, "--strategy", strat, "--ell", 4, "--samples", 200, "--mode", "mc"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert {"estimate", "stderr", "samples", "seed"} <= set(rep["value"])
    assert rep["mode"] == "mc" and rep["repetition"]["c1"] == 2


def test_classify_scrambling(capsys):
    code, out, _ = run(["classify", "--scrambling", "--ell", 3, "--dim", 8, "--trials", 3], capsys)
    rep = json.loads(out)
    assert code == 0 and len(rep["blocks"]) == 3
    assert all(b["status"] in ("dead", "alive") for b in rep["blocks"])


def test_orthogonalize_family_file(tmp_path, capsys):
    Y, rhos = near_orthogonal_family(2, 1, 3, 2, 1e-3, stream(0, "cli"))
    path = tmp_path / "fam.json"
    path.write_text(json.dumps({
        "k": 2,
        "operators": [matrix_to_pairs(y) for y in Y],
        "weights": [matrix_to_pairs(r) for r in rhos],
    }))
    code, out, _ = run(["orthogonalize", "--family", path], capsys)
    rep = json.loads(out)
    assert code == 0
    P = np.array(rep["projectors"])
    P = P[..., 0] + 1j * P[..., 1]
    np.testing.assert_allclose(P[0] @ P[1], 0, atol=1e-9)
    assert rep["residual"] <= rep["comparator"]


def test_verify_exit_codes(capsys):
    code, out, _ = run(["verify", "procrustes", "--trials", 20, "--seed", 7], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["suite"] == "procrustes" and rep["pass"] is True


def test_failed_suite_exits_one(monkeypatch, capsys):
    from entrep import suites

    monkeypatch.setitem(suites.SUITES, "procrustes", lambda **kw: {"suite": "procrustes", "pass": False})
    code, _, _ = run(["verify", "procrustes"], capsys)
    assert code == 1


def test_input_errors_exit_two(tmp_path, capsys):
    code, _, err = run(["value", "--method", "classical", "--game", tmp_path / "missing.json"], capsys)
    assert code == 2 and "No such file" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"questions": [0, 1],\n "answers": [0, 1],\n "pi": [[0.5, 0.5]],\n "V": []}')
    code, _, err = run(["validate", "--game", bad], capsys)
    assert code == 2 and "line 3" in err
    with pytest.raises(SystemExit) as e:
        main(["value", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["verify", "procrustes", "--trials", "0"])
    assert e.value.code == 2


def test_resource_limit_exits_three(chsh_files, capsys):
    game, strat = chsh_files
    code, _, err = run(["classify", "--game", game, "--strategy", strat, "--ell", 20], capsys)
    assert code == 3 and "resource limit" in err


def test_output_file_and_csv(chsh_files, tmp_path, capsys):
    game, _ = chsh_files
    out = tmp_path / "r.csv"
    code, stdout, _ = run(["value", "--method", "classical", "--game", game, "--format", "csv", "--output", out], capsys)
    assert code == 0 and stdout == ""
    assert out.read_text().splitlines() == ["method,value", "classical,0.75"]


def test_csv_uses_first_table():
    text = to_csv({"pass": True, "rows": [{"a": 1, "b": {"c": 2}}, {"a": 3, "b": {"c": 4}}]})
    assert text.splitlines() == ["a,b.c", "1,2", "3,4"]


def test_plain_conversion_drops_non_finite():
    plain = to_plain({"x": np.float64("inf"), "y": np.arange(2), "z": np.bool_(True)})
    assert plain == {"x": None, "y": [0, 1], "z": True}
    assert "NaN" not in render({"x": float("nan")}, "json")


def test_byte_identical_reruns(chsh_files, capsys):
    game, strat = chsh_files
    for argv in (
        ["repeat", "--game", game, "--strategy", strat, "--ell", 4, "--samples", 300, "--mode", "mc", "--seed", 3],
        ["classify", "--scrambling", "--ell", 3, "--trials", 2, "--mode", "mc", "--samples", 200, "--seed", 5],
        ["verify", "kproj", "--trials", 3, "--seed", 1],
    ):
        first = run(argv, capsys)[1]
        assert run(argv, capsys)[1] == first


def test_console_script(chsh_files):
    game, _ = chsh_files
    res = subprocess.run(
        [sys.executable, "-m", "entrep.cli", "value", "--method", "classical", "--game", str(game)],
        capture_output=True, text=True, check=False,
    )
    assert res.returncode == 0
    assert json.loads(res.stdout) == {"method": "classical", "value": 0.75}
