import shutil
import subprocess
import sys

import pytest

from test_scenarios import SMALL

from nsrhc.cli import main
from nsrhc.mesh import import_mesh


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_run_fom(tmp_path, small_cfg, capsys):
    assert main(["run", str(small_cfg), "--mode", "fom_rhc", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "J_total=" in out and "status=ok" in out
    assert (tmp_path / "o" / "state_norm.csv").exists()


def test_run_stationary_bundled(tmp_path, capsys):
    assert main(["run", "example1", "--mode", "stationary_only", "--out", str(tmp_path)]) == 0
    assert "residual=" in capsys.readouterr().out


def test_sweep(tmp_path, small_cfg, capsys):
    code = main(["sweep", str(small_cfg), "--param", "T=0.04,0.2", "--out", str(tmp_path)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1].strip().startswith("no controls") and len(lines) == 4


@pytest.mark.parametrize(
    "argv",
    [
        ["sweep", "SMALL", "--param", "T"],
        ["sweep", "SMALL", "--param", "radius=1,2"],
        ["run", "missing.cfg", "--mode", "fom_rhc"],
    ],
)
def test_config_errors_exit_2(small_cfg, capsys, argv):
    argv = [str(small_cfg) if a == "SMALL" else a for a in argv]
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("configuration error:")


def test_bad_value_in_file(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL.replace("delta = 0.04", "delta = 0.05"))
    assert main(["run", str(p), "--mode", "fom_rhc", "--out", str(tmp_path)]) == 2
    assert "[rhc] delta" in capsys.readouterr().err


def test_mesh_commands(tmp_path, capsys):
    out = tmp_path / "d.txt"
    assert main(["mesh", "disc", "--h", "0.2", "--out", str(out)]) == 0
    assert import_mesh(out).tags == {"disc", "rect"}
    assert main(["mesh", "rectangle", "--nx", "3", "--ny", "2", "--length", "1", "--height", "1", "--out", str(out)]) == 0
    assert import_mesh(out).n_triangles == 12
    assert "triangles" in capsys.readouterr().out


def test_mesh_bad_parameters(tmp_path, capsys):
    assert main(["mesh", "disc", "--half-width", "0.9", "--out", str(tmp_path / "x.txt")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_check(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 8 and "8/8 checks passed" in out


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["run", "example1", "--mode", "fast"])
    assert exc.value.code == 2


@pytest.mark.skipif(shutil.which("nsrhc") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["nsrhc", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "check" in r.stdout


def test_module_entry():
    r = subprocess.run([sys.executable, "-m", "nsrhc.cli", "mesh", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "--cyl-h" in r.stdout
