import json

import pytest

from levelcurv.cli import main, read_config


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_profile_csv_to_out(tmp_path, capsys):
    code, _, _ = run(capsys, "profile", "--function", "x^2 + y^2", "--arity", "2", "--t-min", "0.5",
                     "--t-max", "1.5", "--n-t", "3", "--radius", "2", "--cell", "0.02",
                     "--out", str(tmp_path), "--plot", "--export-mesh", "1.0")
    assert code == 0
    assert (tmp_path / "profile.csv").read_text().startswith("t,R,K,absK,K_l0,K_l1,absK_l0,absK_l1,L_1,absL_1,")
    assert (tmp_path / "profile.svg").exists()
    assert list(tmp_path.glob("mesh_t*.obj"))


def test_jumps_json(tmp_path, capsys):
    code, out, _ = run(capsys, "jumps", "--function", "x^2+y^2+z^2", "--arity", "3", "--t-min", "-1",
                       "--t-max", "1", "--n-t", "5", "--radius", "2", "--cell", "0.1", "--out", str(tmp_path))
    assert code == 0
    report = json.loads(out)
    assert [j["kind"] for j in report["jumps"]] == ["critical-value"]


def test_oracle_json(capsys):
    code, out, _ = run(capsys, "oracle", "--function", "x^2 + y^2", "--arity", "2", "--t", "1",
                       "--samples", "100", "--radius", "2", "--cell", "0.02")
    assert code == 0
    data = json.loads(out)
    for key in ("K_est", "absK_est", "stderr", "n_used", "n_rejected"):
        assert key in data
    assert data["n_used"] == 100


def test_oracle_seed_changes_stream(capsys):
    args = ["oracle", "--function", "x^2 + 2*y^2", "--arity", "2", "--t", "1", "--samples", "50",
            "--radius", "2", "--cell", "0.02"]
    a = json.loads(run(capsys, *args)[1])
    b = json.loads(run(capsys, *args)[1])
    assert a == b


def test_gauss_image(tmp_path, capsys):
    code, out, _ = run(capsys, "gauss-image", "--function", "x^2+y^2+z^2", "--arity", "3", "--t", "1",
                       "--cells", "1000", "--radius", "2", "--cell", "0.1", "--out", str(tmp_path))
    assert code == 0
    data = json.loads(out)
    assert list(data["strata"]) == ["1"]
    assert (tmp_path / "raster.csv").read_text().startswith("x,y,z,area,fiber_count,degree")


def test_escape(capsys):
    code, out, _ = run(capsys, "escape", "--function", "x^2 + y^2", "--arity", "2", "--c", "1",
                       "--direction", "0.6,0.8", "--radius", "2")
    assert code == 0
    comps = json.loads(out)["components"]
    assert len(comps) == 1 and comps[0]["crosses_c"]


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text('# sample\nfunction = "x^2 + y^2"\narity = 2\nt = 4\nsamples = 20\nradius = 3\ncell = 0.05\n')
    assert read_config(cfg)["function"] == "x^2 + y^2"
    code, out, _ = run(capsys, "oracle", "--config", str(cfg), "--t", "1")
    assert code == 0
    assert json.loads(out)["n_used"] == 20
    assert json.loads(out)["absK_mesh"] == pytest.approx(6.283, rel=0.01)


@pytest.mark.parametrize("argv", [
    [],
    ["profile", "--function", "x^2", "--arity", "2"],
    ["profile", "--function", "x^(1/2)", "--arity", "2", "--t-min", "0", "--t-max", "1"],
    ["profile", "--function", "x^2", "--arity", "4", "--t-min", "0", "--t-max", "1"],
    ["escape", "--function", "x^2+y^2", "--arity", "2", "--c", "1", "--direction", "1,2,3"],
    ["gauss-image", "--function", "x^2+y^2", "--arity", "2", "--t", "1", "--radius", "2", "--cell", "0.5"],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "usage error" in err


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    assert run(capsys, "oracle", "--config", str(cfg))[0] == 1


def test_numeric_failure(capsys):
    code, _, err = run(capsys, "oracle", "--function", "sqrt(x - 10) + y", "--arity", "2", "--t", "1",
                       "--radius", "2", "--samples", "10")
    assert code == 2 and "numeric failure" in err


def test_io_errors(tmp_path, capsys):
    assert run(capsys, "oracle", "--config", str(tmp_path / "missing.cfg"))[0] == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(capsys, "profile", "--function", "x^2+y^2", "--arity", "2", "--t-min", "0.5",
                       "--t-max", "1", "--n-t", "2", "--radius", "2", "--out", str(blocker / "d"))
    assert code == 3 and "I/O error" in err
