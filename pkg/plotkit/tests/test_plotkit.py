import shutil
import subprocess

import numpy as np
import pytest

from plotkit.cli import main_convergence, main_mesh
from plotkit.plots import plot_convergence, plot_mesh, read_mesh_file
from plotkit.series import ColumnError, SeriesSpec, fit_rate, read_history

LSHAPE_MESH = """8 6
0 0
1 0
1 1
0 1
-1 1
-1 0
-1 -1
0 -1
1 2 0 I D D
2 3 0 D I D
3 4 0 I D D
4 5 0 D I D
5 6 0 I D D
6 7 0 D D D
"""


def write_csv(path, refine="adaptive", ndof=None, gap=None):
    ndof = [100, 400, 1600, 6400] if ndof is None else ndof
    gap = [1e-1, 2.5e-2, 6.25e-3, 1.5625e-3] if gap is None else gap
    lines = ["# hho-bench convergence history",
             "# problem=bingham", f"# refine={refine}",
             "level,ndof,hmax,Eh,Ev0,Estar,LEB,gap,osc,newton_iters,wall_s"]
    for i, (n, g) in enumerate(zip(ndof, gap)):
        h = 1.4 * 2.0 ** -i
        lines.append(f"{i},{n},{h:.17g},-9.3,-9.2,-9.4,-9.4,{g:.17g},0,3,1.0")
    path.write_text("\n".join(lines) + "\n")
    return np.array(ndof, float), np.array(gap, float)


def test_read_history(tmp_path):
    p = tmp_path / "run.csv"
    write_csv(p)
    meta, data = read_history(p)
    assert meta["problem"] == "bingham"
    assert meta["refine"] == "adaptive"
    assert len(data["gap"]) == 4
    assert data["ndof"][0] == 100


def test_fitted_slope_matches_acceptance_formula(tmp_path):
    p = tmp_path / "run.csv"
    ndof, gap = write_csv(p)
    out = tmp_path / "fig.png"
    fitted = plot_convergence([SeriesSpec(str(p), "gap")], out)
    assert out.exists()
    oracle = float(np.polyfit(np.log(ndof[-3:]), np.log(gap[-3:]), 1)[0])
    assert abs(fitted[0][1] - oracle) <= 1e-10
    # exact power law: gap = ndof^-1 here up to the data values
    assert fitted[0][1] == pytest.approx(fit_rate(ndof, gap), abs=1e-15)


def test_two_point_series_straight_segment(tmp_path):
    p = tmp_path / "short.csv"
    write_csv(p, ndof=[10, 1000], gap=[1.0, 0.01])
    out = tmp_path / "fig.png"
    fitted = plot_convergence([SeriesSpec(str(p), "gap")], out,
                              fit_points=2)
    assert fitted[0][1] == pytest.approx(-1.0, abs=1e-12)


def test_styles_follow_refine_mode(tmp_path):
    pa = tmp_path / "a.csv"
    pu = tmp_path / "u.csv"
    write_csv(pa, refine="adaptive")
    write_csv(pu, refine="uniform")
    assert SeriesSpec(str(pa), "gap").load()[3] == "solid"
    assert SeriesSpec(str(pu), "gap").load()[3] == "dashed"


def test_missing_column_names_available(tmp_path):
    p = tmp_path / "run.csv"
    write_csv(p)
    with pytest.raises(ColumnError, match="available.*gap"):
        SeriesSpec(str(p), "nonsense").load()


def test_empty_series_rejected(tmp_path):
    with pytest.raises(ValueError, match="no series"):
        plot_convergence([], tmp_path / "fig.png")


def test_cli_convergence(tmp_path, capsys):
    p = tmp_path / "run.csv"
    write_csv(p)
    out = tmp_path / "fig.png"
    code = main_convergence(["--csv", f"{p}:gap:mylabel",
                             "--out", str(out)])
    assert code == 0
    assert out.exists()
    msg = capsys.readouterr().out
    assert "mylabel: fitted slope" in msg


def test_cli_convergence_bad_column(tmp_path, capsys):
    p = tmp_path / "run.csv"
    write_csv(p)
    code = main_convergence(["--csv", f"{p}:bogus",
                             "--out", str(tmp_path / "f.png")])
    assert code == 2
    assert "available" in capsys.readouterr().err


def test_plot_initial_lshape_mesh(tmp_path):
    mesh_file = tmp_path / "lshape.txt"
    mesh_file.write_text(LSHAPE_MESH)
    out = tmp_path / "mesh.png"
    n = plot_mesh(mesh_file, out)
    assert n == 6
    assert out.exists()
    # the removed quadrant stays empty: no vertex there
    verts, cells = read_mesh_file(mesh_file)
    used = verts[np.unique(cells)]
    assert not np.any((used[:, 0] > 1e-9) & (used[:, 1] < -1e-9))


def test_cli_mesh(tmp_path, capsys):
    mesh_file = tmp_path / "lshape.txt"
    mesh_file.write_text(LSHAPE_MESH)
    out = tmp_path / "mesh.png"
    assert main_mesh(["--mesh", str(mesh_file), "--out", str(out)]) == 0
    assert "6 triangles" in capsys.readouterr().out


def test_mesh_parse_error_reports_line(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("3 1\n0 0\n1 0\nnot-a-number 1\n0 1 2\n")
    with pytest.raises(ValueError, match="line 4"):
        read_mesh_file(bad)


def test_mesh_index_out_of_range(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("3 1\n0 0\n1 0\n0 1\n0 1 7\n")
    with pytest.raises(ValueError, match="line 5"):
        read_mesh_file(bad)


@pytest.mark.skipif(shutil.which("hho-bench") is None,
                    reason="hho-bench CLI not installed")
def test_end_to_end_with_generated_bingham_csv(tmp_path):
    # generate a small real history through the solver CLI, then plot it
    subprocess.run(
        ["hho-bench", "--problem", "bingham", "--eps", "1e-2",
         "--refine", "adaptive", "--max-ndof", "400",
         "--out", str(tmp_path)],
        check=True, capture_output=True)
    csv = tmp_path / "bingham_adaptive.csv"
    out = tmp_path / "fig.png"
    fitted = plot_convergence([SeriesSpec(str(csv), "gap")], out)
    meta, data = read_history(csv)
    oracle = float(np.polyfit(np.log(data["ndof"][-3:]),
                              np.log(data["gap"][-3:]), 1)[0])
    assert abs(fitted[0][1] - oracle) <= 1e-10
    n = plot_mesh(tmp_path / "bingham_adaptive_mesh.txt",
                  tmp_path / "mesh.png")
    assert n >= 6
