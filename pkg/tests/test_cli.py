import json
import subprocess
import sys

import numpy as np
import pytest

from gmmtools.fileformat import csv_text, read_gmm, read_manifest, sha256_file, write_gmm
from gmmtools import GaussianMixture

import golden
import oracles
from golden import A1, C2, run_cli


def error_payload(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


class TestGoldenScenarios:
    @pytest.mark.parametrize("name", sorted(golden.SCENARIOS))
    def test_cli_equals_library(self, name, tmp_path):
        for label, got, want in golden.SCENARIOS[name](tmp_path):
            assert got == want, label


class TestExitCodes:
    def test_success(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        code, out, err = run_cli("moments", tmp_path / "a.gmm")
        assert code == 0 and err == ""
        assert out.startswith("quantity,i,j,value\nmean,0,,")

    def test_usage_error(self):
        code, _, err = run_cli("convolve")
        assert code == 2
        assert error_payload(err)["category"] == "usage"

    def test_unknown_command(self):
        code, _, err = run_cli("frobnicate")
        assert code == 2 and error_payload(err)["status"] == "error"

    @pytest.mark.parametrize("cmd", [
        ["sample", "{a}", "--n", "10"],
        ["fit", "{d}", "--k", "1"],
        ["select-k", "{d}", "--k", "1", "2"],
        ["device-sim", "--curve", "x", "--range", "0", "1", "--noise-var", "0.1", "--n", "5"],
        ["device-fit", "{d}", "--k", "1"],
        ["product", "{a}", "{a}", "--n-mc", "100"],
        ["qc", "{a}", "--lo", "0", "--hi", "1", "--n-mc", "100"],
    ])
    def test_seed_is_mandatory(self, cmd, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        (tmp_path / "d.csv").write_text("x,y\n1,2\n3,4\n")
        argv = [c.format(a=tmp_path / "a.gmm", d=tmp_path / "d.csv") for c in cmd]
        code, _, err = run_cli(*argv)
        assert code == 2 and "--seed" in error_payload(err)["message"]

    def test_format_error(self, tmp_path):
        path = tmp_path / "bad.gmm"
        write_gmm(path, A1)
        path.write_text(path.read_text().replace("weight 0.29999999999999999", "weight x"))
        code, _, err = run_cli("moments", path)
        payload = error_payload(err)
        assert code == 3 and payload["category"] == "format"
        assert payload["field"] == "weight" and payload["line"] == 5

    def test_validation_error(self, tmp_path):
        path = tmp_path / "bad.gmm"
        write_gmm(path, A1)
        path.write_text(path.read_text().replace("weight 0.29999999999999999", "weight 0.5"))
        code, _, err = run_cli("moments", path)
        assert code == 2 and error_payload(err)["category"] == "validation"

    def test_io_error(self, tmp_path):
        code, _, err = run_cli("moments", tmp_path / "missing.gmm")
        assert code == 5 and error_payload(err)["category"] == "io"

    def test_numeric_error(self, tmp_path):
        far = GaussianMixture.gaussian([0.0], [[1e-6]])
        write_gmm(tmp_path / "p.gmm", far)
        write_gmm(tmp_path / "q.gmm", GaussianMixture.gaussian([100.0], [[1e-6]]))
        code, _, err = run_cli("fuse", tmp_path / "p.gmm", tmp_path / "q.gmm")
        assert code == 4 and error_payload(err)["category"] == "numeric"

    def test_share_count_mismatch(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        code, _, _ = run_cli("mix", tmp_path / "a.gmm", tmp_path / "a.gmm", "--shares", "1")
        assert code == 2

    def test_entry_point_process(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        proc = subprocess.run([sys.executable, "-m", "gmmtools.cli", "l2", str(tmp_path / "a.gmm"),
                               str(tmp_path / "a.gmm")], capture_output=True, text=True)
        assert proc.returncode == 0
        assert float(proc.stdout.splitlines()[1]) == pytest.approx(0.0, abs=1e-12)


class TestManifest:
    def test_written_next_to_output(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        out = tmp_path / "s.csv"
        assert run_cli("sample", tmp_path / "a.gmm", "--n", 50, "--seed", 9, "-o", out)[0] == 0
        man = read_manifest(str(out) + ".manifest.json")
        assert man["command"] == "sample" and man["seed"] == 9
        assert man["inputs"] == {str(tmp_path / "a.gmm"): sha256_file(tmp_path / "a.gmm")}
        assert man["outputs"] == {str(out): sha256_file(out)}
        assert man["wall_time_s"] >= 0

    def test_explicit_path(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        run_cli("--manifest", tmp_path / "m.json", "negate", tmp_path / "a.gmm", "-o", tmp_path / "n.gmm")
        assert read_manifest(tmp_path / "m.json")["command"] == "negate"

    def test_replay_reproduces(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        out = tmp_path / "fit.gmm"
        run_cli("sample", tmp_path / "c.gmm", "--n", 1000, "--seed", 1, "-o", tmp_path / "d.csv")
        run_cli("fit", tmp_path / "d.csv", "--k", 2, "--seed", 3, "-o", out, "--report", tmp_path / "r.csv")
        before = out.read_bytes()
        out.unlink()
        code, stdout, err = run_cli("replay", str(out) + ".manifest.json")
        assert code == 0, err
        assert out.read_bytes() == before
        assert "identical" in stdout

    def test_replay_detects_changed_input(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        run_cli("negate", tmp_path / "a.gmm", "-o", tmp_path / "n.gmm")
        write_gmm(tmp_path / "a.gmm", C2)
        code, _, err = run_cli("replay", tmp_path / "n.gmm.manifest.json")
        assert code == 1 and error_payload(err)["category"] == "replay"

    def test_replay_detects_changed_output(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        run_cli("negate", tmp_path / "a.gmm", "-o", tmp_path / "n.gmm")
        man_path = tmp_path / "n.gmm.manifest.json"
        man = json.loads(man_path.read_text())
        man["outputs"][str(tmp_path / "n.gmm")] = "0" * 64
        man_path.write_text(json.dumps(man))
        assert run_cli("replay", man_path)[0] == 1


class TestCommands:
    def test_convolve_moments_additive(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        run_cli("convolve", tmp_path / "a.gmm", tmp_path / "a.gmm", tmp_path / "a.gmm", "-o", tmp_path / "z.gmm")
        z = read_gmm(tmp_path / "z.gmm").mixture
        m = A1.moments()
        assert z.n_components == 8
        assert z.moments().mean[0] == pytest.approx(3 * m.mean[0], rel=1e-14)
        assert z.moments().covariance[0, 0] == pytest.approx(3 * m.covariance[0, 0], rel=1e-14)

    def test_pdf_grid_matches_oracle(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        _, out, _ = run_cli("pdf", tmp_path / "a.gmm", "--grid", -3, 5, 9)
        table = np.loadtxt(out.splitlines()[1:], delimiter=",")
        np.testing.assert_allclose(table[:, 1], oracles.mixture_pdf(A1, table[:, :1]), rtol=1e-13)
        assert np.all(np.diff(table[:, 2]) > 0)

    def test_pdf_points(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        (tmp_path / "p.csv").write_text(csv_text(["u", "v"], [(0.0, 0.0), (4.0, 4.0)]))
        _, out, _ = run_cli("pdf", tmp_path / "c.gmm", "--points", tmp_path / "p.csv")
        got = [float(r.split(",")[2]) for r in out.splitlines()[1:]]
        np.testing.assert_allclose(got, oracles.mixture_pdf(C2, np.array([[0.0, 0.0], [4.0, 4.0]])), rtol=1e-13)

    def test_pdf_grid_needs_1d(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        assert run_cli("pdf", tmp_path / "c.gmm", "--grid", 0, 1, 3)[0] == 2

    def test_histogram_overlays_pdf(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        _, hist, _ = run_cli("sample", tmp_path / "a.gmm", "--n", 10**5, "--seed", 1, "--hist", 200)
        _, pdf, _ = run_cli("pdf", tmp_path / "a.gmm", "--grid", -8, 10, 2001)
        h = np.loadtxt(hist.splitlines()[1:], delimiter=",")
        p = np.loadtxt(pdf.splitlines()[1:], delimiter=",")
        assert h[:, 2].sum() == 10**5
        # empirical CDF at bin edges against the emitted CDF column
        ecdf = np.cumsum(h[:, 2]) / 10**5
        cdf = np.interp(h[:, 1], p[:, 0], p[:, 2])
        assert np.max(np.abs(ecdf - cdf)) < 1.36 / np.sqrt(10**5)

    def test_select_k_table_and_model(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        run_cli("sample", tmp_path / "c.gmm", "--n", 1500, "--seed", 2, "-o", tmp_path / "d.csv")
        code, out, _ = run_cli("select-k", tmp_path / "d.csv", "--k", 1, 2, 3, "--seed", 1, "--restarts", 1,
                               "-o", tmp_path / "best.gmm")
        assert code == 0
        rows = out.splitlines()
        assert rows[0] == "k,n_params,loglik,aic,bic,best_aic,best_bic,error" and len(rows) == 4
        best = [r for r in rows[1:] if r.split(",")[6] == "true"]
        assert len(best) == 1
        assert read_gmm(tmp_path / "best.gmm").mixture.n_components == int(best[0].split(",")[0])

    def test_device_fit_norms(self, tmp_path):
        run_cli("device-sim", "--curve", "x-0.2*x^2", "--range", 0, 1, "--noise-var", 0.0025,
                "--n", 1000, "--seed", 7, "-o", tmp_path / "d.csv")
        code, out, err = run_cli("device-fit", tmp_path / "d.csv", "--k", 10, "--seed", 7,
                                 "--curve", "x-0.2*x^2", "--grid", 0, 1, 201, "--noise-var", 0.0025,
                                 "-o", tmp_path / "j.gmm")
        assert code == 0, err
        e, v = map(float, out.splitlines()[1].split(","))
        assert e < 1e-2 and v < 2e-3
        assert read_gmm(tmp_path / "j.gmm").note_value("measurand_dims") == "0"

    def test_posterior_measurand_override(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        run_cli("posterior", tmp_path / "c.gmm", "--y", 1.0, "--measurand-dims", 1, "-o", tmp_path / "p.gmm")
        run_cli("condition", tmp_path / "c.gmm", "--dims", 0, "--values", 1.0, "-o", tmp_path / "k.gmm")
        assert (tmp_path / "p.gmm").read_text() == (tmp_path / "k.gmm").read_text()

    def test_qc_closed_form_column(self, tmp_path):
        write_gmm(tmp_path / "s.gmm", GaussianMixture.gaussian([0.0], [[1.0]]))
        _, out, _ = run_cli("qc", tmp_path / "s.gmm", "--lo", -1.959964, "--hi", 1.959964,
                            "--n-mc", 10**5, "--seed", 1)
        est, se, closed = map(float, out.splitlines()[1].split(","))
        assert abs(est - 0.95) < 3 * se
        assert closed == pytest.approx(0.95, abs=1e-6)

    def test_affine_scalar_matrix(self, tmp_path):
        write_gmm(tmp_path / "a.gmm", A1)
        run_cli("affine", tmp_path / "a.gmm", "--matrix", "2", "-o", tmp_path / "t.gmm")
        t = read_gmm(tmp_path / "t.gmm").mixture
        np.testing.assert_allclose(t.means[:, 0], 2 * A1.means[:, 0])

    def test_ragged_matrix(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        assert run_cli("affine", tmp_path / "c.gmm", "--matrix", "1,2;3")[0] == 2

    def test_unsorted_keep(self, tmp_path):
        write_gmm(tmp_path / "c.gmm", C2)
        assert run_cli("marginalize", tmp_path / "c.gmm", "--keep", 1, 0)[0] == 2
