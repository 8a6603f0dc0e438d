import json
import subprocess
import sys

import numpy as np
import pytest

from clustergof import cli, datasets, gof
from clustergof.mixtures import MixtureParams, MixtureSpec, load_params, sample, save_params
from clustergof.numerics import make_rng
from clustergof.sim import scenario_catalog


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def gaussian_file(tmp_path):
    t = scenario_catalog()["table2/gaussian/0.90"]
    X = sample(t.generator, t.params, 600, make_rng(42, "golden")).X
    path = tmp_path / "g.csv"
    datasets.write_data(path, [f"x{j}" for j in range(1, 7)], X)
    return path


class TestQuantile:
    def test_voting_threshold(self, capsys):
        code, out, _ = run(["quantile", "--p", 3, "--B", 13, "--alpha", 0.05], capsys)
        assert code == 0
        assert out == "alpha_n=0.00393786\nq=13.3499\n"

    def test_cytometry_threshold(self, capsys):
        _, out, _ = run(["quantile", "--p", 5, "--B", 28], capsys)
        q = float(out.split("q=")[1])
        assert abs(q - 19.12) <= 0.01

    def test_single_block(self, capsys):
        _, out, _ = run(["quantile", "--p", 2, "--B", 1, "--alpha", 0.1], capsys)
        assert out.startswith("alpha_n=0.1\n")

    def test_usage(self, capsys):
        assert run(["quantile", "--p", 3, "--B", 13, "--alpha", 0.7], capsys)[0] == 2
        assert run(["quantile", "--p", 0, "--B", 13], capsys)[0] == 2
        assert run(["nonsense"], capsys)[0] == 2


class TestFit:
    def test_golden(self, gaussian_file, tmp_path, capsys):
        out = tmp_path / "fit.json"
        code, stdout, _ = run(["fit", gaussian_file, "--family", "gaussian_diagonal", "--K", "1:4",
                               "--n-starts", 5, "--seed", 3, "--out", out], capsys)
        assert code == 0 and stdout.startswith("selected K=3")
        rows = (tmp_path / "fit.bic.csv").read_text().splitlines()
        assert rows[0] == "K,bic"
        bics = {int(k): float(v) for k, v in (r.split(",") for r in rows[1:])}
        golden = {1: -5945.407084586848, 2: -5847.640178872413, 3: -5745.251622573317, 4: -5768.861687134205}
        for K, v in golden.items():
            assert bics[K] == pytest.approx(v, rel=1e-9)
        spec, params = load_params(out)
        assert spec.K == 3
        post = gof.read_posteriors(tmp_path / "fit.posteriors.csv")
        assert post.shape == (600, 3)
        manifest = json.loads((tmp_path / "fit.manifest.json").read_text())
        assert manifest["subcommand"] == "fit" and manifest["seed"] == 3

    def test_single_component_moments(self, tmp_path, capsys):
        x = np.random.default_rng(0).normal(2.0, 3.0, size=(200, 1))
        datasets.write_data(tmp_path / "one.csv", ["x"], x)
        code, _, _ = run(["fit", tmp_path / "one.csv", "--family", "gaussian_diagonal", "--K", 1,
                          "--n-starts", 2, "--out", tmp_path / "one.json"], capsys)
        assert code == 0
        _, params = load_params(tmp_path / "one.json")
        assert params.components["means"][0, 0] == pytest.approx(x.mean(), abs=1e-12)
        assert params.components["variances"][0, 0] == pytest.approx(x.var(), abs=1e-12)

    def test_categorical_selects_K(self, tmp_path, capsys):
        rng = np.random.default_rng(7)
        K, d = 4, 16
        P = np.zeros((K, d, 3))
        for k in range(K):
            for j in range(d):
                p = np.full(3, 0.05)
                p[(k + j) % 2 if k < 2 else 2 * ((k + j) % 2)] = 0.9
                P[k, j] = p / p.sum()
        spec = MixtureSpec("multinomial_product", K, d, categories=(3,) * d)
        params = MixtureParams(np.full(K, 0.25), {"probs": P}).validate(spec)
        X = sample(spec, params, 435, rng).X
        data = tmp_path / "votes.csv"
        datasets.write_data(data, [f"v{j}" for j in range(1, d + 1)], X.astype(int), fmt=str)
        datasets.write_categories(datasets.sidecar_path(data), [3] * d)
        code, stdout, _ = run(["fit", data, "--family", "multinomial_product", "--K", "1:6",
                               "--n-starts", 5, "--out", tmp_path / "votes.json"], capsys)
        assert code == 0 and stdout.startswith("selected K=4")
        code, stdout, _ = run(["gof", data, "--params", tmp_path / "votes.json", "--mc-draws", 10_000,
                               "--out", tmp_path / "votes.report.json"], capsys)
        rep = json.loads((tmp_path / "votes.report.json").read_text())
        assert (rep["B"], rep["p"]) == (13, 3)
        assert abs(rep["threshold"] - 13.35) <= 0.01

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["fit", tmp_path / "nope.csv", "--family", "gaussian_diagonal", "--K", 2,
                            "--out", tmp_path / "x.json"], capsys)
        assert code == 3 and "nope.csv" in err

    def test_ragged_file(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n3\n")
        code, _, err = run(["fit", tmp_path / "bad.csv", "--family", "gaussian_diagonal", "--K", 1,
                            "--out", tmp_path / "x.json"], capsys)
        assert code == 3 and "line 3" in err

    def test_generation_only_family(self, gaussian_file, tmp_path, capsys):
        code, _, err = run(["fit", gaussian_file, "--family", "student3_product", "--K", 2,
                            "--out", tmp_path / "x.json"], capsys)
        assert code == 2 and "cannot be fitted" in err

    def test_em_failure_is_numerical(self, gaussian_file, tmp_path, capsys):
        code, _, _ = run(["fit", gaussian_file, "--family", "gaussian_diagonal", "--K", 3, "--n-starts", 1,
                          "--max-iter", 1, "--tol", 1e-15, "--out", tmp_path / "x.json"], capsys)
        assert code == 4


class TestGof:
    @pytest.fixture
    def fitted(self, gaussian_file, tmp_path, capsys):
        run(["fit", gaussian_file, "--family", "gaussian_diagonal", "--K", "1:4", "--n-starts", 5,
             "--seed", 3, "--out", tmp_path / "fit.json"], capsys)
        return tmp_path / "fit.json"

    def test_golden(self, gaussian_file, fitted, tmp_path, capsys):
        out = tmp_path / "rep.json"
        code, stdout, _ = run(["gof", gaussian_file, "--params", fitted, "--mc-draws", 5000, "--seed", 9,
                               "--out", out], capsys)
        assert code == 0 and "reject=false" in stdout
        rep = json.loads(out.read_text())
        assert (rep["B"], rep["p"]) == (14, 4)
        assert rep["max_statistic"] == pytest.approx(9.598847285003366, rel=1e-9)
        assert rep["threshold"] == pytest.approx(15.568035676495674, rel=1e-12)
        assert "timing" not in rep

    def test_replay_bit_identical(self, gaussian_file, fitted, tmp_path, capsys):
        out = tmp_path / "rep.json"
        run(["gof", gaussian_file, "--params", fitted, "--mc-draws", 5000, "--timing", "--out", out], capsys)
        first = json.loads(out.read_text())
        run(["gof", gaussian_file, "--params", fitted, "--mc-draws", 5000, "--out", out], capsys)
        plain = out.read_bytes()
        assert run(["replay", tmp_path / "rep.manifest.json"], capsys)[0] == 0
        assert out.read_bytes() == plain
        first.pop("timing")
        assert first == json.loads(plain)

    def test_posterior_file_path(self, gaussian_file, fitted, tmp_path, capsys):
        spec, params = load_params(fitted)
        ref = gof.simulate_posteriors(spec, params, 5000, make_rng(1))
        gof.write_posteriors(tmp_path / "ref.csv", ref)
        a = tmp_path / "a.json"
        code, _, _ = run(["gof", gaussian_file, "--posteriors", tmp_path / "fit.posteriors.csv",
                          "--reference-posteriors", tmp_path / "ref.csv", "--out", a], capsys)
        assert code == 0
        b = tmp_path / "b.json"
        run(["gof", gaussian_file, "--params", fitted, "--posteriors", tmp_path / "fit.posteriors.csv",
             "--reference-posteriors", tmp_path / "ref.csv", "--out", b], capsys)
        assert json.loads(a.read_text())["statistics"] == json.loads(b.read_text())["statistics"]

    def test_bad_posteriors(self, gaussian_file, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("c1,c2\n" + "0.5,0.5\n" * 3 + "0.9,0.9\n" + "0.5,0.5\n" * 596)
        code, _, err = run(["gof", gaussian_file, "--posteriors", bad, "--reference-posteriors", bad,
                            "--out", tmp_path / "r.json"], capsys)
        assert code == 3 and "rows off the simplex: 4" in err

    def test_usage_errors(self, gaussian_file, fitted, tmp_path, capsys):
        assert run(["gof", gaussian_file, "--params", fitted, "--alpha", 0.7, "--out", tmp_path / "r.json"],
                   capsys)[0] == 2
        assert run(["gof", gaussian_file, "--out", tmp_path / "r.json"], capsys)[0] == 2
        assert run(["gof", gaussian_file, "--params", fitted, "--mc-draws", 10, "--out", tmp_path / "r.json"],
                   capsys)[0] == 2

    def test_cytometry_shape(self, tmp_path, capsys):
        spec = MixtureSpec("gaussian_diagonal", 2, 4)
        params = MixtureParams([0.4, 0.6], {"means": [[0, 0, 0, 0], [2, 1, 2, 1]],
                                            "variances": np.ones((2, 4))}).validate(spec)
        X = sample(spec, params, 15892, make_rng(0)).X
        datasets.write_data(tmp_path / "cyto.csv", list(datasets.GVHD_COLUMNS), X)
        save_params(tmp_path / "cyto.json", spec, params)
        code, stdout, _ = run(["gof", tmp_path / "cyto.csv", "--params", tmp_path / "cyto.json",
                               "--mc-draws", 10_000, "--out", tmp_path / "cyto.report.json"], capsys)
        assert code == 0 and stdout.startswith("B=28 p=5")
        assert abs(json.loads((tmp_path / "cyto.report.json").read_text())["threshold"] - 19.12) <= 0.01


class TestSimulate:
    def test_list(self, capsys):
        code, out, _ = run(["simulate", "--list"], capsys)
        assert code == 0 and len(out.splitlines()) == 32

    def test_unknown(self, capsys, tmp_path):
        code, _, err = run(["simulate", "table9/x", "--out", tmp_path / "s.csv"], capsys)
        assert code == 2 and "table2/gaussian/0.80" in err

    def test_workers_identical(self, tmp_path, capsys):
        base = ["simulate", "table2/gaussian/0.90", "--n", 300, "-N", 4, "--mc-draws", 2000,
                "--n-starts", 3, "--seed", 5]
        run(base + ["--workers", 1, "--out", tmp_path / "a.csv"], capsys)
        run(base + ["--workers", 2, "--out", tmp_path / "b.csv"], capsys)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.replicates.csv").read_bytes() == (tmp_path / "b.replicates.csv").read_bytes()

    def test_one_replicate(self, tmp_path, capsys):
        code, out, _ = run(["simulate", "table2/poisson/0.90", "--n", 200, "-N", 1, "--mc-draws", 2000,
                            "--n-starts", 2, "--out", tmp_path / "s.csv"], capsys)
        assert code == 0
        prop = float(out.split("proportion=")[1].split()[0])
        assert prop in (0.0, 1.0)


class TestQQ:
    def test_table(self, gaussian_file, tmp_path, capsys):
        run(["fit", gaussian_file, "--family", "gaussian_diagonal", "--K", 3, "--n-starts", 3,
             "--out", tmp_path / "f.json"], capsys)
        out = tmp_path / "qq.csv"
        code, _, _ = run(["qq", gaussian_file, "--params", tmp_path / "f.json", "--component", 1,
                          "--mc-draws", 20_000, "--out", out], capsys)
        assert code == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "empirical,theoretical" and len(rows) == 601
        table = np.loadtxt(out, delimiter=",", skiprows=1)
        assert np.all(np.diff(table[:, 0]) >= 0)
        assert np.max(np.abs(table[:, 0] - table[:, 1])) < 0.25

    def test_component_range(self, gaussian_file, tmp_path, capsys):
        run(["fit", gaussian_file, "--family", "gaussian_diagonal", "--K", 2, "--n-starts", 2,
             "--out", tmp_path / "f.json"], capsys)
        code, _, _ = run(["qq", gaussian_file, "--params", tmp_path / "f.json", "--component", 3,
                          "--out", tmp_path / "q.csv"], capsys)
        assert code == 2


class TestConvert:
    def test_voting(self, tmp_path, capsys):
        src = tmp_path / "house-votes-84.data"
        src.write_text("republican,n,y,n,y,y,y,n,n,n,y,?,y,y,y,n,y\n"
                       "democrat,?,y,y,?,y,y,n,n,n,n,y,n,y,y,n,n\n")
        code, _, _ = run(["convert", "voting", src, "--out", tmp_path / "votes.csv"], capsys)
        assert code == 0
        header, X = datasets.read_data(tmp_path / "votes.csv")
        assert header[0] == "v1" and X.shape == (2, 16)
        assert X[0, :3].tolist() == [1, 0, 1] and X[1, 0] == 2
        assert datasets.read_categories(tmp_path / "votes.categories") == (3,) * 16
        assert (tmp_path / "votes.labels").read_text().split() == ["republican", "democrat"]

    def test_voting_bad_line(self, tmp_path, capsys):
        src = tmp_path / "v.data"
        src.write_text("republican,n,y\n")
        assert run(["convert", "voting", src, "--out", tmp_path / "v.csv"], capsys)[0] == 3

    def test_gvhd(self, tmp_path, capsys):
        a, b = tmp_path / "pos.csv", tmp_path / "con.csv"
        a.write_text('"FSC","CD4","CD8b","CD3","CD8"\n1,2,3,4,5\n6,7,8,9,10\n')
        b.write_text("CD4,CD8b,CD3,CD8\n11,12,13,14\n")
        code, _, _ = run(["convert", "gvhd", a, b, "--out", tmp_path / "gvhd.csv"], capsys)
        assert code == 0
        header, X = datasets.read_data(tmp_path / "gvhd.csv")
        assert header == ["CD4", "CD8b", "CD3", "CD8"]
        assert X.tolist() == [[2, 3, 4, 5], [7, 8, 9, 10], [11, 12, 13, 14]]


def test_data_round_trip(tmp_path):
    X = np.random.default_rng(0).normal(size=(30, 3)) * 1e5
    datasets.write_data(tmp_path / "d.csv", ["a", "b", "c"], X)
    header, Y = datasets.read_data(tmp_path / "d.csv")
    assert header == ["a", "b", "c"] and np.array_equal(X, Y)


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "clustergof.cli", "quantile", "--p", "3", "--B", "13"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "q=13.3499" in out.stdout
