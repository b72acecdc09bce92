import pandas as pd
import pytest

from ces_skill.main import run

SIM_FLAGS = ["--seed", "7", "--countries", "6", "--years", "20", "--industries", "4"]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run(["simulate", *SIM_FLAGS, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def estimated(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("estimate")
    argv = ["estimate", "--panel", str(simulated / "panel.csv"), "--industry", str(simulated / "industry.csv")]
    assert run([*argv, "--out", str(out)]) == 0
    return out


def values(path, column="estimate") -> dict[str, float]:
    frame = pd.read_csv(path, comment="#")
    return dict(zip(frame["parameter"], frame[column]))


def test_simulate_is_reproducible(simulated, tmp_path):
    assert run(["simulate", *SIM_FLAGS, "--out", str(tmp_path)]) == 0
    for name in ("panel.csv", "industry.csv", "truth.csv"):
        assert (tmp_path / name).read_bytes() == (simulated / name).read_bytes()


def test_existing_outputs_need_force(tmp_path):
    assert run(["simulate", *SIM_FLAGS, "--out", str(tmp_path)]) == 0
    assert run(["simulate", *SIM_FLAGS, "--out", str(tmp_path)]) == 2
    assert run(["simulate", *SIM_FLAGS, "--out", str(tmp_path), "--force"]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--no-such-flag"],
        ["frobnicate"],
        [],
        ["simulate", "--countries", "0"],
        ["estimate", "--panel", "does-not-exist.csv"],
        ["decompose", "--panel", "does-not-exist.csv"],
    ],
)
def test_usage_errors_exit_with_two(argv, tmp_path):
    assert run([*argv, "--out", str(tmp_path)] if argv else argv) == 2


def test_decompose_requires_estimates(simulated, tmp_path):
    assert run(["decompose", "--panel", str(simulated / "panel.csv"), "--out", str(tmp_path)]) == 2


def test_validate_simulated_panel(simulated, capsys):
    assert run(["validate", "--panel", str(simulated / "panel.csv"), "--industry", str(simulated / "industry.csv")]) == 0
    assert "\tok\t" in capsys.readouterr().out


def test_estimate_recovers_truth(simulated, estimated):
    truth = values(simulated / "truth.csv", "value")
    got = values(estimated / "estimates.csv")
    for name in ("sigma", "rho", "lambda_1[C01]", "mu_0[C03]", "mu_1[C06]"):
        assert got[name] == pytest.approx(truth[name], abs=1e-6)
    assert "alpha" not in got
    diagnostics = (estimated / "diagnostics.txt").read_text()
    assert "J_df = 0" in diagnostics
    assert "at_bound = False" in diagnostics
    assert "pseudo_inverse = False" in diagnostics


def test_decompose_from_truth_adds_up(simulated, tmp_path):
    argv = [
        "decompose",
        "--panel",
        str(simulated / "panel.csv"),
        "--estimates",
        str(simulated / "truth.csv"),
        "--out",
        str(tmp_path),
    ]
    assert run(argv) == 0
    frame = pd.read_csv(tmp_path / "decomposition.csv", comment="#")
    assert sorted(frame["country"].unique()) == [f"C{k:02d}" for k in range(1, 7)]
    for _, group in frame.groupby("country"):
        assert group["contribution"].sum() == pytest.approx(group["predicted"].iloc[0], abs=1e-10)
        assert (group["predicted"] + group["residual"]).iloc[0] == pytest.approx(group["actual"].iloc[0], abs=1e-12)
    cross = pd.read_csv(tmp_path / "cross_country.csv", comment="#")
    assert set(cross["base"]) == {"C01"}
    assert len(cross) == 5


def test_elasticities_from_truth(simulated, tmp_path):
    argv = ["elasticities", "--panel", str(simulated / "panel.csv"), "--estimates", str(simulated / "truth.csv")]
    assert run([*argv, "--out", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "elasticities.csv", comment="#")
    morishima = frame[frame["elasticity"] == "morishima"].set_index(["row", "column"])["value"]
    assert morishima[("k_i", "l_h")] == pytest.approx(0.852, abs=1e-4)
    assert morishima[("k_i", "l_u")] == pytest.approx(6.336, abs=1e-4)


def test_every_output_starts_with_fingerprint(estimated, simulated, tmp_path):
    headers = {path.read_text().splitlines()[0] for path in estimated.iterdir()}
    assert len(headers) == 1
    assert headers.pop().startswith("# config-fingerprint: ")

    # the output directory does not enter the fingerprint
    assert run(["simulate", *SIM_FLAGS, "--out", str(tmp_path)]) == 0
    first_line = lambda d: (d / "truth.csv").read_text().splitlines()[0]  # noqa: E731
    assert first_line(tmp_path) == first_line(simulated)
