import json

import numpy as np
import pytest

import darkfig


def test_exchangeable_inverse():
    k, alpha = 4, 0.3
    r = np.full((k, k), alpha) + (1 - alpha) * np.eye(k)
    np.testing.assert_allclose(darkfig.exchangeable_inverse(k, alpha), np.linalg.inv(r), atol=1e-12)
    with pytest.raises(darkfig.DarkfigError):
        darkfig.exchangeable_inverse(3, -0.5)


def test_hand_example():
    out = darkfig.estimate_rates(np.array([1.0, 0.5, 0.2, 1.0]), np.array([1.0, 0.0, 1.0, 0.0]))
    assert out["N"][0] == 9.0
    assert out["pi_star"][0] == pytest.approx(4 / 9)
    assert out["q_star"][0] == pytest.approx(2 / 9)


def test_unit_propensities_give_logistic_mle():
    rng = np.random.default_rng(3)
    n = 2000
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    a = (rng.uniform(size=n) < 1 / (1 + np.exp(-(-0.5 + 0.8 * x[:, 1])))).astype(float)
    ids = [str(i) for i in range(n)]
    fit = darkfig.fit_arrest(x, a, ids, np.ones(n))
    beta = np.zeros(2)
    for _ in range(50):
        p = 1 / (1 + np.exp(-x @ beta))
        beta += np.linalg.solve((x * (p * (1 - p))[:, None]).T @ x, x.T @ (a - p))
    np.testing.assert_allclose(fit["coef"], beta, atol=1e-8)
    assert fit["names"] == ["intercept", "x1"]
    assert np.all(fit["se"] > 0)
    gee = darkfig.fit_arrest(x, a, ids, np.ones(n), gee=True)
    np.testing.assert_allclose(gee["coef"], fit["coef"], atol=1e-6)


def test_reporting_model_and_auc():
    rng = np.random.default_rng(5)
    n = 600
    z = np.column_stack([np.ones(n), rng.integers(0, 2, n)])
    r = (rng.uniform(size=n) < 1 / (1 + np.exp(-(0.2 + 0.9 * z[:, 1])))).astype(float)
    w = rng.uniform(0.5, 2.0, n)
    stratum = [f"s{i % 3}" for i in range(n)]
    psu = [f"p{i % 30}" for i in range(n)]
    fit = darkfig.fit_reporting_model(z, r, w, stratum, psu)
    assert fit["cov"].shape == (2, 2)
    assert abs(fit["coef"][1] - 0.9) < 4 * fit["se"][1]
    pred = 1 / (1 + np.exp(-z @ fit["coef"]))
    assert 0.5 < darkfig.weighted_auc(pred, r, w) < 1.0


def test_simulate_and_pipeline(tmp_path):
    scenario = json.dumps({"population_size": 3000, "psus_per_stratum": 10, "cluster_probs": [0.6, 0.4]})
    darkfig.simulate(str(tmp_path), scenario, 11)
    files = darkfig.run_pipeline(str(tmp_path / "config.json"))
    assert {"rates.csv", "arrest_adjusted.csv", "arrest_gee.csv", "report.txt"} <= set(files)
    assert (tmp_path / "report" / "rates.csv").read_text() == files["rates.csv"]
    again = darkfig.run_pipeline(str(tmp_path / "config.json"), str(tmp_path / "again"))
    assert again == files
