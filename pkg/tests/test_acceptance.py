"""Acceptance checks for the package as a whole. Each test reports one
PASS/FAIL/SKIP line in the terminal summary."""

import os

import numpy as np
import pytest

from fpld import simstudy
from fpld.cli import main
from fpld.core import (
    FpldNatural,
    FpldStar,
    GpdParams,
    SupportInterval,
    cdf,
    density,
    fpld_from_gpd_pair,
    from_star,
    from_unconstrained,
    gpd_quantile,
    params_to_json,
    quantile,
    reflected_gpd_quantile,
    sample,
    support,
    to_star,
    to_unconstrained,
)
from fpld.pipeline import clean, ingest, run_marginal, run_regression, summarize
from fpld.quantreg import fit_bundle, fit_quantile_regression, standardize
from fpld.scoring import crps_fpld, crps_fpld_quadrature, pit_errors
from helpers import criterion, daily_dates, synthetic_station, write_station_files

UNIFORM = FpldNatural(0.0, 2.0, 0.0, 1.0, 1.0)


def truths(count, seed):
    rng = np.random.default_rng(seed)
    return [simstudy.sample_lambda_star(rng) for _ in range(count)]


def test_crps_closed_form_against_quadrature():
    with criterion(1, "closed-form CRPS matches quadrature within 1e-6 on 200 cases"):
        rng = np.random.default_rng(101)
        stars = truths(200, seed=101)
        # 40 cases with a tail index within 1e-8 of zero, on either side
        for i in range(40):
            s = stars[i]
            tiny = float(rng.uniform(-1e-8, 1e-8))
            stars[i] = FpldStar(s.lambda1_star, s.lambda2_star, s.lambda3,
                                tiny if i % 2 == 0 else s.lambda4,
                                tiny if i % 2 == 1 else s.lambda5)
        near_zero = sum(min(abs(s.lambda4), abs(s.lambda5)) <= 1e-8 for s in stars)
        assert near_zero >= 20
        worst = 0.0
        for i, s in enumerate(stars):
            lam = from_star(s)
            y = float(sample(lam, 1, seed=[101, i])[0])
            worst = max(worst, abs(crps_fpld(lam, y) - crps_fpld_quadrature(lam, y)))
        assert worst <= 1e-6, worst


def test_cdf_inverts_quantile():
    with criterion(2, "cdf(quantile(p)) = p within 1e-9, 100 sets x 50 p"):
        rng = np.random.default_rng(102)
        worst = 0.0
        for s in truths(100, seed=102):
            lam = from_star(s)
            p = rng.uniform(0.0, 1.0, 50)
            worst = max(worst, np.max(np.abs(cdf(lam, quantile(lam, p)) - p)))
        assert worst <= 1e-9, worst


def test_gpd_pair_identity():
    with criterion(3, "FPLD from a GPD pair matches the GPD expression within 1e-10"):
        rng = np.random.default_rng(103)
        p = np.arange(1, 100) / 100
        worst = 0.0
        for i in range(100):
            # every tenth pair has exponential tails
            xi = (0.0, 0.0) if i % 10 == 0 else rng.uniform(-0.4, 0.8, 2)
            hi = GpdParams(rng.normal(0, 3), rng.uniform(0.1, 5), xi[0])
            lo = GpdParams(rng.normal(0, 3), rng.uniform(0.1, 5), xi[1])
            a = rng.uniform(0.2, 4)
            direct = gpd_quantile(hi, p) + reflected_gpd_quantile(lo, p ** a)
            worst = max(worst, np.max(np.abs(quantile(fpld_from_gpd_pair(hi, lo, a), p) - direct)))
        assert worst <= 1e-10, worst


def test_reparametrisation_roundtrips():
    with criterion(4, "star and unconstrained roundtrips within 1e-10 on 1000 sets"):
        rng = np.random.default_rng(104)
        scale = np.exp(rng.uniform(np.log(1e-4), np.log(500), 1000))
        scale[:100], scale[100:200] = 1e-4, 500.0
        worst = 0.0
        for l2 in scale:
            star = FpldStar(rng.normal(0, 10), l2, rng.uniform(-0.99, 0.99),
                            rng.uniform(1e-3, 3), rng.uniform(-0.49, 3))
            ref = star.as_array()
            worst = max(worst,
                        np.max(np.abs(to_star(from_star(star)).as_array() - ref)),
                        np.max(np.abs(from_unconstrained(to_unconstrained(star)).as_array() - ref)))
            lam = from_star(star)
            worst = max(worst, np.max(np.abs(from_star(to_star(lam)).as_array() - lam.as_array())))
        assert worst <= 1e-10, worst


@pytest.fixture(scope="module")
def desk_study():
    cfg = simstudy.SimConfig(replicates=50, sample_size_exponents=tuple(range(7, 13)), seed=0)
    cells = simstudy.summarize(simstudy.run_simulation(cfg))
    return {(c.estimator, c.n): c for c in cells}, cfg.sizes


def inversions(values):
    return sum(b >= a for a, b in zip(values, values[1:]))


@pytest.mark.slow
def test_simulation_study_shape(desk_study):
    cells, sizes = desk_study
    with criterion(5, "simulation study: skill falls with n, MQ fastest, ML lowest MSE"):
        for est in simstudy.ESTIMATORS:
            assert inversions([cells[est, n].skill for n in sizes]) <= 1, est
        mq, ml = cells["mq", 4096].skill, cells["ml", 4096].skill
        assert ml / 3 <= mq <= 3 * ml
        for n in sizes:
            if n >= 1024:
                assert cells["mq", n].elapsed < cells["ml", n].elapsed
                assert cells["mq", n].elapsed < cells["starship", n].elapsed
            assert cells["ml", n].mse < cells["mq", n].mse


def test_uniform_special_case():
    with criterion(6, "uniform special case: density, CRPS and support"):
        y = np.array([-0.999, -0.5, 0.0, 0.3, 0.999])
        np.testing.assert_allclose(density(UNIFORM, y), 0.5, rtol=0, atol=1e-12)
        assert abs(crps_fpld(UNIFORM, 0.0) - 1 / 6) <= 1e-8
        assert support(UNIFORM) == SupportInterval(-1.0, 1.0)


def test_true_model_pit_is_calibrated():
    with criterion(7, "PIT of the true model, 20 truths x 1e4 draws, |e| <= 0.01"):
        for i, s in enumerate(truths(20, seed=107)):
            lam = from_star(s)
            e = pit_errors(cdf(lam, sample(lam, 10_000, seed=[107, i])))
            assert abs(e.e_mu) <= 0.01 and abs(e.e_sigma) <= 0.01, (i, e)


def test_quantile_regression_recovery():
    with criterion(8, "quantile regression: median coefficients and sign bounds for 99 fits"):
        rng = np.random.default_rng(108)
        n = 5000
        x = rng.uniform(-1, 1, size=(n, 2))
        y = 2 + 3 * x[:, 0] - x[:, 1] + (1 + 0.5 * (x[:, 0] + 1)) * rng.standard_normal(n)
        design, record = standardize(x, y)
        beta = fit_quantile_regression(design, 0.5).beta
        slopes = beta[1:] / record.sds
        intercept = beta[0] - slopes @ record.means
        np.testing.assert_allclose([intercept, *slopes], [2.0, 3.0, -1.0], rtol=0, atol=0.1)
        for fit in fit_bundle(design).fits:
            r = y - design.X @ fit.beta
            below = np.count_nonzero(r < -1e-9)
            zero = np.count_nonzero(np.abs(r) <= 1e-9)
            # with an intercept, optimality implies n_below <= p n <= n_below + n_zero
            assert below <= fit.p * n + 1e-9 and fit.p * n <= below + zero + 1e-9, fit.p


@pytest.fixture(scope="module")
def shared_stations():
    stations = [synthetic_station(f"S{i:02d}", daily_dates("1980-01-01", 8000), seed=100 + i)
                for i in range(24)]
    return clean(stations).datasets


@pytest.mark.slow
def test_loocv_regression_matches_marginal(shared_stations):
    with criterion(9, "LOOCV regression CRPS within 5% of marginal MQ, PIT |e| <= 0.02"):
        marginal = run_marginal(shared_stations, distributions=("fpld",), seasons=["winter"])
        loocv = run_regression(shared_stations, mode="loocv", seasons=["winter"])
        (m,) = summarize(marginal)
        (r,) = summarize(loocv)
        assert r.n_failed == 0 and r.n_stations == 24
        assert abs(r.mean_crps - m.mean_crps) <= 0.05 * m.mean_crps
        for row in loocv.rows:
            assert abs(row.e_mu) <= 0.02 and abs(row.e_sigma) <= 0.02, row


@pytest.mark.slow
def test_station_data_reproduction():
    obs, meta = os.environ.get("FPLD_DTR_OBSERVATIONS"), os.environ.get("FPLD_DTR_STATIONS")
    with criterion(10, "station data: winter CRPS, PIT errors and model ordering"):
        if not (obs and meta and os.path.exists(obs) and os.path.exists(meta)):
            pytest.skip("set FPLD_DTR_OBSERVATIONS and FPLD_DTR_STATIONS to the DTR dataset")
        report = run_marginal(clean(ingest(obs, meta).stations).datasets)
        rows = {(s.season, s.model): s for s in summarize(report)}
        assert abs(rows["winter", "FPLD(MQ)"].mean_crps - 1.577) <= 0.01
        for season in {s for s, _ in rows}:
            fpld = rows[season, "FPLD(MQ)"]
            assert abs(fpld.e_mu) <= 5e-3 and abs(fpld.e_sigma) <= 5e-3, season
            assert fpld.mean_crps <= rows[season, "gamma"].mean_crps <= rows[season, "lognormal"].mean_crps


def run_twice(tmp_path, name, argv):
    outputs = []
    for k in (0, 1):
        out = tmp_path / f"{name}{k}"
        assert main(argv + ["--out", str(out)]) == 0, argv
        outputs.append({f: (out / f).read_bytes() for f in sorted(os.listdir(out))})
    assert outputs[0] and outputs[0] == outputs[1], name


def test_cli_reruns_are_byte_identical(tmp_path):
    with criterion(11, "every CLI subcommand reruns byte-identically"):
        stations = [synthetic_station(f"S{i}", daily_dates("2000-01-01", 731), seed=60 + i)
                    for i in range(3)]
        obs, meta = str(tmp_path / "obs.csv"), str(tmp_path / "stations.csv")
        write_station_files(stations, obs, meta)
        y_file = tmp_path / "y.csv"
        y = sample(FpldNatural(6.0, 3.0, 0.1, 0.4, 0.3), 200, seed=4)
        y_file.write_text("\n".join(repr(float(v)) for v in y) + "\n")
        params = tmp_path / "params.json"
        params.write_text(params_to_json(UNIFORM))
        station_args = ["--input", obs, "--stations", meta, "--seasons", "winter,summer"]
        run_twice(tmp_path, "fit_sample", ["fit", "--input", str(y_file),
                                           "--estimator", "mq,ml,starship"])
        run_twice(tmp_path, "fit_stations", ["fit", *station_args, "--compare-to", "FPLD(MQ)",
                                             "--n-perm", "200", "--seed", "7"])
        run_twice(tmp_path, "regress_loocv", ["regress", *station_args, "--mode", "loocv"])
        run_twice(tmp_path, "regress_in_sample", ["regress", *station_args, "--mode", "in-sample",
                                                  "--format", "json"])
        run_twice(tmp_path, "simulate", ["simulate", "--replicates", "2", "--min-exponent", "7",
                                         "--max-exponent", "8", "--mc-samples", "1000",
                                         "--seed", "11"])
        run_twice(tmp_path, "crps", ["crps", "--params", str(params), "--y=-0.5,0,0.25,2"])
        run_twice(tmp_path, "check", ["check", "--cases", "5", "--seed", "3"])
