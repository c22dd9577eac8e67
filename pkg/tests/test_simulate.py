import numpy as np
import pytest

from signreg.simulate import (
    ConfigError,
    ExperimentConfig,
    SchemaError,
    check_seed_injectivity,
    gen_responses,
    read_results,
    rep_seed,
    run_experiment,
    sample_gaussian,
    sparse_beta,
    summarize,
    toeplitz_sigma,
)


def test_toeplitz_entries():
    S = toeplitz_sigma(2, 0.5).sigma
    np.testing.assert_array_equal(np.diag(S), 1.0)
    assert S[0, 1] == pytest.approx(0.70710678118654752, rel=1e-15)
    row = toeplitz_sigma(8, 0.3).sigma[0]
    assert np.all(np.diff(row) < 0)
    with pytest.raises(ConfigError):
        toeplitz_sigma(3, 1.0)


def test_sample_gaussian_identity_and_determinism():
    n = 20_000
    X = sample_gaussian(np.eye(3), n, seed=1)
    emp = X.T @ X / n
    assert np.all(np.abs(emp - np.eye(3)) <= 3 * np.sqrt(2.0 / n))
    np.testing.assert_array_equal(X, sample_gaussian(np.eye(3), n, seed=1))


def test_sample_gaussian_rejects_singular_without_jitter():
    S = np.ones((3, 3))
    with pytest.raises(np.linalg.LinAlgError, match="jitter"):
        sample_gaussian(S, 5, seed=0)
    assert sample_gaussian(S, 5, seed=0, jitter=True).shape == (5, 3)


def test_sparse_beta():
    np.testing.assert_array_equal(sparse_beta(5, 5, 0), np.ones(5))
    np.testing.assert_array_equal(sparse_beta(1, 1, 0), [1.0])
    b = sparse_beta(20, 3, 42)
    assert b.sum() == 3 and set(np.unique(b)) == {0.0, 1.0}
    np.testing.assert_array_equal(b, sparse_beta(20, 3, 42))
    with pytest.raises(ConfigError):
        sparse_beta(3, 4, 0)


def test_logistic_responses_at_zero_signal():
    n = 40_000
    y = gen_responses("logistic", np.zeros((n, 2)), np.zeros(2), seed=3)
    assert set(np.unique(y)) <= {0.0, 1.0}
    assert abs(y.mean() - 0.5) <= 3 * 0.5 / np.sqrt(n)


def test_laplace_noise_moments():
    n = 10**6
    eps = gen_responses("lad", np.zeros((n, 1)), np.zeros(1), seed=4)
    # standard Laplace: mean 0, variance 2, E|e| = 1, Var|e| = 1
    assert abs(eps.mean()) <= 3 * np.sqrt(2.0 / n)
    assert abs(np.abs(eps).mean() - 1.0) <= 3 * np.sqrt(1.0 / n)
    np.testing.assert_array_equal(eps[:10], gen_responses("lad", np.zeros((n, 1)), np.zeros(1), 4)[:10])


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig("lad", [0.5], [3], [4], 40)
    with pytest.raises(ConfigError):
        ExperimentConfig("probit", [0.5], [10], [3], 40)
    with pytest.raises(ConfigError):
        ExperimentConfig("lad", [1.2], [10], [3], 40)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": "lad", "rho_grid": [0.5], "p_grid": [10],
                                    "s_grid": [3], "n": 40, "bogus": 1})


def test_config_load_toml_and_json(tmp_path):
    t = tmp_path / "c.toml"
    t.write_text('model = "lad"\nrho_grid = [0.5]\np_grid = [10]\ns_grid = [3]\nn = 40\nreps = 2\n')
    j = tmp_path / "c.json"
    j.write_text('{"model": "lad", "rho_grid": [0.5], "p_grid": [10], "s_grid": [3], "n": 40, "reps": 2}')
    assert ExperimentConfig.load(t) == ExperimentConfig.load(j)


def test_seed_tree_injective():
    cfg = ExperimentConfig("logistic", [0.1 * k for k in range(1, 10)], [10, 100], [3, 10], 100, reps=50)
    check_seed_injectivity(cfg)
    a = rep_seed(0, 0.5, 10, 3, 0).generate_state(2)
    b = rep_seed(0, 0.5, 10, 3, 1).generate_state(2)
    assert not np.array_equal(a, b)


def test_single_rep_run_is_deterministic(tmp_path):
    cfg = ExperimentConfig("lad", [0.5], [8], [2], 30, reps=1, seed=11)
    r1 = run_experiment(cfg, tmp_path / "a.csv")
    r2 = run_experiment(cfg, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rec = r1.records[0]
    assert rec.status == "ok"
    assert rec.log_ratio == pytest.approx(np.log(rec.l1_err_sign / rec.l1_err_lasso), abs=1e-12)
    assert r1.records[0].data_sha256 == r2.records[0].data_sha256
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 3


def test_resume_skips_finished_cells(tmp_path):
    out = tmp_path / "r.csv"
    cfg1 = ExperimentConfig("lad", [0.5], [6], [2], 24, reps=2, seed=3)
    run_experiment(cfg1, out)
    before = out.read_bytes()
    cfg2 = ExperimentConfig("lad", [0.5, 0.7], [6], [2], 24, reps=2, seed=3)
    res = run_experiment(cfg2, out)
    assert res.resumed_cells == 1
    assert out.read_bytes().startswith(before)
    fresh = tmp_path / "f.csv"
    run_experiment(cfg2, fresh)
    assert fresh.read_bytes() == out.read_bytes()


def test_summary_recomputable_and_excludes_flagged(tmp_path):
    cfg = ExperimentConfig("lad", [0.5], [6], [2], 24, reps=3, seed=5)
    res = run_experiment(cfg, tmp_path / "r.csv")
    recs = read_results(tmp_path / "r.csv")
    recs[0].status = "zero_error"
    s = summarize(recs)[0]
    vals = np.array([r.log_ratio for r in recs[1:]])
    assert s.count == 2 and s.excluded == {"zero_error": 1}
    assert s.mean_log_ratio == vals.mean()
    assert summarize(res.records)[0].count == 3


def test_schema_mismatch(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("# schema=other/9\nmodel\n")
    with pytest.raises(SchemaError):
        read_results(f)


def test_worker_pool_matches_serial(tmp_path):
    cfg = ExperimentConfig("lad", [0.5], [6], [2], 24, reps=3, seed=9)
    run_experiment(cfg, tmp_path / "s.csv", workers=1)
    run_experiment(cfg, tmp_path / "p.csv", workers=2)
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()
