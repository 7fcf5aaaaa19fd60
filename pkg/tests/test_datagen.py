import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad
from scipy.special import ndtri

from oracles import bayes_error
from uwauth import datagen as dg
from uwauth.exceptions import ConfigurationError, DegenerateDataError, DomainError, EmptyInputError


@pytest.fixture(scope="module")
def bank():
    return dg.reference_marginals("default")


def random_model(rng, n=None):
    n = n or int(rng.integers(2, 40))
    return dg.KdeModel(rng.normal(scale=rng.uniform(0.5, 5), size=n), float(rng.uniform(0.05, 2)))


class TestKde:
    def test_zero_variance_rejected(self):
        with pytest.raises(DegenerateDataError):
            dg.fit_kde(np.zeros(50))
        with pytest.raises(DegenerateDataError):
            dg.fit_kde([1.0])

    def test_standard_normal_density(self):
        m = dg.fit_kde(np.random.default_rng(0).standard_normal(10_000))
        assert abs(dg.kde_pdf(m, 0.0) - 1 / np.sqrt(2 * np.pi)) <= 0.05

    def test_silverman_formula(self):
        x = np.random.default_rng(1).normal(size=100)
        x = (x - x.mean()) / x.std(ddof=1)
        assert dg.silverman_bandwidth(x) == pytest.approx(1.06 * 100 ** -0.2, rel=1e-12)
        assert dg.silverman_bandwidth(x) == pytest.approx(0.4217, abs=5e-4)

    def test_cdf_symmetry(self):
        assert dg.kde_cdf(dg.KdeModel(np.array([0.0]), 1.0), 0.0) == 0.5
        assert dg.kde_cdf(dg.KdeModel(np.array([-1.0, 1.0]), 0.3), 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_cdf_matches_pdf_quadrature(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            m = random_model(rng)
            lo = m.support[0]
            for x in rng.uniform(*m.support, size=4):
                val, _ = quad(lambda t: float(dg.kde_pdf(m, t)), lo, x, limit=200, epsabs=1e-12)
                assert abs(val - dg.kde_cdf(m, x)) <= 1e-6

    def test_pdf_integrates_to_one(self):
        m = random_model(np.random.default_rng(3))
        lo, hi = m.support
        val, _ = quad(lambda t: float(dg.kde_pdf(m, t)), lo - 5, hi + 5, limit=400)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_single_kernel_inverse(self):
        m = dg.KdeModel(np.array([0.0]), 0.7)
        assert dg.kde_inverse_cdf(m, stats.norm.cdf(1.0)) == pytest.approx(0.7, abs=1e-8)
        u = np.linspace(0.01, 0.99, 25)
        np.testing.assert_allclose(dg.kde_inverse_cdf(m, u), 0.7 * ndtri(u), atol=1e-8)

    def test_symmetric_midpoint(self):
        m = dg.KdeModel(np.array([1.0, 3.0, 5.0]), 0.4)
        assert dg.kde_inverse_cdf(m, 0.5) == pytest.approx(3.0, abs=1e-8)

    def test_inverse_domain(self):
        m = dg.KdeModel(np.array([0.0]), 1.0)
        for u in (0.0, 1.0, -0.1, 1.5, np.nan):
            with pytest.raises(DomainError):
                dg.kde_inverse_cdf(m, u)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cdf_monotone_and_pdf_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(rng)
        x = np.sort(rng.uniform(m.support[0] - 3, m.support[1] + 3, size=200))
        assert np.all(np.diff(dg.kde_cdf(m, x)) >= 0)
        assert np.all(dg.kde_pdf(m, x) >= 0)

    def test_table_inverse_close_to_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            m = random_model(rng, 500)
            u = rng.uniform(1e-6, 1 - 1e-6, size=500)
            assert np.max(np.abs(dg.kde_cdf(m, m.ppf_table(u)) - u)) <= 1e-7


class TestCopula:
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.9])
    def test_marginals_standard_normal(self, alpha):
        v = dg.sample_copula_matrix(dg.CopulaSpec(alpha, 3, 4), np.random.default_rng(5), size=100_000)
        assert v.shape == (100_000, 3, 4)
        assert np.all(np.abs(v.mean(axis=0)) <= 0.02)
        assert np.all(np.abs(v.std(axis=0) - 1) <= 0.02)

    def test_alpha_one_columns_equal(self):
        v = dg.sample_copula_matrix(dg.CopulaSpec(1.0, 3, 4), np.random.default_rng(6), size=1000)
        assert np.all(v == v[:, :1, :])

    def test_spearman_identity(self):
        v = dg.sample_copula_matrix(dg.CopulaSpec(0.5, 3, 4), np.random.default_rng(7), size=100_000)
        rho = stats.spearmanr(v[:, 0, 0], v[:, 1, 0]).statistic
        assert rho == pytest.approx(6 / np.pi * np.arcsin(0.25), abs=0.03)

    def test_features_independent(self):
        v = dg.sample_copula_matrix(dg.CopulaSpec(0.8, 3, 4), np.random.default_rng(8), size=200_000)
        c = np.corrcoef(v[:, 0, :].T)
        assert np.max(np.abs(c - np.eye(4))) <= 0.01

    def test_invalid_alpha(self):
        with pytest.raises(DomainError):
            dg.CopulaSpec(1.2, 3, 4)


class TestReferenceScenario:
    def test_deterministic(self):
        a, b = dg.reference_marginals("default"), dg.reference_marginals("default")
        for key in a.models:
            assert np.array_equal(a[key].centers, b[key].centers) and a[key].bandwidth == b[key].bandwidth

    def test_unknown_id(self):
        with pytest.raises(ConfigurationError):
            dg.reference_marginals("nope")

    def test_null_scenario_indistinguishable(self):
        bank = dg.reference_marginals("null")
        ds = dg.generate_dataset(bank, dg.CopulaSpec(0.0, 3, 4), 4000, np.random.default_rng(9))
        for n in range(3):
            for k in range(4):
                a = ds.X[ds.y == 1, n, k]
                e = ds.X[ds.y == 0, n, k]
                assert stats.ks_2samp(a, e).pvalue > 0.01 / 12

    def test_single_feature_bayes_errors(self, bank):
        for n in range(3):
            for k in range(4):
                a, e = bank[(n, k, 1)], bank[(n, k, 0)]
                lo = min(a.support[0], e.support[0])
                hi = max(a.support[1], e.support[1])
                be = bayes_error(lambda x: dg.kde_pdf(a, x), lambda x: dg.kde_pdf(e, x), lo, hi, points=4001)
                assert 0.05 <= be <= 0.25, (n, k, be)


class TestDataset:
    def test_layout_and_reproducibility(self, bank):
        spec = dg.CopulaSpec(0.4, 3, 4)
        a = dg.generate_dataset(bank, spec, 500, np.random.default_rng(10))
        b = dg.generate_dataset(bank, spec, 500, np.random.default_rng(10))
        assert a.X.shape == (1000, 3, 4)
        assert list(a.y[:500]) == [1] * 500 and list(a.y[500:]) == [0] * 500
        assert a.X.tobytes() == b.X.tobytes()

    def test_marginals_pass_ks(self, bank):
        # The full 10^4-sample check on every marginal runs in the acceptance suite.
        ds = dg.generate_dataset(bank, dg.CopulaSpec(0.5, 3, 4), 2000, np.random.default_rng(11))
        for (n, k, h), m in list(bank.models.items())[::3]:
            x = ds.X[ds.y == h, n, k]
            assert stats.kstest(x, lambda t: dg.kde_cdf(m, t)).pvalue > 0.01 / 24

    def test_marginals_invariant_to_alpha(self, bank):
        a = dg.generate_dataset(bank, dg.CopulaSpec(0.0, 3, 4), 5000, np.random.default_rng(12))
        b = dg.generate_dataset(bank, dg.CopulaSpec(0.9, 3, 4), 5000, np.random.default_rng(13))
        for n in range(3):
            for k in range(4):
                assert stats.ks_2samp(a.X[a.y == 1, n, k], b.X[b.y == 1, n, k]).pvalue > 0.01 / 12

    def test_alpha_one_comonotone(self, bank):
        ds = dg.generate_dataset(bank, dg.CopulaSpec(1.0, 3, 4), 2000, np.random.default_rng(14))
        alice = ds.X[ds.y == 1]
        for k in range(4):
            assert stats.spearmanr(alice[:, 0, k], alice[:, 2, k]).statistic == pytest.approx(1.0)

    def test_bisect_and_table_agree(self, bank):
        spec = dg.CopulaSpec(0.3, 3, 4)
        a = dg.generate_dataset(bank, spec, 15, np.random.default_rng(15), method="bisect")
        b = dg.generate_dataset(bank, spec, 15, np.random.default_rng(15), method="table")
        assert np.max(np.abs(a.X - b.X)) <= 1e-5

    def test_shape_mismatch(self, bank):
        with pytest.raises(ConfigurationError):
            dg.generate_dataset(bank, dg.CopulaSpec(0.3, 2, 4), 10, np.random.default_rng(0))

    def test_csv_round_trip(self, bank, tmp_path):
        ds = dg.generate_dataset(bank, dg.CopulaSpec(0.3, 3, 4), 20, np.random.default_rng(16))
        ds.to_csv(tmp_path / "d.csv")
        back = dg.FeatureDataset.from_csv(tmp_path / "d.csv")
        assert back.X.tobytes() == ds.X.tobytes() and np.array_equal(back.y, ds.y)
        assert (tmp_path / "d.csv").read_text().splitlines()[0].startswith("s1_f1,s1_f2")


class TestSplit:
    def test_paper_sizes(self):
        ds = dg.FeatureDataset(np.zeros((200_000, 1, 1)), np.repeat([1, 0], 100_000))
        parts = dg.split_dataset(ds, dg.SplitSpec(), np.random.default_rng(0))
        for part, size in zip(parts, (60_000, 15_000, 25_000)):
            for h in (0, 1):
                assert abs(int(np.sum(part.y == h)) - size) <= 1

    def test_all_train(self):
        ds = dg.FeatureDataset(np.arange(10.0).reshape(10, 1, 1), np.repeat([1, 0], 5))
        tr, va, te = dg.split_dataset(ds, dg.SplitSpec(1, 0, 0), np.random.default_rng(0))
        assert len(tr) == 10 and len(va) == 0 and len(te) == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 300), st.integers(0, 1000))
    def test_partition_is_multiset_equal(self, n, seed):
        rng = np.random.default_rng(seed)
        ds = dg.FeatureDataset(rng.normal(size=(n, 1, 2)), rng.integers(0, 2, size=n))
        parts = dg.split_dataset(ds, dg.SplitSpec(), rng)
        joined = np.concatenate([p.X.reshape(-1, 2) for p in parts])
        assert sorted(map(tuple, joined)) == sorted(map(tuple, ds.X.reshape(n, -1)))
        assert sum(int(p.y.sum()) for p in parts) == int(ds.y.sum())

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            dg.split_dataset(dg.FeatureDataset(np.zeros((0, 1, 1)), np.zeros(0)), dg.SplitSpec(), np.random.default_rng(0))

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            dg.SplitSpec(0.5, 0.5, 0.5)


def test_series_csv(tmp_path):
    p = tmp_path / "s.csv"
    rows = ["sensor_id,feature_id,class,value"]
    rng = np.random.default_rng(0)
    for h in ("alice", "eve"):
        for v in rng.normal(size=30):
            rows.append(f"1,1,{h},{float(v)!r}")
    p.write_text("\n".join(rows) + "\n")
    series = dg.read_series_csv(p)
    assert set(series) == {(0, 0, 1), (0, 0, 0)}
    bank = dg.fit_marginal_bank(series)
    assert bank.n_sensors == 1 and bank.n_features == 1
    p.write_text("sensor_id,feature_id,class,value\n1,1,bob,0.5\n")
    with pytest.raises(ConfigurationError, match=":2:"):
        dg.read_series_csv(p)
