import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_quantile
from rmtnet.data import (
    CSVParseError,
    Dataset,
    DiscretizationMap,
    ProtocolError,
    RawTable,
    SchemaError,
    apply_discretizer,
    assign_splits,
    compose_multi_policy,
    fit_discretizer,
    fit_logistic,
    generate_synthetic_rejection,
    group_summary,
    load_csv,
    make_credit_table,
    read_dataset,
    split_equal,
    write_dataset,
)


def _write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCSV:
    def test_missing_value_row_dropped(self, tmp_path):
        p = _write(tmp_path, "a,b,y\n1,2,0\n3,,1\n5,6,1\n")
        t = load_csv(p)
        assert t.n == 2 and t.dropped == 1
        np.testing.assert_array_equal(t.y_raw, [0, 1])

    def test_header_only(self, tmp_path):
        t = load_csv(_write(tmp_path, "a,b,c\n"))
        assert t.n == 0 and t.d == 3

    def test_six_by_four(self, tmp_path):
        rows = "\n".join(f"{i},{i * 0.5},{-i},{i % 3}" for i in range(6))
        t = load_csv(_write(tmp_path, "f1,f2,f3,f4\n" + rows + "\n"))
        assert (t.n, t.d) == (6, 4)
        assert t.column_names == ("f1", "f2", "f3", "f4")

    def test_roles(self, tmp_path):
        p = _write(tmp_path, "id,x,r,y,policy\n7,0.5,1,,2\n8,1.5,0,1,1\n")
        # blank y on the rejected row counts as missing unless y is ignored
        t = load_csv(p, {"id": "ignore", "y": "ignore"})
        assert t.column_names == ("x",)
        np.testing.assert_array_equal(t.r, [1, 0])
        np.testing.assert_array_equal(t.policy_id, [2, 1])
        assert t.y_raw is None

    def test_malformed_row_reports_line(self, tmp_path):
        p = _write(tmp_path, "a,b\n1,2\n3,4\n5\n")
        with pytest.raises(CSVParseError) as info:
            load_csv(p)
        assert info.value.line == 4

    def test_non_numeric(self, tmp_path):
        with pytest.raises(CSVParseError) as info:
            load_csv(_write(tmp_path, "a,b\n1,x\n"))
        assert info.value.line == 2

    def test_unknown_role(self, tmp_path):
        with pytest.raises(SchemaError):
            load_csv(_write(tmp_path, "a,b\n1,2\n"), {"a": "target"})

    def test_non_binary_label(self, tmp_path):
        with pytest.raises(SchemaError):
            load_csv(_write(tmp_path, "a,y\n1,2\n"))


class TestDiscretizer:
    def test_one_to_hundred(self):
        vals = np.arange(1, 101, dtype=float)
        dmap = fit_discretizer(vals[:, None], bins=4)
        expect = [brute_quantile(vals, q) for q in (0.25, 0.5, 0.75)]
        assert expect == [25.75, 50.5, 75.25]
        np.testing.assert_allclose(dmap.edges[0], expect, rtol=0, atol=1e-12)

    def test_constant_column(self):
        dmap = fit_discretizer(np.full((10, 1), 3.0), bins=4)
        assert len(dmap.edges[0]) == 0
        np.testing.assert_array_equal(apply_discretizer(np.array([[3.0], [-1.0], [9.0]]), dmap), 0)

    def test_two_points(self):
        dmap = fit_discretizer(np.array([[1.0], [2.0]]), bins=2)
        np.testing.assert_allclose(dmap.edges[0], [1.5])
        np.testing.assert_array_equal(apply_discretizer(np.array([[1.0], [2.0]]), dmap).ravel(), [0, 1])

    def test_counting_and_clamp(self):
        dmap = DiscretizationMap((np.array([25.75, 50.5, 75.25]),), 4)
        out = apply_discretizer(np.array([[60.0], [-1e9], [1e9], [50.5], [25.75]]), dmap).ravel()
        np.testing.assert_array_equal(out, [2, 0, 3, 1, 0])

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_discretizer(np.zeros((5, 1)), bins=1)
        with pytest.raises(ValueError):
            fit_discretizer(np.zeros((3, 1)), bins=4)
        dmap = fit_discretizer(np.random.default_rng(0).normal(size=(20, 2)), 4)
        with pytest.raises(ValueError):
            apply_discretizer(np.zeros((3, 3)), dmap)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.integers(20, 80))
    def test_edges_strict_and_bins_in_range(self, seed, bins, n):
        rng = np.random.default_rng(seed)
        # rounded values force ties
        x = np.round(rng.normal(size=(n, 3)), 1)
        dmap = fit_discretizer(x, bins)
        for e in dmap.edges:
            assert np.all(np.diff(e) > 0)
        b = apply_discretizer(x, dmap)
        assert np.all(b >= 0) and np.all(b < np.array(dmap.n_bins)) and np.all(b < bins)
        # refitting on the same data gives the same bins
        np.testing.assert_array_equal(apply_discretizer(x, fit_discretizer(x, bins)), b)

    def test_json_round_trip(self):
        dmap = fit_discretizer(np.random.default_rng(1).normal(size=(30, 2)), 5)
        back = DiscretizationMap.from_json(dmap.to_json())
        for a, b in zip(dmap.edges, back.edges):
            np.testing.assert_array_equal(a, b)


def _table(n=300, d=6, seed=0):
    return make_credit_table(n, d, seed=seed, base_rate=0.3, signal=2.0)


class TestSyntheticRejection:
    def test_ratio_and_policy(self):
        ds, pol = generate_synthetic_rejection(_table(), 0.5, seed=3)
        assert ds.n == 300 - 100
        assert ds.r.sum() == 150
        assert len(pol.feature_subset) == 3
        assert np.all(ds.y[ds.r == 1] == -1)
        assert ds.has_hidden_labels

    def test_subset_size(self):
        for eps, d, want in [(0.5, 6, 3), (0.3, 10, 3), (0.01, 10, 1), (1.0, 7, 7), (0.34, 3, 2)]:
            _, pol = generate_synthetic_rejection(_table(60, d), eps, 0)
            assert len(pol.feature_subset) == want == math.ceil(eps * d - 1e-9)

    def test_separable_feature_orders_default_rates(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(300, 1))
        t = RawTable(x, ("x0",), y_raw=(x[:, 0] > 0.3).astype(np.int64))
        ds, _ = generate_synthetic_rejection(t, 1.0, 0)
        hidden = ds.eval_labels(np.arange(ds.n))
        assert hidden[ds.r == 1].mean() > hidden[ds.r == 0].mean()

    def test_twelve_row_fixture_by_hand(self):
        # Replay the four steps with an independent logistic fit (scipy).
        from scipy.optimize import minimize

        # seed 13 leaves the four initial rows non-separable, so the fit has a finite optimum
        x = np.random.default_rng(13).normal(size=(12, 4))
        y = np.array([0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0])
        t = RawTable(x, tuple(f"x{i}" for i in range(4)), y_raw=y)
        ds, pol = generate_synthetic_rejection(t, 0.5, seed=5)

        g = np.random.default_rng(5)
        perm = g.permutation(12)
        init, main = perm[:4], perm[4:]
        feats = sorted(int(i) for i in g.choice(4, size=2, replace=False))
        assert list(pol.feature_subset) == feats
        xi = x[init][:, feats]
        mu, sd = xi.mean(0), xi.std(0)
        z = (xi - mu) / sd

        def obj(th):
            s = z @ th[:2] + th[2]
            return np.mean(np.logaddexp(0, s) - y[init] * s) + 0.5e-4 * th[:2] @ th[:2]

        th = minimize(obj, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
        np.testing.assert_allclose(pol.coef, th[:2], atol=1e-4)
        assert pol.intercept == pytest.approx(th[2], abs=1e-4)
        score = ((x[main][:, feats] - mu) / sd) @ th[:2] + th[2]
        want = np.zeros(8, dtype=int)
        want[np.argsort(-score, kind="stable")[:6]] = 1
        np.testing.assert_array_equal(ds.r, want)
        np.testing.assert_array_equal(ds.x, x[main])

    def test_deterministic(self):
        a, _ = generate_synthetic_rejection(_table(), 0.5, 9)
        b, _ = generate_synthetic_rejection(_table(), 0.5, 9)
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(a.x, b.x)

    def test_errors(self):
        with pytest.raises(ValueError):
            generate_synthetic_rejection(_table(), 0.0, 0)
        with pytest.raises(ValueError):
            generate_synthetic_rejection(_table(), 1.5, 0)
        with pytest.raises(ProtocolError):
            generate_synthetic_rejection(RawTable(np.zeros((9, 2)), ("a", "b")), 0.5, 0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(30, 400), st.sampled_from([0.1, 0.25, 0.5, 0.8, 1.0]), st.integers(0, 1000))
    def test_ratio_property(self, n, eps, seed):
        ds, _ = generate_synthetic_rejection(_table(n, 5, seed % 7), eps, seed)
        assert abs(ds.r.sum() - 0.75 * ds.n) <= 0.5 + 1e-9


class TestLogistic:
    def test_matches_sklearn(self):
        from sklearn.linear_model import LogisticRegression

        t = _table(400, 4)
        coef, b = fit_logistic(t.rows, t.y_raw, l2=1e-2, tol=1e-9, max_iter=100000)
        ref = LogisticRegression(C=1.0 / (1e-2 * 400), tol=1e-12, max_iter=10000).fit(t.rows, t.y_raw)
        np.testing.assert_allclose(coef, ref.coef_[0], atol=1e-4)
        assert b == pytest.approx(ref.intercept_[0], abs=1e-4)


def _labelled(n_app, n_rej, seed=0):
    rng = np.random.default_rng(seed)
    n = n_app + n_rej
    r = np.r_[np.zeros(n_app, int), np.ones(n_rej, int)]
    y = np.where(r == 0, rng.integers(0, 2, n), -1)
    return Dataset(x=rng.normal(size=(n, 2)), r=r, y=y, policy_id=np.ones(n, int))


class TestSplits:
    def test_approval_rejection(self):
        ds = assign_splits(_labelled(100, 300), seed=0)
        test = ds.split_mask("test")
        assert (test & (ds.r == 0)).sum() == 20
        assert (test & (ds.r == 1)).sum() == 300
        assert ds.split_mask("train").sum() == 60 and ds.split_mask("val").sum() == 20

    def test_approval_only(self):
        ds = assign_splits(_labelled(100, 300), seed=0, mode="approval-only")
        assert ds.split_mask("test").sum() == 20
        assert not np.any(ds.split_mask("test") & (ds.r == 1))

    def test_deterministic(self):
        a = assign_splits(_labelled(50, 10), seed=4)
        b = assign_splits(_labelled(50, 10), seed=4)
        np.testing.assert_array_equal(a.split, b.split)

    def test_too_few_approved(self):
        with pytest.raises(ProtocolError):
            assign_splits(_labelled(4, 10), seed=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(5, 500), st.integers(0, 300), st.integers(0, 1000))
    def test_partition(self, n_app, n_rej, seed):
        ds = assign_splits(_labelled(n_app, n_rej), seed=seed)
        masks = [ds.split_mask(s) for s in ("train", "val", "test")]
        assert np.all(sum(m.astype(int) for m in masks) == 1)
        app = ds.r == 0
        assert abs((masks[0] & app).sum() - 0.6 * n_app) <= 1
        assert abs((masks[1] & app).sum() - 0.2 * n_app) <= 1

    def test_train_view_hides_rejected_labels(self):
        ds = assign_splits(_labelled(100, 50), seed=0)
        from rmtnet.data import fit_discretizer as fd

        ds = ds.discretize(fd(ds.x, 4))
        v = ds.train_view()
        assert len(v) == 60 + 50
        assert np.all(v.y[v.r == 1] == -1)


class TestDatasetContract:
    def test_rejected_rows_cannot_carry_observed_label(self):
        with pytest.raises(ProtocolError):
            Dataset(x=np.zeros((2, 1)), r=np.array([0, 1]), y=np.array([0, 1]), policy_id=np.ones(2, int))

    def test_immutable(self):
        ds = _labelled(10, 5)
        with pytest.raises(ValueError):
            ds.r[0] = 1


class TestMultiPolicy:
    def test_two_halves(self):
        halves = split_equal(_table(600), 2, seed=0)
        ds = compose_multi_policy([(halves[0], 0.5, 1), (halves[1], 0.5, 2)])
        assert ds.n_policies == 2
        assert set(np.unique(ds.policy_id)) == {1, 2}
        assert len(ds.policies) == 2

    def test_three_subsets(self):
        parts = split_equal(_table(600), 3, seed=0)
        ds = compose_multi_policy([(p, 0.5, i) for i, p in enumerate(parts)])
        assert ds.n_policies == 3
        assert set(np.unique(ds.policy_id)) == {1, 2, 3}

    def test_single_subset_matches_single_pipeline(self):
        t = _table(300)
        with pytest.warns(UserWarning):
            multi = compose_multi_policy([(t, 0.5, 7)])
        single, _ = generate_synthetic_rejection(t, 0.5, 7)
        assert multi.n_policies == 1
        np.testing.assert_array_equal(multi.r, single.r)
        np.testing.assert_array_equal(multi.x, single.x)


class TestGroupSummary:
    def test_four_rows(self):
        t = RawTable(
            np.array([[700.0, 1.0], [680.0, 3.0], [650.0, 2.0], [640.0, 6.0]]),
            ("fico", "dti"),
            r=np.array([0, 0, 1, 1]),
        )
        out = group_summary(t, ["fico", "dti"])
        assert out == {"approved": {"fico": 690.0, "dti": 2.0}, "rejected": {"fico": 645.0, "dti": 4.0}}

    def test_single_row_group(self):
        t = RawTable(np.array([[1.0], [2.0], [9.0]]), ("a",), r=np.array([0, 0, 1]))
        assert group_summary(t, ["a"])["rejected"] == {"a": 9.0}

    def test_empty_group_is_absent(self):
        t = RawTable(np.array([[1.0], [2.0]]), ("a",), r=np.array([0, 0]))
        assert group_summary(t, ["a"])["rejected"] == {"a": None}

    def test_errors(self):
        t = RawTable(np.array([[1.0]]), ("a",))
        with pytest.raises(ProtocolError):
            group_summary(t, ["a"])
        with pytest.raises(SchemaError):
            group_summary(RawTable(np.array([[1.0]]), ("a",), r=np.array([0])), ["b"])


class TestRoundTrip:
    def test_write_read(self, tmp_path):
        ds, _ = generate_synthetic_rejection(_table(120), 0.5, 1)
        ds = assign_splits(ds, 0)
        dmap = fit_discretizer(ds.x, 8)
        ds = ds.discretize(dmap)
        write_dataset(ds, tmp_path, dmap)
        back = read_dataset(tmp_path)
        for f in ("x", "r", "y", "policy_id", "split", "bins"):
            np.testing.assert_array_equal(getattr(back, f), getattr(ds, f))
        np.testing.assert_array_equal(back.hidden_labels(), ds.hidden_labels())
        first = (tmp_path / "dataset.csv").read_bytes()
        write_dataset(back, tmp_path, dmap)
        assert (tmp_path / "dataset.csv").read_bytes() == first
