import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrmsim.exceptions import (EmptyArm, InconsistentBaseline,
                                NonMonotoneMissingness, TrialDataError)
from mmrmsim.trial_data import (TrialDataset, Variant, build_design,
                                design_matrix, dropout_indicators,
                                from_long_records, overlap_sets, read_csv,
                                to_long_records, write_csv)


def make_ds(T, J=None, K=1, seed=0):
    rng = np.random.default_rng(seed)
    T = np.asarray(T)
    n = len(T)
    J = J if J is not None else int(T.max()) - 1
    W = np.arange(n) % 2
    return TrialDataset(np.arange(1, n + 1), rng.uniform(-1, 1, (n, K)), W,
                        rng.normal(size=(n, J)), T)


@st.composite
def datasets(draw, max_n=12, max_J=4, max_K=3):
    n = draw(st.integers(2, max_n))
    J = draw(st.integers(1, max_J))
    K = draw(st.integers(1, max_K))
    T = draw(st.lists(st.integers(1, J + 1), min_size=n, max_size=n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    W = np.array([0, 1] + list(rng.integers(0, 2, n - 2)))
    return TrialDataset(np.arange(10, 10 + n), rng.uniform(-1, 1, (n, K)), W,
                        rng.normal(size=(n, J)), np.array(T))


class TestFromLongRecords:
    def test_fully_observed(self):
        recs = [(1, 0, (0.1,), 1, 1.0), (1, 0, (0.1,), 2, 2.0),
                (2, 1, (0.2,), 1, 3.0), (2, 1, (0.2,), 2, 4.0)]
        ds = from_long_records(recs)
        assert ds.J == 2 and ds.K == 1
        assert ds.dropout_time.tolist() == [3, 3]

    def test_dropout_time(self):
        recs = [(1, 0, (0.1,), 1, 0.5), (1, 0, (0.1,), 2, None),
                (2, 1, (0.2,), 1, 3.0), (2, 1, (0.2,), 2, 4.0)]
        ds = from_long_records(recs)
        assert ds.dropout_time.tolist() == [2, 3]
        assert ds.observed.tolist() == [[True, False], [True, True]]

    def test_non_monotone(self):
        recs = [(1, 0, (0.1,), 1, None), (1, 0, (0.1,), 2, 1.0),
                (2, 1, (0.2,), 1, 3.0), (2, 1, (0.2,), 2, 4.0)]
        with pytest.raises(NonMonotoneMissingness):
            from_long_records(recs)

    def test_inconsistent_baseline(self):
        recs = [(1, 0, (0.1,), 1, 1.0), (1, 0, (0.3,), 2, 1.0), (2, 1, (0.2,), 1, 3.0)]
        with pytest.raises(InconsistentBaseline):
            from_long_records(recs)
        recs = [(1, 0, (0.1,), 1, 1.0), (1, 1, (0.1,), 2, 1.0), (2, 1, (0.2,), 1, 3.0)]
        with pytest.raises(InconsistentBaseline):
            from_long_records(recs)

    def test_empty_arm(self):
        with pytest.raises(EmptyArm):
            from_long_records([(1, 1, (0.1,), 1, 1.0), (2, 1, (0.2,), 1, 3.0)])

    def test_absent_rows_are_missing(self):
        recs = [(1, 0, (0.1,), 1, 1.0), (2, 1, (0.2,), 1, 3.0), (2, 1, (0.2,), 2, 4.0)]
        ds = from_long_records(recs)
        assert ds.dropout_time.tolist() == [2, 3]

    def test_duplicate_time(self):
        with pytest.raises(TrialDataError):
            from_long_records([(1, 0, (0.1,), 1, 1.0), (1, 0, (0.1,), 1, 2.0),
                               (2, 1, (0.2,), 1, 3.0)])


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_long_round_trip(ds):
    assert from_long_records(to_long_records(ds), J=ds.J) == ds


@settings(max_examples=30, deadline=None)
@given(datasets())
def test_csv_round_trip(ds):
    buf = io.StringIO()
    write_csv(ds, buf)
    assert read_csv(buf.getvalue()) == ds


def test_csv_rows_need_not_be_sorted():
    text = ("subject_id,treatment,x1,time,y\n"
            "2,1,0.5,2,\n1,0,0.25,2,3.5\n2,1,0.5,1,1.0\n1,0,0.25,1,2.0\n")
    ds = read_csv(text)
    assert ds.ids.tolist() == [1, 2]
    assert ds.dropout_time.tolist() == [3, 2]
    assert ds.outcomes[0].tolist() == [2.0, 3.5]


def test_csv_bad_header():
    with pytest.raises(TrialDataError, match="header"):
        read_csv("id,w,x,t,y\n1,0,0.1,1,2\n")


def test_dataset_is_immutable():
    ds = make_ds([3, 3, 2, 1])
    with pytest.raises(ValueError):
        ds.outcomes[0, 0] = 5.0
    assert ds.outcomes[3].tolist() == [0.0, 0.0]  # zero padded, masked out


def test_from_arrays_nan_mask():
    Y = np.array([[1.0, np.nan], [2.0, 3.0]])
    ds = TrialDataset.from_arrays([[0.1], [0.2]], [0, 1], Y)
    assert ds.dropout_time.tolist() == [2, 3]
    with pytest.raises(NonMonotoneMissingness):
        TrialDataset.from_arrays([[0.1], [0.2]], [0, 1], [[np.nan, 1.0], [2.0, 3.0]])


class TestDropoutIndicators:
    def test_examples(self):
        ind = dropout_indicators(make_ds([4, 2, 1], J=3))
        assert ind.d.tolist() == [[0, 0, 1], [1, 0, 0], [0, 0, 0]]
        assert ind.no_outcomes.tolist() == [False, False, True]

    @settings(max_examples=50, deadline=None)
    @given(datasets())
    def test_row_sums(self, ds):
        ind = dropout_indicators(ds)
        assert np.array_equal(ind.d.sum(axis=1), (~ind.no_outcomes).astype(int))


class TestOverlapSets:
    def test_no_dropout(self):
        ov = overlap_sets(make_ds([3] * 10, J=2))
        assert all(len(idx) == 10 for idx in ov.members.values())
        assert ov.empty_pairs == []

    def test_one_dropout(self):
        ov = overlap_sets(make_ds([3, 3, 3, 3, 2], J=2))
        assert len(ov[(1, 2)]) == 4
        assert len(ov[(1, 1)]) == 5

    def test_empty_flagged(self):
        ov = overlap_sets(make_ds([2, 2, 2], J=2))
        assert len(ov[(2, 2)]) == 0
        assert (2, 2) in ov.empty_pairs

    @settings(max_examples=40, deadline=None)
    @given(datasets())
    def test_symmetric(self, ds):
        ov = overlap_sets(ds)
        for (j, k), idx in ov.members.items():
            assert np.array_equal(idx, ov[(k, j)])
            assert set(idx) == {i for i in range(ds.n) if max(j, k) < ds.dropout_time[i]}


class TestDesignMatrix:
    ds = TrialDataset([1, 2], [[0.3], [0.0]], [1, 0], [[0.0, 0.0], [0.0, 0.0]], [3, 3])

    def test_mmrm_rows(self):
        Z = design_matrix(self.ds, Variant.MMRM, centering=False)
        assert Z.shape == (2, 2, 5)
        np.testing.assert_array_equal(Z[0], [[1, 0, 0.3, 1, 0], [0, 1, 0.3, 0, 1]])

    def test_interaction_rows(self):
        Z = design_matrix(self.ds, "mmrmx", centering=False)
        assert Z.shape == (2, 2, 6)
        np.testing.assert_array_equal(Z[0], [[1, 0, 0.3, 0, 1, 0], [0, 1, 0, 0.3, 0, 1]])

    def test_ancova_row(self):
        Z = design_matrix(self.ds, Variant.ANCOVA, centering=False)
        np.testing.assert_array_equal(Z[1], [[1, 0.0, 0]])
        ds = TrialDataset([1, 2], [[0.3], [0.1]], [0, 1], [[1.0], [2.0]], [2, 2])
        np.testing.assert_array_equal(design_matrix(ds, "ancova", centering=False)[0], [[1, 0.3, 0]])

    @pytest.mark.parametrize("variant,cols", [("ancova", lambda J, K: 2 + K),
                                              ("mmrm", lambda J, K: 2 * J + K),
                                              ("mmrmx", lambda J, K: J * (2 + K))])
    @pytest.mark.parametrize("J,K", [(1, 1), (3, 2), (4, 3)])
    def test_column_counts(self, variant, cols, J, K):
        ds = make_ds([J + 1] * 6, J=J, K=K)
        assert design_matrix(ds, variant).shape[-1] == cols(J, K)

    def test_centering_uses_grand_mean(self):
        ds = make_ds([4, 4, 4, 1], J=3, K=2)
        Z = design_matrix(ds, "mmrm", centering=True)
        np.testing.assert_allclose(Z[:3, 0, 3:5].mean(axis=0), 0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(datasets(), st.sampled_from(list(Variant)), st.integers(0, 2**31))
def test_design_reproduces_model_mean(ds, variant, seed):
    rng = np.random.default_rng(seed)
    J, K = ds.J, ds.K
    alpha, tau = rng.normal(size=J), rng.normal(size=J)
    beta = rng.normal(size=(J, K))
    X, W = ds.covariates, ds.treatment
    if variant is Variant.ANCOVA:
        theta = np.r_[alpha[-1], beta[-1], tau[-1]]
        expect = (alpha[-1] + X @ beta[-1] + W * tau[-1])[:, None]
    elif variant is Variant.MMRM:
        theta = np.r_[alpha, beta[0], tau]
        expect = alpha + (X @ beta[0])[:, None] + W[:, None] * tau
    else:
        theta = np.r_[alpha, beta.ravel(), tau]
        expect = alpha + X @ beta.T + W[:, None] * tau
    Z = design_matrix(ds, variant, centering=False)
    np.testing.assert_allclose(Z @ theta, expect, rtol=0, atol=1e-12)


def test_design_rows_depend_only_on_subject_and_time():
    Z1 = build_design([[0.3, -0.2]], [1], 3, "mmrmx")
    Z2 = build_design([[0.5, 0.5], [0.3, -0.2]], [0, 1], 3, "mmrmx")
    np.testing.assert_array_equal(Z1[0], Z2[1])
