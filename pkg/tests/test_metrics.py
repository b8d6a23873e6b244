import shutil

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from evade import metrics as M

from oracles import t_sf

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


def test_hns_examples():
    assert M.hns(100, 0, 200) == 0.5
    assert M.hns(7.0, 7.0, 30.0) == 0.0
    assert M.hns(24.024, 1.7, 30.5) == pytest.approx(0.77514, abs=5e-6)
    with pytest.raises(ZeroDivisionError):
        M.hns(1, 2, 2)


def test_iqm_examples():
    assert M.iqm([1, 2, 3, 4, 5, 6, 7, 8]) == 4.5
    assert M.iqm([3.25] * 9) == 3.25
    with pytest.raises(ValueError):
        M.iqm([1, 2, 3])


def test_paired_t_example():
    t, p = M.paired_t_test([1, 2, 3, 4, 5], [0] * 5)
    assert t == pytest.approx(4.2426, abs=1e-4)
    assert p == pytest.approx(0.00662, abs=1e-5)
    assert p == pytest.approx(t_sf(t, 4), rel=1e-6)


def test_paired_t_errors():
    with pytest.raises(ValueError):
        M.paired_t_test([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        M.paired_t_test([1, 2], [1, 2, 3])


def test_breakout_row_from_tables():
    t = M.load_tables()
    assert t.human["Breakout"] == 30.5 and t.random["Breakout"] == 1.7
    assert M.hns(t.means["evade"]["Breakout"], 1.7, 30.5) == pytest.approx(0.77514, abs=5e-6)


def test_table_shapes():
    t = M.load_tables()
    assert len(t.games) == 26
    assert len(t.runs["evade"]) == 26 and len(t.runs["simple30"]) == 26
    assert len(t.runs["inter"]) == len(t.runs["weight"]) == len(t.runs["trans"]) == 12
    # per-game means of the per-run tables agree with the mean table
    for g in t.games:
        assert np.mean(t.runs["evade"][g]) == pytest.approx(t.means["evade"][g], rel=1e-3, abs=0.06)


def test_all_published_aggregates_reproduce():
    checks, extra = M.reproduce_paper_metrics()
    failed = [c.line() for c in checks if not c.passed]
    assert not failed, failed
    by = {c.name: c.value for c in checks}
    assert by["mean HNS evade"] == pytest.approx(0.682, abs=0.005)
    assert by["simple30 vs evade W/L"] == (3, 23)
    assert by["IQM evade (26 games x 5 runs)"] == pytest.approx(0.339, abs=0.01)


def test_p_value_against_integration_oracle():
    t = M.load_tables()
    tstat, p = M.paired_t_test(t.hns_means("evade"), t.hns_means("simple30"))
    assert p == pytest.approx(t_sf(tstat, 25), rel=1e-5)
    assert p <= 5e-3


def test_missing_and_malformed_tables(tmp_path):
    with pytest.raises(M.TableError):
        M.reproduce_paper_metrics(tmp_path)
    src = M.default_tables_dir()
    for f in src.glob("*.csv"):
        shutil.copy(f, tmp_path / f.name)
    text = (tmp_path / "mean_scores.csv").read_text().splitlines()
    text[1] = text[1].rsplit(",", 1)[0] + ",abc"
    (tmp_path / "mean_scores.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(M.TableError):
        M.reproduce_paper_metrics(tmp_path)


@settings(max_examples=200)
@given(finite, finite, finite, st.floats(0.01, 100) | st.floats(-100, -0.01), finite)
def test_hns_affine_invariance(a, r, h, alpha, beta):
    assume(abs(h - r) > 1e-3)
    lhs = M.hns(a, r, h)
    rhs = M.hns(alpha * a + beta, alpha * r + beta, alpha * h + beta)
    assert rhs == pytest.approx(lhs, rel=1e-6, abs=1e-6)


@settings(max_examples=200)
@given(st.lists(finite, min_size=4, max_size=60), st.floats(0, 1e6))
def test_iqm_ignores_larger_maximum(xs, bump):
    ys = sorted(xs)
    ys[-1] = ys[-1] + bump
    assert M.iqm(ys) == pytest.approx(M.iqm(xs), rel=1e-12, abs=1e-12)
