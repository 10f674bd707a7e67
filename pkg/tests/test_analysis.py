import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from conftest import y_graph
from retinahemo.analysis import (
    cohort_summary,
    fit_exponential,
    measurement_records,
    parse_label,
    radius_flow_correlation,
    read_patients,
)
from retinahemo.exceptions import EmptyGroup, UndefinedCorrelation
from retinahemo.features import summarize
from retinahemo.hemo import assemble_and_solve


def seg_records(r, Q, subject="s", label=1):
    n = len(r)
    return pd.DataFrame({"subject_id": subject, "kind": "segment", "dP": 1.0, "v": 1.0, "r": r, "Q": Q,
                         "age": 60.0, "sex": "M", "label": label}, index=range(n))


def test_monotone_data_gives_rho_one_and_is_rank_invariant():
    r = np.linspace(1e-3, 5e-3, 20)
    rec = seg_records(r, 3 * r**2)
    assert radius_flow_correlation(rec)["spearman_rho"] == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    Q = rng.uniform(1, 10, 20)
    rho = radius_flow_correlation(seg_records(r, Q))["spearman_rho"]
    assert rho == pytest.approx(spearmanr(r, Q).statistic)
    assert radius_flow_correlation(seg_records(np.exp(r * 100), np.log(Q)))["spearman_rho"] == pytest.approx(rho)
    assert -1 <= rho <= 1


def test_exponential_fit_recovers_parameters():
    r = np.linspace(1e-3, 8e-3, 25)
    a, b = fit_exponential(r, 2 * np.exp(100 * r))
    assert a == pytest.approx(2, rel=0.01) and b == pytest.approx(100, rel=0.01)
    fits = radius_flow_correlation(seg_records(r, 2 * np.exp(100 * r), subject="x", label=-1))
    assert fits["per_group"][-1] == pytest.approx((2.0, 100.0), rel=0.01)
    assert set(fits["per_subject"]) == {"x"}


def test_correlation_errors():
    with pytest.raises(UndefinedCorrelation):
        radius_flow_correlation(seg_records([1e-3, 2e-3], [1.0, 2.0]))
    with pytest.raises(UndefinedCorrelation):
        radius_flow_correlation(seg_records([1e-3] * 5, [1.0, 2.0, 3.0, 4.0, 5.0]))


def make_cohort():
    sets, rows = [], []
    for i, (label, qt) in enumerate([(-1, 30.0), (-1, 40.0), (1, 60.0), (1, 80.0)]):
        from retinahemo.hemo import ScenarioParams

        g = y_graph(r_left=25e-4 + 1e-4 * i)
        sets.append(summarize(assemble_and_solve(g, ScenarioParams.preset("sc2", QT=qt)), g, f"p{i}", label))
        rows.append({"subject_id": f"p{i}", "label": label, "age": 50 + 5 * i, "sex": "MF"[i % 2]})
    return sets, pd.DataFrame(rows)


def test_records_match_feature_sets():
    sets, pts = make_cohort()
    rec = measurement_records(sets, pts)
    assert rec.groupby("subject_id").size().to_dict() == {s.subject_id: len(s) for s in sets}
    assert (rec["dP"] >= 0).all()
    np.testing.assert_allclose(rec["dP"].iloc[: len(sets[0])], 62.22 - sets[0].X[:, 1])


def test_cohort_summary_tables():
    sets, pts = make_cohort()
    rec = measurement_records(sets, pts)
    out = cohort_summary(rec, pts)
    pp, pm = out["per_patient"], out["per_measurement"]
    assert (pp["all"]["n"], pp["healthy"]["n"], pp["glaucomatous"]["n"]) == (4, 2, 2)
    assert pp["all"]["NoS"][0] == 3.0 and pp["all"]["males"] == 2
    assert pp["healthy"]["age"][0] == pytest.approx(52.5)
    h = rec[rec["label"] == -1]
    assert pm["healthy"]["v"] == pytest.approx([h["v"].mean(), h["v"].std(ddof=1)])
    assert pm["all"]["n"] == len(rec)
    with pytest.raises(EmptyGroup):
        cohort_summary(rec[rec["label"] == 1], pts[pts["label"] == 1])


def test_single_subject_group_mean_is_its_values():
    sets, pts = make_cohort()
    rec = measurement_records(sets[:1] + sets[2:3], pts)
    out = cohort_summary(rec, pts)
    own = rec[rec["subject_id"] == "p0"]
    assert out["per_measurement"]["healthy"]["dP"][0] == pytest.approx(own["dP"].mean())


def test_records_roundtrip_reproduces_means(tmp_path):
    sets, pts = make_cohort()
    rec = measurement_records(sets, pts)
    rec.to_csv(tmp_path / "r.csv", index=False, float_format="%.12g")
    back = pd.read_csv(tmp_path / "r.csv", dtype={"subject_id": str})
    a, b = cohort_summary(rec, pts), cohort_summary(back, pts)
    np.testing.assert_allclose(a["per_measurement"]["all"]["v"], b["per_measurement"]["all"]["v"], rtol=1e-11)


def test_label_parsing(tmp_path):
    assert [parse_label(x) for x in ("H", "g", "-1", "1", "healthy", 0)] == [-1, 1, -1, 1, -1, -1]
    (tmp_path / "l.csv").write_text("subject_id,label,age,sex\n01,G,70,f\n02,H,61,M\n")
    pts = read_patients(tmp_path / "l.csv")
    assert pts["subject_id"].tolist() == ["01", "02"]
    assert pts["label"].tolist() == [1, -1] and pts["sex"].tolist() == ["F", "M"]
