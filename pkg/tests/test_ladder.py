import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdlab.fields import BoxDomain, Field, lp_norm
from rdlab.ladder import (LadderSchedule, attractor_linf_radius, fit_envelope, ladder_json,
                          linf_bound_check, linf_quotient, rung_check, rung_ratio, run_ladder,
                          validate_envelope)
from rdlab.rng import generator, random_field
from rdlab.solver import simulate


@pytest.fixture(scope="module")
def trajs(cubic2):
    dom = BoxDomain.interval(np.pi, 31)
    out = []
    for i, norm in enumerate([1.0, 10.0, 100.0, 1000.0]):
        u0 = random_field(dom, generator(4, f"ladder/{i}"), l2=norm)
        out.append(simulate(u0, cubic2, dt=1 / 128, horizon=3.0))
    return out


@pytest.mark.parametrize("d, A", [(1, 2.0), (2, 2.0), (3, 2.0), (4, 2.0), (5, 5 / 3), (6, 1.5)])
def test_rung_ratio(d, A):
    assert rung_ratio(d) == pytest.approx(A)


@pytest.mark.parametrize("d", [0, 1.5, -2])
def test_rung_ratio_rejects(d):
    with pytest.raises(ValueError):
        rung_ratio(d)


def test_default_schedule():
    s = LadderSchedule()
    assert s.rungs == [2, 4, 8, 16, 32]
    assert s.waits == [0.25, 0.125, 0.0625, 0.03125, 0.015625]
    assert s.starts == [0.0, 0.25, 0.375, 0.4375, 0.46875]
    assert s.total_wait == 0.484375 < s.wait_bound == 0.5
    assert LadderSchedule.for_dimension(5).A == pytest.approx(5 / 3)


@pytest.mark.parametrize("kw", [dict(A=1.0), dict(m0=0.5), dict(m_max=3.0), dict(delta=0.0),
                                dict(D_exp=-1.0)])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        LadderSchedule(**kw)


@given(st.floats(1.2, 4.0), st.floats(1.0, 4.0), st.floats(0.5, 2.0), st.floats(0.1, 10.0))
def test_product_bound_is_the_infinite_product(A, m0, D, K):
    # enough rungs that the neglected tail is far below the tolerance
    s = LadderSchedule(A=A, m0=m0, m_max=m0 * A ** int(150 / math.log10(A)), D_exp=D)
    log_prod = sum((math.log(K) + D * math.log(m)) / m for m in s.rungs)
    assert math.log(s.product_bound(K)) == pytest.approx(log_prod, rel=1e-9, abs=1e-12)
    assert s.total_wait == pytest.approx(s.wait_bound, rel=1e-9)


def test_rung_check_records(trajs):
    rec = rung_check(trajs[2], 0.5, 0.25, 4, 2.0)
    assert rec.window_sup > 0 and rec.lhs > 0
    assert rec.quotient == max(rec.lhs, 1.0) / max(rec.window_sup, 1.0)
    assert rec.implied == pytest.approx(rec.quotient**4 / 4)
    assert rec.monotone_in_k
    assert all(a <= rec.untruncated_lhs * (1 + 1e-12) for a in rec.truncated_lhs)
    assert all(a <= rec.untruncated_phi * (1 + 1e-12) for a in rec.truncated_phi)
    # the top level exceeds the window max, so truncation is inactive there
    assert rec.truncated_lhs[-1] == pytest.approx(rec.untruncated_lhs, rel=1e-12)
    assert rec.truncated_phi[-1] == pytest.approx(rec.untruncated_phi, rel=1e-12)


def test_rung_check_floor_and_validation(trajs):
    for tr in trajs:
        rec = rung_check(tr, 2.0, 0.25, 2, 2.0, floor=0.0)
        if rec.window_sup > 0:
            assert rec.quotient == pytest.approx(rec.lhs / rec.window_sup)
        else:
            # the orbit sits in u <= 0: no positive part to control
            assert rec.lhs == 0.0 and rec.quotient == 0.0
    with pytest.raises(ValueError):
        rung_check(trajs[0], 0.0, 0.0, 2, 2.0)
    with pytest.raises(ValueError):
        rung_check(trajs[0], 0.0, 0.25, 0.5, 2.0)
    with pytest.raises(ValueError):
        rung_check(trajs[0], 2.9, 0.5, 2, 2.0)


def test_rung_check_custom_levels(trajs):
    rec = rung_check(trajs[1], 1.0, 0.25, 2, 2.0, k_grid=[2.0, 0.5, 1.0])
    assert rec.k_grid == [0.5, 1.0, 2.0]
    assert len(rec.truncated_lhs) == len(rec.truncated_phi) == len(rec.rhs_sup) == 3


def test_run_ladder_products(trajs):
    s = LadderSchedule()
    reports = [run_ladder(tr, t1, s) for tr in trajs for t1 in (0.0, 1.0, 2.0)]
    K = fit_envelope([r for rep in reports for r in rep.rungs])
    assert K >= 0.5
    for tr in trajs:
        rep = run_ladder(tr, 1.0, s, K=K)
        assert rep.violations == []
        assert rep.quotient_product <= rep.envelope_product * (1 + 1e-12)
        assert rep.envelope_product <= rep.product_bound * (1 + 1e-12)
        assert rep.terminal_time == pytest.approx(1.484375)
        assert rep.terminal_norm <= rep.terminal_linf * math.pi ** (1 / 64) * (1 + 1e-12)
    with pytest.raises(ValueError):
        run_ladder(trajs[0], 2.8, s)


def test_envelope_validation():
    class R:
        def __init__(self, m, q):
            self.m, self.t1, self.quotient, self.implied = m, 0.0, q, q**m / m

        def envelope(self, K, D_exp=1.0):
            return (K * self.m**D_exp) ** (1 / self.m)

    recs = [R(2, 1.2), R(4, 1.1), R(8, 1.05)]
    K = fit_envelope(recs)
    assert K == pytest.approx(max(1.2**2 / 2, 1.1**4 / 4, 1.05**8 / 8))
    assert validate_envelope(recs, K) == []
    assert len(validate_envelope(recs, 0.5 * K)) >= 1
    assert fit_envelope([]) == 0.0


def test_ladder_json_is_versioned(trajs):
    rep = run_ladder(trajs[0], 0.0, LadderSchedule(), K=0.5)
    data = json.loads(ladder_json([rep], 0.5, {"note": "x"}))
    assert data["schema_version"] == 1 and data["note"] == "x"
    assert data["reports"][0]["schedule"]["rungs"] == [2.0, 4.0, 8.0, 16.0, 32.0]


def test_linf_quotient_matches_brute_force(trajs):
    tr = trajs[3]
    t, linf, l2 = tr.log["time"], tr.log["linf"], tr.log["l2"]
    tau = 0.5
    best = 0.0
    for i in range(0, len(t), 7):
        if t[i] < 0.25:
            continue
        later = t >= t[i] + tau - 1e-9
        if not later.any():
            break
        best = max(best, linf[later].max() / (l2[i:].max() + 1))
    assert linf_quotient(tr, 0.25, tau) >= best * (1 - 1e-12)
    with pytest.raises(ValueError):
        linf_quotient(tr, 2.9, 0.5)


def test_linf_bound_check(trajs):
    fit = linf_bound_check(trajs, 0.0, 1.0)
    assert math.isfinite(fit.D_hat) and fit.D_hat == max(fit.quotients)
    assert fit.prefix_fits == sorted(fit.prefix_fits)
    assert fit.split["ratio"] <= 2.0
    assert linf_bound_check(trajs, 0.0, 1.0, D=fit.D_hat).violations == 0
    assert linf_bound_check(trajs, 0.0, 1.0, D=0.5 * fit.D_hat).violations > 0


def test_linf_quotient_shrinks_with_wait(trajs):
    q = [linf_bound_check(trajs, 0.0, tau).D_hat for tau in (0.25, 0.5, 1.0, 2.0)]
    assert all(a >= b * (1 - 1e-12) for a, b in zip(q, q[1:]))


def test_attractor_linf_radius():
    dom = BoxDomain.interval(np.pi, 15)
    fields = [Field.mode(dom, 1, 2.0), Field.mode(dom, 2, -3.0)]
    assert attractor_linf_radius(fields) == pytest.approx(max(lp_norm(u, np.inf) for u in fields))
    with pytest.raises(ValueError):
        attractor_linf_radius([])
