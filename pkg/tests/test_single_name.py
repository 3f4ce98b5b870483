"""Tests for the analytic single-name survival law, quotes and inversion.

Reference survival values were computed independently by integrating the
absorbed-diffusion transition density (reflection/image form) over the
positive half line with adaptive quadrature at 1e-14 tolerance.
"""

import numpy as np
import pytest

from cdolab import (
    DegenerateQuoteError,
    InvalidParameterError,
    NoSolutionError,
    SingleNameState,
    build_schedule,
    cds_quote_analytic,
    derive_beta,
    invert_x0,
    invert_x0_vector,
    survival_prob,
)


def test_survival_against_quadrature_oracle():
    cases = [
        # (x0, beta, t, survival from quadrature of the image density)
        (1.0, 0.0, 1.0, 0.682689492137086),
        (2.0, 0.25, 5.0, 0.791328127367629),
        (0.5, -0.1, 2.0, 0.241053532894299),
        (3.0, 0.8, 0.25, 0.999999999834109),
        (2.0, 0.24909309392265191, 5.0, 0.790835760983813),
    ]
    for x0, beta, t, want in cases:
        got = survival_prob(SingleNameState(x0=x0, beta=beta), t)
        assert got == pytest.approx(want, abs=2e-13)


def test_survival_driftless_closed_form():
    # with beta = 0 the survival is 1 - 2 Phi(-x0/sqrt(t))
    from scipy.stats import norm

    for x0 in (0.5, 1.0, 2.5):
        for t in (0.25, 1.0, 4.0):
            want = 1.0 - 2.0 * norm.cdf(-x0 / np.sqrt(t))
            got = survival_prob(SingleNameState(x0=x0, beta=0.0), t)
            assert got == pytest.approx(want, rel=1e-12)


def test_survival_edge_cases():
    st = SingleNameState(x0=1.0, beta=0.1)
    assert survival_prob(st, 0.0) == 1.0
    assert survival_prob(SingleNameState(x0=0.0, beta=0.1), 1.0) == 0.0
    with pytest.raises(InvalidParameterError):
        survival_prob(st, -0.5)
    # vectorised over t
    t = np.array([0.0, 0.5, 1.0, 5.0])
    s = survival_prob(st, t)
    assert s.shape == t.shape
    assert np.all(np.diff(s) < 0)
    assert np.all((s >= 0) & (s <= 1))


def test_cds_quote_against_quadrature_oracle():
    beta = derive_beta(0.015, 0.0543)
    sched = build_schedule(0.25, 5.0, 0.015)
    got = cds_quote_analytic(SingleNameState(x0=2.0, beta=beta), sched, 0.6)
    # oracle assembled from quadrature survivals, printed to 15 digits
    assert got == pytest.approx(0.028324895155803, abs=1e-13)
    got15 = cds_quote_analytic(SingleNameState(x0=1.5, beta=beta), sched, 0.6)
    assert got15 == pytest.approx(0.049412153809047, abs=1e-13)
    # riskier name quotes wider
    assert got15 > got


def test_cds_quote_degenerate_when_default_certain():
    sched = build_schedule(0.25, 5.0, 0.015)
    with pytest.raises(DegenerateQuoteError):
        cds_quote_analytic(SingleNameState(x0=0.0, beta=0.0), sched, 0.6)


def test_invert_x0_round_trip():
    beta = derive_beta(0.015, 0.0543)
    sched = build_schedule(0.25, 5.0, 0.015)
    for x0 in (0.3, 1.0, 2.0, 3.5, 5.0):
        q = cds_quote_analytic(SingleNameState(x0=x0, beta=beta), sched, 0.6)
        back = invert_x0(q, beta, sched, 0.6)
        assert back == pytest.approx(x0, abs=1e-9)


def test_invert_x0_vector_matches_scalar():
    beta = derive_beta(0.015, 0.0543)
    sched = build_schedule(0.25, 5.0, 0.015)
    quotes = np.array([0.05, 0.028, 0.01, 0.002])
    xs = invert_x0_vector(quotes, beta, sched, 0.6)
    for q, x in zip(quotes, xs):
        assert x == pytest.approx(invert_x0(q, beta, sched, 0.6), rel=1e-12)
    # wider quote -> closer to the barrier
    assert np.all(np.diff(xs) > 0)


def test_invert_x0_unattainable_quote():
    beta = derive_beta(0.015, 0.0543)
    sched = build_schedule(0.25, 5.0, 0.015)
    with pytest.raises(NoSolutionError) as exc:
        invert_x0(1e-5, beta, sched, 0.6)  # 0.1 bps: safer than any x0 in range
    # the error reports the attainable interval
    assert exc.value.lo < exc.value.hi
