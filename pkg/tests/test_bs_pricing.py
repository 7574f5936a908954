import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughskew.bs_pricing import (
    CALL, PUT, BachelierState, BsQuote, bachelier_put, bs_delta, bs_greeks, bs_price,
    implied_vol, symmetric_strikes,
)
from roughskew.errors import DegenerateInputError, PriceBandError
from roughskew.models import ForwardVarianceCurve

# 40-digit mpmath evaluations of the closed form
ORACLE_PRICES = [
    ((100.0, 100.0, 1.0, 0.2, CALL), 7.9655674554057967338),
    ((100.0, 110.0, 0.5, 0.25, CALL), 3.4412147063992464703),
    ((100.0, 90.0, 0.25, 0.3, PUT), 2.0217274256477639461),
    ((1.0, 1.2, 2.0, 0.15, PUT), 0.22503775208732233798),
]


@pytest.mark.parametrize("args,expected", ORACLE_PRICES)
def test_price_matches_high_precision(args, expected):
    assert bs_price(*args) == pytest.approx(expected, rel=1e-13)


def test_atm_price_by_integration():
    # the payoff integrated against the normal density
    from scipy.integrate import quad
    from scipy.stats import norm

    s = 0.2
    f = lambda x: max(100.0 * math.exp(s * x - 0.5 * s * s) - 100.0, 0.0) * norm.pdf(x)
    val, _ = quad(f, 0.5 * s, 12.0, epsabs=1e-13, epsrel=1e-13)
    assert bs_price(100.0, 100.0, 1.0, 0.2) == pytest.approx(val, rel=1e-11)


def test_intrinsic_cases():
    assert bs_price(100, 100, 0.0, 0.2, CALL) == 0.0
    assert bs_price(100, 80, 1.0, 0.0, CALL) == 20.0
    assert bs_price(100, 120, 1.0, 0.0, PUT) == 20.0


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        bs_price(-1.0, 100, 1.0, 0.2)
    with pytest.raises(ValueError):
        bs_price(100, 100, 1.0, math.nan)
    with pytest.raises(ValueError):
        bs_price(100, 100, 1.0, 0.2, "straddle")


def test_vectorised_matches_scalar():
    k = np.array([80.0, 100.0, 125.0])
    v = bs_price(100.0, k, 0.5, 0.3, PUT)
    assert np.allclose(v, [bs_price(100.0, x, 0.5, 0.3, PUT) for x in k], rtol=0, atol=1e-14)


def test_greeks_degenerate():
    with pytest.raises(DegenerateInputError):
        bs_greeks(100, 100, 0.0, 0.2)
    with pytest.raises(DegenerateInputError):
        bs_greeks(100, 100, 1.0, 0.0)


def test_atm_delta_small_total_vol():
    for s in (0.01, 0.1, 0.24):
        d = bs_greeks(1.0, 1.0, 1.0, s).delta
        assert 0.5 < d < 0.55
        assert d == pytest.approx(0.5 * math.erfc(-s / 2 / math.sqrt(2)), rel=1e-14)


@pytest.mark.parametrize("kind", [CALL, PUT])
@pytest.mark.parametrize("S,K,T,v", [(100, 95, 0.1, 0.3), (100, 130, 2.0, 0.5), (1.0, 0.9, 0.01, 0.15)])
def test_delta_finite_difference(kind, S, K, T, v):
    h = 1e-5 * S
    fd = (bs_price(S + h, K, T, v, kind) - bs_price(S - h, K, T, v, kind)) / (2 * h)
    g = bs_greeks(S, K, T, v, kind)
    assert g.delta == pytest.approx(fd, rel=1e-6)
    assert bs_delta(S, K, T, v, kind) == pytest.approx(g.delta, rel=1e-14)
    assert g.gamma > 0 and g.vega > 0


def test_vega_equal_for_put_and_call():
    c = bs_greeks(100, 105, 0.7, 0.25, CALL)
    p = bs_greeks(100, 105, 0.7, 0.25, PUT)
    assert c.vega == p.vega
    assert c.gamma == p.gamma


def test_quote_object():
    q = BsQuote(100.0, 100.0, 1.0, 0.2)
    assert q.price() == bs_price(100.0, 100.0, 1.0, 0.2)
    assert q.greeks().delta == bs_greeks(100.0, 100.0, 1.0, 0.2).delta
    with pytest.raises(ValueError):
        BsQuote(100.0, -1.0, 1.0, 0.2)


def test_implied_vol_examples():
    p = bs_price(100, 100, 1.0, 0.2)
    assert implied_vol(p, 100, 100, 1.0) == pytest.approx(0.2, abs=1e-10)
    p = bs_price(100, 120, 0.25, 0.3, PUT)
    assert implied_vol(p, 100, 120, 0.25, PUT) == pytest.approx(0.3, abs=1e-10)


def test_implied_vol_band_errors():
    with pytest.raises(PriceBandError) as e:
        implied_vol(0.0, 100, 110, 1.0, CALL)
    assert e.value.bound == "lower"
    with pytest.raises(PriceBandError) as e:
        implied_vol(10.0, 100, 90, 1.0, CALL)  # equal to intrinsic
    assert e.value.bound == "lower"
    with pytest.raises(PriceBandError) as e:
        implied_vol(100.0, 100, 90, 1.0, CALL)
    assert e.value.bound == "upper"
    with pytest.raises(PriceBandError) as e:
        implied_vol(90.0, 100, 90, 1.0, PUT)
    assert e.value.bound == "upper"


@settings(max_examples=300, deadline=None)
@given(
    vol=st.floats(0.01, 2.0),
    ttm=st.floats(1e-4, 2.0),
    logm=st.floats(-1.0, 1.0),
    kind=st.sampled_from([CALL, PUT]),
)
def test_implied_vol_round_trip(vol, ttm, logm, kind):
    S = 100.0
    K = S * math.exp(logm)
    price = bs_price(S, K, ttm, vol, kind)
    intrinsic = max(S - K, 0.0) if kind == CALL else max(K - S, 0.0)
    # skip prices that carry no time value in double precision
    if price - intrinsic < 1e-12 * S:
        return
    iv = implied_vol(price, S, K, ttm, kind)
    assert abs(bs_price(S, K, ttm, iv, kind) - price) < 1e-12 * S
    vega = bs_greeks(S, K, ttm, vol, kind).vega
    if vega > 1e-6 * S:
        assert iv == pytest.approx(vol, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(
    S=st.floats(1.0, 1000.0),
    logm=st.floats(-1.5, 1.5),
    ttm=st.floats(1e-4, 3.0),
    vol=st.floats(0.01, 2.0),
)
def test_put_call_parity(S, logm, ttm, vol):
    K = S * math.exp(logm)
    diff = bs_price(S, K, ttm, vol, CALL) - bs_price(S, K, ttm, vol, PUT)
    assert abs(diff - (S - K)) <= 1e-12 * max(S, K)


def test_symmetric_strikes_examples():
    assert symmetric_strikes(100.0, 95.0) == pytest.approx((95.0, 100.0**2 / 95.0))
    assert symmetric_strikes(100.0, 100.0) == (100.0, 100.0)
    k, kc = symmetric_strikes(100.0, 95.0)
    assert math.log(k / 100.0) == pytest.approx(-math.log(kc / 100.0), rel=1e-14)
    p = bs_price(100.0, 95.0, 0.1, 0.3, PUT)
    c = bs_price(100.0, kc, 0.1, 0.3, CALL)
    assert p == pytest.approx(95.0 / 100.0 * c, rel=1e-12)


def test_put_call_symmetry_random_grid():
    rng = np.random.default_rng(11)
    S = rng.uniform(10, 200, 100)
    K = S * np.exp(rng.uniform(-0.8, 0.8, 100))
    T = rng.uniform(1e-3, 2.0, 100)
    v = rng.uniform(0.05, 1.0, 100)
    lhs = bs_price(S, K, T, v, PUT)
    rhs = K / S * bs_price(S, S * S / K, T, v, CALL)
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(lhs, 1e-300) + 1e-300)


def test_monotone_in_vol():
    vols = np.linspace(0.01, 2.0, 200)
    p = bs_price(100.0, 110.0, 0.5, vols)
    assert np.all(np.diff(p) > 0)


def test_deep_tail_is_finite_and_tiny():
    p = bs_price(1.0, 5.0, 0.01, 0.1, CALL)
    assert 0.0 <= p < 1e-300 or p == 0.0
    # mpmath reference at 50 digits
    q = bs_price(1.0, 1.3, 0.01, 0.1, CALL)
    assert q == pytest.approx(2.2124050547041850686e-155, rel=1e-8)


# Bachelier problem

def _wfun():
    fvc = ForwardVarianceCurve.affine(0.04, 0.2)
    return fvc.rescaled_cumulative(0.5)


def test_bachelier_terminal_and_tails():
    w = _wfun()
    assert bachelier_put(BachelierState(0.3, 1.0, 0.5, w)).p == pytest.approx(0.2)
    assert bachelier_put(BachelierState(0.7, 1.0, 0.5, w)).p == 0.0
    r = bachelier_put(BachelierState(0.5, 1.0, 0.5, w))
    assert r.p == 0.0 and math.isnan(r.d2p_dx2)
    assert bachelier_put(BachelierState(50.0, 0.2, 0.0, w)).p < 1e-300


def test_bachelier_pde_finite_difference():
    w = _wfun()
    h = 1e-4
    for x in (-0.3, -0.05, 0.0, 0.1, 0.4):
        for u in (0.0 + h, 0.3, 0.6, 0.9):
            st0 = BachelierState(x, u, 0.05, w)
            val = bachelier_put(st0)
            pu = (bachelier_put(BachelierState(x, u + h, 0.05, w)).p
                  - bachelier_put(BachelierState(x, u - h, 0.05, w)).p) / (2 * h)
            pxx = (bachelier_put(BachelierState(x + h, u, 0.05, w)).p - 2 * val.p
                   + bachelier_put(BachelierState(x - h, u, 0.05, w)).p) / (h * h)
            wprime = (w(u + h) - w(u - h)) / (2 * h)
            assert abs(pu + 0.5 * wprime * pxx) < 1e-6
            # closed-form derivatives against the same differences
            assert abs(val.d2p_dx2 - pxx) < 1e-5 * max(1.0, val.d2p_dx2)
            dpx = (bachelier_put(BachelierState(x + h, u, 0.05, w)).p
                   - bachelier_put(BachelierState(x - h, u, 0.05, w)).p) / (2 * h)
            assert val.dp_dx == pytest.approx(dpx, abs=1e-7)
            assert val.d2p_dx2 > 0


def test_bachelier_gamma_bound():
    w = _wfun()
    xs = np.linspace(-2.0, 2.0, 81)
    us = np.linspace(0.0, 0.999, 60)
    scaled = [np.max(np.abs(xs * bachelier_put(BachelierState(xs, u, 0.0, w)).d2p_dx2)) * math.sqrt(1 - u)
              for u in us]
    C = max(scaled[: len(us) // 2]) * 10.0
    # a constant fitted on the first half of the u grid bounds the whole grid
    assert np.all(np.array(scaled) <= C)


def test_bachelier_rejects_bad_u():
    with pytest.raises(ValueError):
        BachelierState(0.0, 1.5, 0.0, _wfun())


def test_log_moneyness_override_mirrors_deep_otm_legs():
    S, s, T = 1.0963782857278574, 0.00017378346283796476, 1.0
    x = math.log(1.0944418565084666 / S)
    kp, kc = S * math.exp(x), S * S / (S * math.exp(x))
    put = bs_price(S, kp, T, s, PUT, log_moneyness=x)
    call = bs_price(S, kc, T, s, CALL, log_moneyness=-x)
    assert put == pytest.approx(math.exp(x) * call, rel=1e-13)
    assert bs_price(1.0, 1.1, 0.5, 0.2, CALL, log_moneyness=math.log(1.1)) == pytest.approx(
        bs_price(1.0, 1.1, 0.5, 0.2, CALL), rel=1e-15)
