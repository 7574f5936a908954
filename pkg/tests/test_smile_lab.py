import math

import numpy as np
import pytest

from roughskew.asymptotics import rough_bergomi_slope
from roughskew.bs_pricing import CALL, PUT, bs_greeks, bs_price, implied_vol
from roughskew.errors import ContractRefusal, PriceBandError
from roughskew.models import (
    ConstantVol, ForwardVarianceCurve, ModelSpec, RoughBergomi, SimGrid, simulate,
)
from roughskew.smile_lab import (
    SmilePoint, fit_power_law, mc_price, mc_smile, skew_bound, skew_bound_check,
    skew_by_maturity, smile_from_bundle,
)

FLAT = ForwardVarianceCurve.flat(0.04)
THETAS = [2.0**-k for k in range(8, 3, -1)]


def rb(H=0.3, eta=1.9, rho=-0.9):
    return ModelSpec(RoughBergomi(H, eta, rho), 1.0, FLAT)


def synthetic(c, H, thetas=THETAS, zs=(-0.1, 0.1)):
    return [SmilePoint(t, z, math.exp(z * math.sqrt(t)), 0.2 + c * t ** (H - 0.5) * z * math.sqrt(t), 0.0)
            for t in thetas for z in zs]


@pytest.fixture(scope="module")
def cv_bundle():
    return simulate(ModelSpec(ConstantVol(0.2)), SimGrid(0.25, 16, 100_000, seed=4), keep="terminal")


# pricing

def test_mc_price_matches_closed_form(cv_bundle):
    for k, kind in ((0.9, PUT), (1.0, CALL), (1.15, CALL)):
        est = mc_price(cv_bundle, k, kind)
        assert abs(est.price - bs_price(1.0, k, 0.25, 0.2, kind)) < 4 * est.stderr


def test_mc_price_small_strike_is_mean_spot(cv_bundle):
    est = mc_price(cv_bundle, 1e-12, CALL)
    assert est.price == pytest.approx(cv_bundle.prices[:, -1].mean() - 1e-12, rel=1e-12)


def test_mc_parity_is_pathwise(cv_bundle):
    k = 1.05
    c = mc_price(cv_bundle, k, CALL).price
    p = mc_price(cv_bundle, k, PUT).price
    assert c - p == pytest.approx(cv_bundle.prices[:, -1].mean() - k, abs=1e-14)


def test_mc_call_monotone_in_strike(cv_bundle):
    ks = np.linspace(0.7, 1.4, 40)
    prices = [mc_price(cv_bundle, k, CALL).price for k in ks]
    assert all(a >= b for a, b in zip(prices, prices[1:]))


def test_mc_price_errors(cv_bundle):
    with pytest.raises(ValueError):
        mc_price(cv_bundle, 0.0)
    with pytest.raises(ValueError):
        mc_price(cv_bundle, 1.0, "digital")


def test_control_variate_is_exact_for_constant_vol(cv_bundle):
    # the control is the path itself, so the residual has no variance
    est = mc_price(cv_bundle, 1.05, CALL, control_vol=0.2)
    assert est.price == pytest.approx(bs_price(1.0, 1.05, 0.25, 0.2), rel=1e-12)
    assert est.stderr < 1e-12


def test_vega_mapping_against_bootstrap():
    b = simulate(rb(), SimGrid(1 / 32, 128, 20_000, seed=8), keep="terminal")
    z = -0.25
    pt = smile_from_bundle(b, [z])[0]
    theta, k = b.horizon, pt.strike
    pay = np.maximum(k - b.prices[:, -1], 0.0)
    units = b.sample_units(pay)
    rng = np.random.default_rng(0)
    ivs = [implied_vol(units[rng.integers(0, units.size, units.size)].mean(), 1.0, k, theta, PUT)
           for _ in range(200)]
    boot = float(np.std(ivs, ddof=1))
    assert abs(pt.stderr_iv / boot - 1.0) < 0.3
    assert pt.stderr_iv == pytest.approx(pt.stderr_price / bs_greeks(1.0, k, theta, pt.iv, PUT).vega)


# smiles

def test_constant_vol_smile_is_flat():
    pts = mc_smile(ModelSpec(ConstantVol(0.2)), [1 / 64, 1 / 16], [-0.5, 0.0, 0.5],
                   n_steps=8, n_paths=20_000, control_variate=False)
    for p in pts:
        assert abs(p.iv - 0.2) < 4 * p.stderr_iv
        assert p.kind == (PUT if p.z < 0 else CALL)


def test_eta_zero_smile_is_flat():
    pts = mc_smile(rb(eta=0.0), [1 / 32], [-0.5, 0.5], n_steps=16, n_paths=20_000, control_variate=False)
    for p in pts:
        assert abs(p.iv - 0.2) < 4 * p.stderr_iv


def test_rough_bergomi_atm_near_vbar():
    pts = mc_smile(rb(), [1 / 256], [0.0], n_steps=128, n_paths=50_000)
    p = pts[0]
    # the correction at z = 0 vanishes; allow MC error and a small remainder
    assert abs(p.iv - 0.2) < max(4 * p.stderr_iv, 0.004)


def test_smile_is_sorted_and_worker_independent():
    zs = [0.25, -0.25, 0.0]
    kw = dict(n_steps=32, n_paths=4000, seed=3, control_variate=False)
    a = mc_smile(rb(), [1 / 16, 1 / 64], zs, **kw)
    b = mc_smile(rb(), [1 / 16, 1 / 64], zs, workers=2, **kw)
    assert [p.row() for p in a] == [p.row() for p in b]
    assert [(p.theta, p.z) for p in a] == sorted((p.theta, p.z) for p in a)


def test_band_error_carries_context():
    # a far out-of-the-money strike has no simulated payoff at all
    with pytest.raises(PriceBandError, match="z=40"):
        mc_smile(ModelSpec(ConstantVol(0.2)), [1 / 64], [40.0], n_steps=4, n_paths=100,
                 control_variate=False)


def test_mc_smile_rejects_bad_maturity():
    with pytest.raises(ValueError):
        mc_smile(rb(), [0.0, 0.1], [0.0])


# power-law fit

def test_fit_recovers_synthetic_power_law():
    f = fit_power_law(synthetic(-0.1, 0.2))
    assert abs(f.H_hat - 0.2) < 1e-10
    assert abs(f.coeff_hat + 0.1) < 1e-10
    assert f.r2 == pytest.approx(1.0, abs=1e-10)
    assert f.theta_range == (THETAS[0], THETAS[-1])
    assert set(f.to_dict()) >= {"H_hat", "coeff_hat", "r2", "theta_range", "z_pair"}


def test_fit_skews_are_finite_differences():
    sk = skew_by_maturity(synthetic(-0.1, 0.2))
    for t, s, _ in sk:
        assert s == pytest.approx(-0.1 * t ** -0.3, rel=1e-12)
    with pytest.raises(ValueError):
        skew_by_maturity(synthetic(-0.1, 0.2), (0.1, 0.1))


def test_fit_refuses_sign_change_and_zero_skew():
    pts = synthetic(-0.1, 0.2)
    flipped = [SmilePoint(p.theta, p.z, p.strike, 0.4 - p.iv, 0.0) if p.theta == THETAS[2] else p for p in pts]
    with pytest.raises(ContractRefusal, match="sign"):
        fit_power_law(flipped)
    with pytest.raises(ContractRefusal):
        fit_power_law(synthetic(0.0, 0.2))
    with pytest.raises(ValueError):
        fit_power_law(synthetic(-0.1, 0.2, thetas=THETAS[:2]))


# skew bound

def test_skew_bound_examples():
    assert skew_bound(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-15)
    flat = [SmilePoint(0.5, z, 1.0, 0.2, 0.0) for z in (-0.1, 0.1)]
    r = skew_bound_check(flat)
    assert r.slope_atm == 0.0 and r.ok
    # slope of -1.9 at theta = 0.5 breaks the bound
    dz = 0.2 * math.sqrt(0.5)
    steep = [SmilePoint(0.5, -0.1, 1.0, 0.5 + 0.95 * dz, 0.0), SmilePoint(0.5, 0.1, 1.0, 0.5 - 0.95 * dz, 0.0)]
    r = skew_bound_check(steep)
    assert r.slope_atm == pytest.approx(-1.9, rel=1e-12) and not r.ok
    with pytest.raises(ValueError):
        skew_bound_check(flat[:1])
    with pytest.raises(ValueError):
        skew_bound(0.0)


def test_model_smile_respects_bound():
    pts = mc_smile(rb(), [1 / 64], [-0.1, 0.1], n_steps=64, n_paths=20_000)
    assert skew_bound_check(pts).ok


@pytest.mark.slow
def test_fitted_coefficient_matches_gaussian_prefactor():
    pts = mc_smile(rb(), THETAS, [-0.1, 0.1], n_steps=512, n_paths=100_000, seed=0)
    f = fit_power_law(pts)
    target = rough_bergomi_slope(-0.9, 1.9, 0.3, 1.0)
    assert abs(f.coeff_hat - target) < 3 * f.coeff_stderr


@pytest.mark.slow
def test_atm_gap_to_expansion_shrinks_with_theta():
    # at z = 0 the two-term expansion is sqrt(v0); what remains is the dropped remainder
    thetas = [1 / 1024, 1 / 256, 1 / 64]
    pts = mc_smile(rb(), thetas, [0.0], n_steps=256, n_paths=100_000, seed=9)
    gaps = [p.iv - 0.2 for p in pts]
    ses = [p.stderr_iv for p in pts]
    assert all(g < -3 * s for g, s in zip(gaps, ses))
    mags = [abs(g) for g in gaps]
    assert mags[0] < mags[1] < mags[2]  # points are sorted by increasing theta
    # decay rate in theta of a higher-order term, well above zero
    rate = np.polyfit(np.log(thetas), np.log(mags), 1)[0]
    assert 0.3 < rate < 0.9
