import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr
from scipy.stats import binom

from cltlab.catalog import random_chain
from cltlab.chain import build_chain
from cltlab.errors import (
    BudgetExceeded,
    DegenerateVariance,
    InputError,
    NoLattice,
    NonPositiveDistance,
    SpectralGapLost,
    TooFewSamples,
)
from cltlab.poisson import solve_poisson
from cltlab.rates import (
    LatticeDistribution,
    berry_esseen_integral,
    chain_rate_report,
    charfn_S,
    cor41_ratio,
    dkw_epsilon,
    empirical_kolmogorov,
    exact_sn_distribution,
    kolmogorov_distance,
    rate_slope_fit,
)


def test_charfn_basics(two):
    chain, _ = two
    assert charfn_S(chain, 0.0, 30) == 1.0
    t = 0.4
    assert charfn_S(chain, t, 1) == pytest.approx(chain.stationary @ np.exp(1j * t * chain.observable), abs=1e-15)
    assert abs(charfn_S(chain, 0.3, 50) - exact_sn_distribution(chain, 50).charfn(0.3)) <= 1e-10


def test_lattice_law_basics(two, coin):
    chain, _ = two
    law = exact_sn_distribution(chain, 1)
    nz = law.probs > 0
    assert np.allclose(np.sort(law.atoms[nz]), np.sort(chain.observable))
    assert abs(exact_sn_distribution(chain, 2000).probs.sum() - 1) <= 1e-10
    c, _ = coin
    law = exact_sn_distribution(c, 10)
    assert np.max(np.abs(law.probs - binom.pmf(np.arange(11), 10, 0.5))) <= 1e-15
    assert law.offset == pytest.approx(-10) and law.step == pytest.approx(2)


def test_lattice_errors(two):
    chain, _ = two
    with pytest.raises(BudgetExceeded):
        exact_sn_distribution(chain, 1000, budget=100)
    irr = build_chain([[0.5, 0.5], [0.5, 0.5]], [0.0, 1.0])
    irr3 = build_chain(np.full((3, 3), 1 / 3), [0.0, 1.0, math.sqrt(2)])
    assert irr.lattice is not None
    with pytest.raises(NoLattice):
        exact_sn_distribution(irr3, 3)


def test_kolmogorov_hand_value(coin):
    chain, _ = coin
    d = kolmogorov_distance(exact_sn_distribution(chain, 1), 1.0)
    assert d == pytest.approx(ndtr(1.0) - 0.5, abs=1e-15)
    assert d == pytest.approx(0.341345, abs=1e-6)
    with pytest.raises(DegenerateVariance):
        kolmogorov_distance(exact_sn_distribution(chain, 1), 0.0)


def test_kolmogorov_zero_atom_invariance():
    law = LatticeDistribution(offset=-1.0, step=1.0, probs=np.array([0.5, 0.0, 0.5]), n=1)
    coarse = LatticeDistribution(offset=-1.0, step=2.0, probs=np.array([0.5, 0.5]), n=1)
    assert kolmogorov_distance(law, 1.0) == kolmogorov_distance(coarse, 1.0)


def test_kolmogorov_fine_normal_lattice():
    prev = 1.0
    for step in (0.5, 0.1, 0.02):
        x = np.arange(-8, 8 + step / 2, step)
        p = ndtr(x + step / 2) - ndtr(x - step / 2)
        law = LatticeDistribution(offset=x[0], step=step, probs=p / p.sum(), n=1)
        d = kolmogorov_distance(law, 1.0)
        assert d < prev
        prev = d
    assert prev < 0.01


def test_empirical_kolmogorov():
    assert dkw_epsilon(5000, 0.05) == pytest.approx(math.sqrt(math.log(40) / 10000), rel=1e-15)
    assert dkw_epsilon(5000, 0.05) == pytest.approx(0.0192065, abs=1e-6)
    assert empirical_kolmogorov(np.zeros(100))[0] == 0.5
    d, eps = empirical_kolmogorov(np.random.default_rng(1).standard_normal(10**5))
    assert d <= eps
    with pytest.raises(TooFewSamples):
        empirical_kolmogorov(np.zeros(10))
    with pytest.raises(InputError):
        empirical_kolmogorov(np.zeros(200), 1.5)


def test_empirical_matches_exact_on_sorted_sample():
    y = np.array([-1.0, 0.0, 0.0, 2.0] * 50)
    law = LatticeDistribution(offset=-1.0, step=1.0, probs=np.array([0.25, 0.5, 0.0, 0.25]), n=1)
    assert empirical_kolmogorov(y)[0] == pytest.approx(kolmogorov_distance(law, 1.0), abs=1e-15)


def test_slope_fit():
    n = 2.0 ** np.arange(6, 13)
    s, se, _ = rate_slope_fit(n, n**-0.5)
    assert s == pytest.approx(-0.5, abs=1e-12) and se <= 1e-12
    assert rate_slope_fit(n, np.full(n.size, 0.3))[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NonPositiveDistance):
        rate_slope_fit(n, np.r_[0.0, n[1:] ** -0.5])
    with pytest.raises(InputError):
        rate_slope_fit(n[:3], n[:3] ** -0.5)


def test_cor41(two, coin):
    chain, sol = two
    assert cor41_ratio(chain, sol, [64, 256], 16).non_explosive()
    c, cs = coin
    tab = cor41_ratio(c, cs, [1], 32)
    ts = tab.t_grids[0]
    assert tab.ratios[0] == pytest.approx(np.max(np.abs(np.cos(ts) - np.exp(-ts**2 / 2)) / ts), rel=1e-12)


def test_cor41_small_t(two):
    chain, sol = two
    n = 64
    t = 1e-4
    val = charfn_S(chain, t / (sol.sigma * math.sqrt(n)), n)
    assert abs(val - math.exp(-t * t / 2)) * math.sqrt(n) / t < 1e-3


def test_berry_esseen_iid(coin):
    chain, sol = coin
    r = berry_esseen_integral(chain, sol, n=64)
    assert r.J_n <= 1e-12 and r.K_n <= 1e-12
    assert abs(r.A_n - r.I_n) <= 1e-12
    assert r.residual <= 1e-9


def test_berry_esseen_two_state(two):
    chain, sol = two
    vals = []
    for n in (64, 256, 1024):
        r = berry_esseen_integral(chain, sol, n=n)
        assert r.residual <= 1e-9
        assert r.A_n <= r.bound + 1e-12
        vals.append(r.A_n * math.sqrt(n))
    assert max(vals) <= 1.5 * min(vals)


def test_berry_esseen_gap_lost():
    chain = build_chain([[0.5, 0.5], [0.5, 0.5]], [0.0, 1.0])
    sol = solve_poisson(chain)
    # at u = 2 pi the twisted kernel is Q again, but at u = pi both eigenvalues vanish
    with pytest.raises(SpectralGapLost):
        berry_esseen_integral(chain, sol, alpha=math.pi / sol.sigma * 2, n=1, panels=64)


def test_rate_report_fallback(two):
    chain, sol = two
    rep = chain_rate_report(chain, sol, [64, 128], budget=10**8)
    assert rep.method == "exact-DP" and math.isnan(rep.slope)
    rep = chain_rate_report(chain, sol, [64, 128, 256, 512], budget=10, paths=500, master_seed=3)
    assert rep.method == "mc-dkw" and all(r["band_high"] > r["band_low"] for r in rep.rows())


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10**6), st.floats(-2, 2), st.integers(1, 40))
def test_charfn_vs_dp_property(d, seed, t, n):
    chain = random_chain(d, seed=seed, lattice=True)
    if chain.lattice is None or chain.lattice.span == 0:
        return
    assert abs(charfn_S(chain, t, n) - exact_sn_distribution(chain, n).charfn(t)) <= 1e-9
