import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cltlab.estimators import AsymptoticVarianceEstimator, MarkovCLT, RateFit


def test_markov_clt():
    est = MarkovCLT().fit(np.array([[0.7, 0.3], [0.4, 0.6]]), np.array([1.0, 0.0]))
    assert est.sigma2_ == pytest.approx(0.45481049562682213)
    assert np.allclose(est.stationary_, [4 / 7, 3 / 7])
    feats = est.transform(np.array([[0.0], [0.1]]))
    assert feats.shape == (2, 4) and feats[0, 2] == pytest.approx(1.0)
    assert clone(est).get_params() == {"gap_min": 1e-6, "n_checked": 200}


def test_not_fitted():
    with pytest.raises(NotFittedError):
        MarkovCLT().transform(np.zeros((1, 1)))
    with pytest.raises(NotFittedError):
        RateFit().predict(np.ones(3))


def test_variance_estimator():
    X = np.random.default_rng(0).choice([-1.0, 1.0], size=(4000, 50))
    est = AsymptoticVarianceEstimator().fit(X)
    assert abs(est.sigma2_ - 1.0) <= 3 * est.stderr_


def test_rate_fit():
    n = 2.0 ** np.arange(6, 13)
    m = RateFit().fit(n.reshape(-1, 1), 0.3 * n**-0.5)
    assert m.slope_ == pytest.approx(-0.5)
    assert np.allclose(m.predict(n), 0.3 * n**-0.5)
    assert m.score(n.reshape(-1, 1), 0.3 * n**-0.5) == pytest.approx(1.0)
