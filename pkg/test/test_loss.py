import numpy as np
import pytest
from scipy import stats

from sabayes.model.distributions import Flat, MeanAndVariance, Normal, NormalLocation
from sabayes.model.errors import ConfigurationError, UnsupportedCombinationError
from sabayes.model.loss import Directional, Membership, TwoGroupNull, ZeroLoss, named_loss, posterior_loss_curve


def test_directional_values():
    loss = Directional()
    theta = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(loss.values(theta, 1.0, False), [1.0, 0.5, 0.0])
    np.testing.assert_array_equal(loss.values(theta, -1.0, False), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(loss.values(theta, 1.0, True), [1.0, 1.0, 0.0])
    # y = 0 is a positive call
    np.testing.assert_array_equal(loss.values(theta, 0.0, False), [1.0, 0.5, 0.0])


def test_membership_values():
    loss = Membership([[0, 1], [2, 3]])
    theta = np.array([0.5, 1.0, 1.5, 2.5])
    np.testing.assert_array_equal(loss.values(theta, 0.0, False), [0.0, 0.5, 1.0, 0.0])
    np.testing.assert_array_equal(loss.values(theta, 0.0, True), [0.0, 1.0, 1.0, 0.0])
    assert loss.to_dict() == { "type": "membership", "set": [[0.0, 1.0], [2.0, 3.0]] }


def test_null_and_zero_losses():
    theta = np.array([0.0, 1.0])
    np.testing.assert_array_equal(TwoGroupNull().values(theta, 3.0, np.array([True, False])), [1.0, 0.0])
    np.testing.assert_array_equal(TwoGroupNull().values(theta, 3.0, False), [0.0, 0.0])
    np.testing.assert_array_equal(ZeroLoss().values(theta, 3.0, False), [0.0, 0.0])


def test_named_losses():
    assert named_loss("directional") == Directional()
    assert named_loss({ "type": "two_group_null" }) == TwoGroupNull()
    assert named_loss({ "type": "membership", "set": [[-1, 1]] }) == Membership([(-1.0, 1.0)])
    assert named_loss(ZeroLoss().to_dict()) == ZeroLoss()
    with pytest.raises(ConfigurationError):
        named_loss({ "type": "membership" })
    with pytest.raises(ConfigurationError):
        named_loss("squared")


def test_directional_curve_under_a_normal_prior():
    # theta | y ~ N(y / 2, 1 / 2)
    ys = np.array([-2.0, 0.5, 3.0])
    rho = posterior_loss_curve(Normal(0.0, 1.0), NormalLocation(1.0), Directional(), ys)
    np.testing.assert_allclose(rho, stats.norm.cdf(-np.abs(ys) / np.sqrt(2)), atol=1e-3)
    assert posterior_loss_curve(Normal(0.0, 1.0), NormalLocation(1.0), Directional(), 0.0)[0] == \
        pytest.approx(0.5, abs=1e-3)


def test_posterior_loss_curve_inputs():
    with pytest.raises(UnsupportedCombinationError):
        posterior_loss_curve(Normal(), MeanAndVariance(4, 3.0), Directional(), [1.0])
    with pytest.raises(ConfigurationError):
        posterior_loss_curve(Flat(), NormalLocation(1.0), Directional(), [1.0])
