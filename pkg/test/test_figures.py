import numpy as np
import pytest

from sabayes.model.errors import ConfigurationError
from sabayes.model.figures import REFERENCE_FIT, figure
from sabayes.model.microarray import GeneRecord


def test_selection_intervals(rng):
    frame = figure(1, rng, m=20_000)
    assert len(frame) > 0
    # FCR-adjusted intervals contain the marginal ones
    assert (frame["fcr_lo"] <= frame["marginal_lo"]).all()
    assert (frame["fcr_hi"] >= frame["marginal_hi"]).all()


def test_truncated_sampling(rng):
    frame = figure(2, rng, n=200)
    assert set(frame["kind"]) == { "random", "mixed", "fixed" }


def test_posterior_densities():
    frame = figure(3)
    assert list(frame.columns) == ["y", "theta", "unadjusted", "random", "flat"]
    first = frame[frame["y"] == 3.40]
    assert first["theta"].iloc[first["unadjusted"].argmax()] == pytest.approx(3.40, abs=0.01)
    assert first["theta"].iloc[first["flat"].argmax()] == pytest.approx(0.74, abs=0.02)


def test_credible_intervals(rng):
    frame = figure(4, rng, m=5000)
    assert (frame["y"] > 3.111).all()
    assert (frame["random_lo"] < frame["random_hi"]).all()
    assert (frame["flat_lo"] < frame["flat_hi"]).all()


def test_selection_regions():
    genes = [GeneRecord("a", 0.3, 0.04), GeneRecord("b", -0.1, 0.2)]
    frame = figure(5, records=genes, points=20)
    assert set(frame["curve"]) == { "t>4.479", "t>2.64", "rho<0.05", "rho<0.088", "genes" }
    assert frame[frame["curve"] == "genes"]["id"].tolist() == ["a", "b"]
    upper = frame[(frame["curve"] == "t>2.64") & (frame["ybar"] > 0)]
    edge = 2.64 * np.sqrt(REFERENCE_FIT.moderated_variance(upper["s"].to_numpy() ** 2, 3.0) / 4)
    np.testing.assert_allclose(upper["ybar"], edge)


def test_gene_posteriors():
    frame = figure(6)
    assert list(frame.columns) == ["mu", "unadjusted", "ebayes", "flat_t4.479", "flat_t2.64"]
    assert (frame.drop(columns="mu") >= 0).all().all()


@pytest.mark.parametrize("number", [0, 7])
def test_unknown_figure(number):
    with pytest.raises(ConfigurationError):
        figure(number)


@pytest.mark.parametrize("number", [1, 2, 4])
def test_simulated_figures_need_a_generator(number):
    with pytest.raises(ConfigurationError):
        figure(number)
