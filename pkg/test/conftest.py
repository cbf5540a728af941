import pathlib

import pytest

from sabayes.model.microarray import EBayesFit, GeneRecord
from sabayes.model.numerics import RngStream

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def swirl_fit():
    return EBayesFit(4.02, 0.052, 8.5)


@pytest.fixture
def gene_6239():
    return GeneRecord("6239", -0.435, 0.0173)


@pytest.fixture
def rng():
    return RngStream(20240517)
