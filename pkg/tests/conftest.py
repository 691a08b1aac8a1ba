import pytest

from qillum.chain import ChainParams
from qillum.constants import BandParams


@pytest.fixture
def chain():
    return ChainParams.reference()


@pytest.fixture
def band():
    return BandParams.reference()
