import os

import pytest

from attrvr.attributes import load_bank, precompute_embeddings
from attrvr.encoders import ToyDualEncoder
from attrvr.harness import make_shapes7

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "attrvr", "fixtures")
BANK_PATH = os.path.abspath(os.path.join(FIXTURES, "shapes7_bank.json"))
RESPONSES_PATH = os.path.abspath(os.path.join(FIXTURES, "shapes7_responses.json"))


@pytest.fixture(scope="session")
def backend():
    return ToyDualEncoder(seed=0)


@pytest.fixture(scope="session")
def bank(backend):
    return precompute_embeddings(load_bank(BANK_PATH), backend)


@pytest.fixture(scope="session")
def shapes7():
    samples, classes = make_shapes7(n_per_class=12, seed=0)
    return samples, classes
