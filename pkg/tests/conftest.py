import pytest
from helpers import bpe_vocab, char_vocab, doc_of, ontology_of


@pytest.fixture(scope="session")
def ascii_char_vocab():
    return char_vocab()


@pytest.fixture(scope="session")
def ascii_bpe_vocab():
    return bpe_vocab()


@pytest.fixture()
def small_ontology():
    return ontology_of("Attack", "Demonstrate", "Life:Be-Born")


@pytest.fixture()
def small_doc():
    return doc_of("The demonstration against the war turned violent.")
