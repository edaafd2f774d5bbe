import pytest

from bubblesim.catalog import generate_fixture


@pytest.fixture(scope="session")
def small_catalog():
    # 5 top-level categories, 10 level-2, 30 level-3, 200 items
    return generate_fixture(seed=3, n_items=200, shape=(5, 2, 3))


@pytest.fixture(scope="session")
def paper_shaped_catalog():
    # matches the real dataset's scale: 21/55/232 categories over 4000 items
    return generate_fixture(seed=7, n_items=4000)
