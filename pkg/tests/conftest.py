import numpy as np
import pytest

from cfkit.data import (Dataset, FeatureSchema, FeatureSpec, Instance,
                        make_blobs, train_test_split)
from cfkit.models import ForestParams, train_random_forest


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(400, 4, seed=3)


@pytest.fixture(scope="session")
def blobs_split(blobs):
    return train_test_split(blobs, 0.8, 7)


@pytest.fixture(scope="session")
def blobs_model(blobs_split):
    train, _ = blobs_split
    return train_random_forest(train, ForestParams(n_trees=30, max_depth=6), seed=1)


@pytest.fixture(scope="session")
def mixed_schema():
    # 4 numeric + 2 categorical features
    return FeatureSchema((
        FeatureSpec("n0", "numeric", bounds=(0.0, 10.0)),
        FeatureSpec("n1", "numeric", bounds=(-5.0, 5.0)),
        FeatureSpec("n2", "numeric", bounds=(0.0, 1.0)),
        FeatureSpec("n3", "numeric", bounds=(100.0, 200.0)),
        FeatureSpec("c0", "categorical", categories=("a", "b", "c")),
        FeatureSpec("c1", "categorical", categories=("x", "y")),
    ), "label")


def random_mixed_instance(schema: FeatureSchema, rng: np.random.Generator) -> Instance:
    vals = []
    for spec in schema.features:
        if spec.is_numeric:
            lo, hi = spec.bounds
            vals.append(rng.uniform(lo, hi))
        else:
            vals.append(float(rng.integers(len(spec.categories))))
    return Instance(np.array(vals))


@pytest.fixture(scope="session")
def mixed_dataset(mixed_schema):
    # label depends on n0 + n1 so a forest can learn it
    rng = np.random.default_rng(12)
    rows = [random_mixed_instance(mixed_schema, rng).values for _ in range(300)]
    X = np.stack(rows)
    y = ((X[:, 0] / 10.0 + (X[:, 1] + 5.0) / 10.0) > 1.0).astype(np.int64)
    return Dataset(mixed_schema, X, y)
