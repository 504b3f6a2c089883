import json
import os

import numpy as np
import pytest

from sepsiscds.cohort import (FeatureSchema, ingest_events, read_demographics_csv,
                              read_events_csv)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def fixture_schema():
    return FeatureSchema.load(os.path.join(DATA_DIR, "fixture_schema.json"))


@pytest.fixture(scope="session")
def fixture_cohort(fixture_schema):
    demo = read_demographics_csv(os.path.join(DATA_DIR, "fixture_demographics.csv"))
    events = read_events_csv(os.path.join(DATA_DIR, "fixture_events.csv"))
    cohort, report = ingest_events(events, fixture_schema, demo)
    return cohort, report


@pytest.fixture(scope="session")
def oracle_mdp():
    from sepsiscds.simgen import make_oracle_mdp
    return make_oracle_mdp(n_states=6, seed=7, separation=8.0)


@pytest.fixture(scope="session")
def oracle_cohort(oracle_mdp):
    from sepsiscds.simgen import sample_cohort
    return sample_cohort(oracle_mdp, 3000, seed=11, return_latent=True)
