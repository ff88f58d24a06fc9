import pathlib

import pytest

from semcache.schema import load_catalog

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

HEALTH_CATALOG = """
class 'Patient referral service' {
    Patient-ID: integer,
    Paddress: text,
    Ptelephone: text,
    Pfirst-name: text,
    Plast-name: text,
    PAge: integer,
    Pinsurance-Type: text ;
    key(Patient-ID)
}

class 'Scheduling Services' {
    Schedule-ID: integer,
    Sdate: date,
    Stime: text,
    Slocation: text ;
    key(Schedule-ID)
}
"""


@pytest.fixture(scope="session")
def catalog():
    return load_catalog(HEALTH_CATALOG)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES
