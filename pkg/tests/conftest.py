import numpy as np
import pytest

from peerimpact.records import PublicationRecord, RecordSet


def make_record(pub_id="P1", report_length=100, citations=3, pub_year=2015,
                open_access=False, n_funders=1, n_countries=1,
                disciplines=("LS7",), journal_impact=1.0, doc_type=None):
    return PublicationRecord(
        pub_id=pub_id,
        report_length=report_length,
        citations=citations,
        pub_year=pub_year,
        open_access=open_access,
        n_funders=n_funders,
        n_countries=n_countries,
        disciplines=frozenset(disciplines),
        journal_impact=journal_impact,
        doc_type=doc_type,
    )


@pytest.fixture
def record_factory():
    return make_record


def random_recordset(rng, n, years=(2012, 2013, 2014), labels=("LS1", "LS7", "PE4")):
    records = []
    for i in range(n):
        records.append(
            make_record(
                pub_id=f"R{i:05d}",
                report_length=int(rng.integers(10, 3000)),
                citations=int(rng.integers(0, 40)),
                pub_year=int(rng.choice(years)),
                open_access=bool(rng.integers(0, 2)),
                n_funders=int(rng.integers(0, 5)),
                n_countries=int(rng.integers(1, 5)),
                disciplines=(str(rng.choice(labels)),),
                journal_impact=float(rng.uniform(0.1, 4.0)),
            )
        )
    return RecordSet(records=tuple(records))


@pytest.fixture
def recordset_factory():
    return random_recordset
