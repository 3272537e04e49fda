import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oppforecast import ingest, synth
from oppforecast.ingest import (
    COLUMNS,
    OpportunityRecord,
    RecordError,
    RecordSet,
    SchemaError,
    Status,
    ValidationError,
    drop_missing,
    parse_records,
    serialize_records,
    split_train_test,
)


def _record(i=1, **kw):
    base = dict(
        opportunity_id=f"OPP-{i}", business_unit="BU-1", opportunity_type="T", project_location="L",
        general_now="G", detailed_now="D", account="A", account_location="AL", sales_lead="S",
        engagement_manager="E", sub_practice="SP", practice="P", group_practice="GP", segment="Energy",
        key_account_energy=True, key_account_healthcare=False, key_account_finance=False,
        status=Status.WON, user_probability=0.4, project_duration=12.0, total_contract_value=1000.0,
    )
    base.update(kw)
    return OpportunityRecord(**base)


def test_full_size_file_parses(tmp_path):
    rs = synth.generate(synth.SynthConfig(n_records=25578, seed=11))
    path = tmp_path / "crm.csv"
    ingest.write_csv(rs, path)
    back = ingest.read_csv(path)
    assert len(back) == 25578
    assert [r.opportunity_id for r in back][:3] == [r.opportunity_id for r in rs][:3]


def test_split_sizes_for_25578_records():
    rs = RecordSet(tuple(_record(i) for i in range(25578)))
    train, test = split_train_test(rs, 0.7, seed=5)
    assert (len(train), len(test)) == (17905, 7673)


def test_drop_fraction_matches_planted_rate():
    rs = synth.generate(synth.SynthConfig(n_records=20000, missing_rate=0.009, seed=4))
    kept, dropped = drop_missing(rs)
    assert 0.008 <= dropped / len(rs) <= 0.010
    assert not any(r.has_missing() for r in kept)


def test_round_trip_preserves_records(small_records):
    assert parse_records(serialize_records(small_records)).records == small_records.records


def test_header_columns_may_be_reordered():
    text = serialize_records(RecordSet((_record(),)))
    header, row = text.strip().split("\n")
    cols, cells = header.split(","), row.split(",")
    order = list(reversed(range(len(cols))))
    shuffled = ",".join(cols[i] for i in order) + "\n" + ",".join(cells[i] for i in order) + "\n"
    assert parse_records(shuffled).records == (_record(),)


def test_missing_column_is_named():
    text = ",".join(c for c in COLUMNS if c != "sales_lead") + "\n"
    with pytest.raises(SchemaError) as err:
        parse_records(text)
    assert "sales_lead" in str(err.value)


def test_bad_cell_reports_row_and_column():
    text = serialize_records(RecordSet((_record(1), _record(2))))
    text = text.replace("1000.0", "lots", 1)
    with pytest.raises(RecordError) as err:
        parse_records(text)
    assert err.value.row == 2 and err.value.column == "total_contract_value"


@pytest.mark.parametrize("column,value", [("segment", "Retail"), ("status", "pending"),
                                          ("user_probability", "1.5"), ("project_duration", "0")])
def test_domain_violations(column, value):
    with pytest.raises(ValueError):
        ingest.coerce_field(column, value)


def test_empty_cell_is_missing():
    assert ingest.coerce_field("account", "") is None
    assert _record(account=None).has_missing()


def test_duplicate_ids_rejected():
    with pytest.raises(ValidationError):
        RecordSet((_record(1), _record(1)))


def test_split_rejects_open_records():
    rs = RecordSet((_record(1), _record(2, status=Status.OPEN)))
    with pytest.raises(ValidationError):
        split_train_test(rs)


@given(st.integers(2, 400), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_split_is_a_deterministic_ordered_partition(n, frac, seed):
    rs = RecordSet(tuple(_record(i) for i in range(n)))
    train, test = split_train_test(rs, frac, seed)
    again = split_train_test(rs, frac, seed)
    assert again[0].records == train.records
    ids = [r.opportunity_id for r in rs]
    tr = [r.opportunity_id for r in train]
    te = [r.opportunity_id for r in test]
    assert sorted(tr + te) == sorted(ids)
    assert not set(tr) & set(te)
    assert tr == [i for i in ids if i in set(tr)]
    assert len(train) == int(frac * n + 0.5)


def test_labels_and_status_views():
    rs = RecordSet((_record(1), _record(2, status=Status.LOST), _record(3, status=Status.OPEN)))
    assert len(rs.closed()) == 2 and len(rs.open()) == 1
    assert rs.closed().labels().tolist() == [1, 0]
    assert rs.subset(["OPP-3"])[0].status is Status.OPEN


def test_bytes_and_file_sources():
    text = serialize_records(RecordSet((_record(),)))
    assert len(parse_records(text.encode())) == 1
    assert len(parse_records(io.BytesIO(text.encode()))) == 1
