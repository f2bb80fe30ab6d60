import numpy as np
import pytest
from hypothesis import given, strategies as st

from persyst.properties import PropertyKind
from persyst.quantiles import QuantileSummary, exact_summary
from persyst.store import (
    CorruptLine,
    DuplicateKey,
    InvalidRecord,
    JobRecord,
    JobTable,
    ParseError,
    PropertyStore,
    StoreRecord,
    decode_line,
    encode_line,
    format_real,
    read_jobs,
    write_jobs,
)


def rec(ts=600, job="J1", kind=PropertyKind.CPI, summary=None):
    return StoreRecord(ts, job, kind, summary or QuantileSummary.constant(2.0, 16))


def test_constant_line():
    line = encode_line(rec())
    assert line == "600\tJ1\tCPI\t16\t" + "\t".join(["2.00000000e0"] * 11) + "\n"


@pytest.mark.parametrize("x,text", [
    (2.0, "2.00000000e0"), (-0.000123456789, "-1.23456789e-4"), (3.2e9, "3.20000000e9"),
    (0.0, "0.00000000e0"), (1e100, "1.00000000e100"),
])
def test_format_real(x, text):
    assert format_real(x) == text


def test_wrong_field_count():
    fields = encode_line(rec()).rstrip("\n").split("\t")
    with pytest.raises(ParseError):
        decode_line("\t".join(fields[:12]))


@pytest.mark.parametrize("index,bad", [(0, "x"), (2, "IPC"), (3, "1.5"), (7, "nan"), (9, "abc")])
def test_parse_error_field_index(index, bad):
    fields = encode_line(rec()).rstrip("\n").split("\t")
    fields[index] = bad
    with pytest.raises(ParseError) as err:
        decode_line("\t".join(fields))
    assert err.value.field_index == index


def test_non_monotone_line_is_parse_error():
    fields = encode_line(rec()).rstrip("\n").split("\t")
    fields[8] = "9.0e0"
    with pytest.raises(ParseError):
        decode_line("\t".join(fields))


summaries = st.lists(st.floats(-1e12, 1e12, allow_nan=False), min_size=1, max_size=50).map(exact_summary)
records = st.builds(
    StoreRecord,
    st.integers(0, 2**40),
    st.text("ABCJ0123456789_-.", min_size=1, max_size=12),
    st.sampled_from(list(PropertyKind)),
    summaries,
)


@given(records)
def test_round_trip_property(r):
    line = encode_line(r)
    back = decode_line(line)
    assert encode_line(back) == line
    assert decode_line(encode_line(back)) == back
    assert back.key == r.key and back.summary.count == r.summary.count
    np.testing.assert_allclose(back.summary.support, r.summary.support, rtol=5e-9, atol=0)


def test_append_and_query(tmp_path):
    path = tmp_path / "properties.tsv"
    store = PropertyStore(path)
    assert store.query() == []
    store.append(rec(1200))
    store.append(rec(600))
    store.append(rec(600, kind=PropertyKind.FLOPS))
    store.append(rec(600, job="J2"))
    assert len(path.read_text().splitlines()) == 4
    got = store.query("J1", PropertyKind.CPI)
    assert [r.cycle_ts for r in got] == [600, 1200]
    assert len(store.query("J1")) == 3
    assert [r.job_id for r in store.query(time_range=(600, 600))] == ["J1", "J1", "J2"]
    with pytest.raises(DuplicateKey):
        store.append(rec(600))
    store.close()
    with pytest.raises(DuplicateKey):
        PropertyStore(path).append(rec(1200))


def test_invalid_record(tmp_path):
    store = PropertyStore(tmp_path / "p.tsv")
    bad = QuantileSummary.constant(1.0)
    object.__setattr__(bad, "deciles", (1, 2, 3, 4, 0.5, 6, 7, 8, 9))
    with pytest.raises(InvalidRecord):
        store.append(rec(summary=bad))
    with pytest.raises(InvalidRecord):
        store.append(StoreRecord(0, "J\t1", PropertyKind.CPI, QuantileSummary.constant(1.0)))
    assert not (tmp_path / "p.tsv").exists()


def test_corrupt_line_strict_and_lenient(tmp_path):
    path = tmp_path / "p.tsv"
    path.write_text(encode_line(rec(0)) + "garbage\n" + encode_line(rec(600)))
    with pytest.raises(CorruptLine) as err:
        PropertyStore(path)
    assert err.value.lineno == 2
    lenient = PropertyStore(path, strict=False)
    assert [r.cycle_ts for r in lenient.query()] == [0, 600]
    with pytest.raises(CorruptLine):
        lenient.query(strict=True)


def test_partial_trailing_line_invisible(tmp_path):
    path = tmp_path / "p.tsv"
    path.write_text(encode_line(rec(0)) + encode_line(rec(600))[:20])
    assert [r.cycle_ts for r in PropertyStore(path).query()] == [0]


def test_jobs_file_round_trip(tmp_path):
    jobs = [JobRecord("J1", "geo", "seissol_opt", 20, (0, 1), 0, 900),
            JobRecord("J2", "astro", "gadget", 16, (2,), 60, 7000)]
    path = tmp_path / "jobs.tsv"
    write_jobs(path, jobs)
    lines = path.read_text().splitlines()
    assert lines[0] == "job_id\towner_group\tapp_tag\tcores\tnodes\tstart_ts\tend_ts"
    assert lines[1] == "J1\tgeo\tseissol_opt\t20\t0,1\t0\t900"
    assert read_jobs(path) == jobs


def test_job_record_invariants():
    with pytest.raises(ValueError):
        JobRecord("J1", "g", "a", 4, (0,), 10, 10)
    with pytest.raises(ValueError):
        JobTable([JobRecord("J1", "g", "a", 40, (0, 1), 0, 10)], 16)


def test_job_table_layout_shares_nodes():
    jobs = [JobRecord("A", "g", "x", 8, (0,), 0, 100), JobRecord("B", "g", "x", 8, (0,), 10, 100),
            JobRecord("C", "g", "x", 20, (1, 2), 0, 50)]
    table = JobTable(jobs, 16)
    assert table.cores_on(0, 20) == {"A": list(range(8)), "B": list(range(8, 16))}
    assert table.cores_on(2, 20) == {"C": list(range(4))}
    assert table.cores_on(1, 50) == {}
    assert table.cores_on(0, 5) == {"A": list(range(8))}
