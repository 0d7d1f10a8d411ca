import math

import numpy as np
import pytest

from csv_io import (RECORD_COLUMNS, format_value, load_dataset, read_records, save_dataset, sidecar_path,
                    write_records, write_rows)
from envs import make_random_game, random_pair
from imitation import collect_trajectories


def _record(**kw):
    row = {"env": "gw", "algorithm": "bc", "seed": 0, "expert_queries": 16, "nash_gap": 0.25, "wall_ms": 0.0}
    row.update(kw)
    return row


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(math.inf) == "inf"
    assert format_value(True) == "true"
    assert format_value(np.int64(3)) == 3
    assert format_value(np.float64(1 / 3)) == repr(1 / 3)


def test_records_written_with_lf_and_header(tmp_path):
    p = tmp_path / "out" / "records.csv"
    write_records(str(p), [_record(), _record(seed=1, nash_gap=1 / 3)])
    raw = p.read_bytes()
    assert b"\r\n" not in raw
    assert raw.decode("utf-8").splitlines()[0] == ",".join(RECORD_COLUMNS)


def test_read_records_types(tmp_path):
    p = tmp_path / "records.csv"
    write_records(str(p), [_record(nash_gap=1 / 3)])
    rows = read_records(str(p))
    assert rows == [{"env": "gw", "algorithm": "bc", "seed": 0, "expert_queries": 16, "nash_gap": 1 / 3,
                     "wall_ms": 0.0}]


def test_read_records_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_records(str(tmp_path / "nope.csv"))


def test_read_records_missing_column(tmp_path):
    p = tmp_path / "records.csv"
    p.write_text("env,algorithm,seed\nx,bc,0\n", encoding="utf-8")
    with pytest.raises(KeyError):
        read_records(str(p))


def test_read_records_malformed_row(tmp_path):
    p = tmp_path / "records.csv"
    p.write_text("env,algorithm,seed,expert_queries,nash_gap\nx,bc,zero,4,0.1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="Row 1"):
        read_records(str(p))


def test_wall_ms_is_optional(tmp_path):
    p = tmp_path / "records.csv"
    p.write_text("env,algorithm,seed,expert_queries,nash_gap\nx,bc,0,4,0.1\n", encoding="utf-8")
    assert read_records(str(p))[0]["wall_ms"] == 0.0


def test_write_rows_keeps_column_order(tmp_path):
    p = tmp_path / "rows.csv"
    write_rows(str(p), ["b", "a"], [{"a": 1, "b": 2, "c": 3}])
    assert p.read_text(encoding="utf-8") == "b,a\n2,1\n"


def test_dataset_save_and_load(tmp_path):
    game = make_random_game(3, 2, 2, 2, seed=0)
    data = collect_trajectories(game, random_pair(game, np.random.default_rng(0)), 12, rng=8)
    p = tmp_path / "data.csv"
    save_dataset(data, str(p))
    assert (tmp_path / "data.json").exists()
    loaded = load_dataset(str(p))
    np.testing.assert_array_equal(loaded.s, data.s)
    np.testing.assert_array_equal(loaded.b, data.b)
    assert (loaded.queries_p1, loaded.queries_p2, loaded.rng_seed) == (24, 24, 8)


def test_dataset_needs_sidecar(tmp_path):
    p = tmp_path / "data.csv"
    p.write_text("h,s,a,b\n0,0,0,0\n", encoding="utf-8")
    with pytest.raises(FileNotFoundError):
        load_dataset(str(p))


def test_sidecar_path():
    assert sidecar_path("results/d.csv") == "results/d.json"
