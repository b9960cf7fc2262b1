import io
import json
import os
import sys

import numpy as np
import pytest

# Add repo root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from qsmooth.errors import ConstructionError
from qsmooth.limit_density import density_from_pmf
from qsmooth.quicksort_dist import exact_pmf, qn_table
from qsmooth.schemas import GridSpec
from qsmooth.serialization import (
    density_meta_dict,
    dump_json,
    pmf_from_dict,
    pmf_to_dict,
    qn_table_to_dict,
    read_pmf_csv,
    write_density_csv,
    write_pmf_csv,
    write_rows_csv,
)


def test_pmf_csv_is_exact_and_crlf():
    """Pmf CSV uses CRLF and round-trips the weights bit for bit."""
    pmf = exact_pmf(7)
    buffer = io.StringIO(newline="")
    write_pmf_csv(pmf, buffer)
    text = buffer.getvalue()
    assert text.startswith("point,probability\r\n")
    restored = read_pmf_csv(io.StringIO(text, newline=""))
    assert restored.offset == pmf.offset
    assert np.array_equal(restored.probs, pmf.probs)


def test_read_pmf_csv_rejects_bad_input():
    """Wrong headers and empty bodies are rejected."""
    with pytest.raises(ConstructionError):
        read_pmf_csv(io.StringIO("x,p\r\n1,1\r\n"))
    with pytest.raises(ConstructionError):
        read_pmf_csv(io.StringIO("point,probability\r\n"))


def test_pmf_dict():
    """The JSON pmf form keeps offset and weights."""
    pmf = exact_pmf(4)
    payload = pmf_to_dict(pmf)
    assert payload["offset"] == pmf.offset
    assert pmf_from_dict(payload).probs.tolist() == pmf.probs.tolist()
    with pytest.raises(ConstructionError):
        pmf_from_dict({"probs": [1.0]})


def test_versioned_rows():
    """Versioned CSV rows start with the schema line and encode booleans as 0/1."""
    buffer = io.StringIO(newline="")
    write_rows_csv(["a", "b", "flag"], [(1, 0.1, True), (2, 0.25, False)], buffer, versioned=True)
    assert buffer.getvalue().split("\r\n") == [
        "# schema_version=1",
        "a,b,flag",
        "1,0.10000000000000001,1",
        "2,0.25,0",
        "",
    ]


def test_dump_json_is_stable():
    """JSON output has sorted keys and a trailing newline."""
    text = dump_json({"b": 1, "a": [1, 2]})
    assert text.endswith("}\n")
    assert list(json.loads(text)) == ["a", "b"]
    assert text.index('"a"') < text.index('"b"')


def test_qn_table_dict():
    """The Q_n table dict carries every pmf and the means."""
    payload = qn_table_to_dict(qn_table(5))
    assert payload["schema_version"] == 1
    assert len(payload["pmfs"]) == 6
    assert payload["means"][2] == pytest.approx(1.0)


def test_density_outputs():
    """Density CSV and metadata sidecar describe the grid and method."""
    d = density_from_pmf(exact_pmf(32), 32, GridSpec(lo=-2.0, hi=4.0, step=0.01), bandwidth=0.05)
    buffer = io.StringIO(newline="")
    write_density_csv(d, buffer)
    lines = buffer.getvalue().split("\r\n")
    assert lines[0] == "x,density"
    assert len(lines) == d.grid.size + 2
    meta = density_meta_dict(d)
    assert meta["method"] == "exact_kde"
    assert meta["grid"]["points"] == d.grid.size
    assert meta["meta"]["n"] == 32
