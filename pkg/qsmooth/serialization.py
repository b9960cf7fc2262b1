from __future__ import annotations

import csv
import json
from typing import IO, Any, Iterable, Sequence

import numpy as np
from pydantic import BaseModel

from qsmooth.errors import ConstructionError
from qsmooth.pmf_core import LatticePmf
from qsmooth.quicksort_dist import QnTable
from qsmooth.schemas import SCHEMA_VERSION

_FLOAT = ".17g"


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), _FLOAT)
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


def pmf_to_dict(pmf: LatticePmf) -> dict:
    return {"offset": pmf.offset, "probs": [float(p) for p in pmf.probs]}


def pmf_from_dict(payload: dict) -> LatticePmf:
    try:
        return LatticePmf(int(payload["offset"]), np.asarray(payload["probs"], dtype=np.float64))
    except KeyError as exc:
        raise ConstructionError(f"Serialized pmf is missing field {exc}.") from exc


def write_pmf_csv(pmf: LatticePmf, handle: IO[str]) -> None:
    writer = csv.writer(handle, lineterminator="\r\n")
    writer.writerow(["point", "probability"])
    for k, prob in enumerate(pmf.probs):
        if prob > 0:
            writer.writerow([pmf.offset + k, _fmt(prob)])


def read_pmf_csv(handle: IO[str]) -> LatticePmf:
    reader = csv.reader(handle)
    header = next(reader, None)
    if header != ["point", "probability"]:
        raise ConstructionError(f"Unexpected pmf CSV header {header!r}.")
    rows = [(int(point), float(prob)) for point, prob in reader]
    if not rows:
        raise ConstructionError("Empty pmf CSV.")
    lo = rows[0][0]
    dense = np.zeros(rows[-1][0] - lo + 1, dtype=np.float64)
    for point, prob in rows:
        dense[point - lo] = prob
    return LatticePmf(lo, dense)


def write_rows_csv(
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    handle: IO[str],
    *,
    versioned: bool = False,
) -> None:
    if versioned:
        handle.write(f"# schema_version={SCHEMA_VERSION}\r\n")
    writer = csv.writer(handle, lineterminator="\r\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([_fmt(value) for value in row])


def write_qn_table_csv(table: QnTable, handle: IO[str]) -> None:
    write_rows_csv(
        ["n", "q_n", "variance", "support_min", "support_max"],
        table.summary_rows(),
        handle,
    )


def qn_table_to_dict(table: QnTable) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "n_max": table.n_max,
        "means": list(table.means),
        "pmfs": [pmf_to_dict(pmf) for pmf in table.pmfs],
    }


def dump_json(payload: BaseModel | dict | list) -> str:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_density_csv(d, handle: IO[str]) -> None:
    write_rows_csv(["x", "density"], zip(d.grid.tolist(), d.values.tolist()), handle)


def density_meta_dict(d) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "method": d.method.value,
        "grid": {"lo": float(d.grid[0]), "hi": float(d.grid[-1]), "points": int(d.grid.size)},
        "meta": d.meta.model_dump(mode="json"),
    }
