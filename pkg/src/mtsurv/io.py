"""CSV schemas, wide-to-long reshaping, and config file helpers.

Wide schema:  id,rf,rfi,os,osi,<covariates...>   (rf = intermediate-event
time and indicator, os = terminal time and indicator). Long schema:
id,start,stop,from,to,status,trans,<covariates...>. All CSVs are UTF-8 with
a header row, '.' decimal separator, times in years; floats are written
with 17 significant digits so write-then-read round trips are lossless.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

FLOAT_FORMAT = "%.17g"

WIDE_COLUMNS = ["id", "rf", "rfi", "os", "osi"]
LONG_COLUMNS = ["id", "start", "stop", "from", "to", "status", "trans"]


def write_csv(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_csv(path) -> pd.DataFrame:
    # round_trip parsing: the default float parser can be one ulp off on
    # 17-digit values, which would break write-then-read losslessness.
    return pd.read_csv(path, float_precision="round_trip")


def read_wide_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in WIDE_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"wide CSV {path} is missing columns {missing}")
    return df


def read_long_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in LONG_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"long CSV {path} is missing columns {missing}")
    return df


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def reshape_wide_to_long(wide: pd.DataFrame, covariate_names=None) -> pd.DataFrame:
    """Expand one wide row per subject into 2 or 3 transition rows.

    Non-relapsers contribute censored rows for transitions 1 and 2 (the
    transition-2 row runs to the terminal time); relapsers add a third row
    at risk from the relapse time. Invalid rows are rejected with their
    positions rather than silently dropped, including the instantaneous
    relapse-death case rf == os with rfi = 1, whose transition-3 row would
    have zero length.
    """
    missing = [c for c in WIDE_COLUMNS if c not in wide.columns]
    if missing:
        raise DataError(f"wide data is missing columns {missing}")
    if covariate_names is None:
        covariate_names = [c for c in wide.columns if c not in WIDE_COLUMNS]
    else:
        covariate_names = list(covariate_names)
        absent = [c for c in covariate_names if c not in wide.columns]
        if absent:
            raise DataError(f"wide data is missing covariate columns {absent}")

    ids = wide["id"].to_numpy()
    rf = wide["rf"].to_numpy(dtype=float)
    rfi = wide["rfi"].to_numpy()
    os_t = wide["os"].to_numpy(dtype=float)
    osi = wide["osi"].to_numpy()

    def reject(mask, why):
        if np.any(mask):
            rows = np.flatnonzero(mask)[:10].tolist()
            raise DataError(f"{why} at input rows {rows}")

    reject(~np.isin(rfi, (0, 1)) | ~np.isin(osi, (0, 1)), "indicators must be 0 or 1")
    reject((rf < 0) | (os_t < 0), "negative times")
    reject(rf > os_t, "rf > os")
    reject(rf <= 0, "rf must be positive (zero-length transition-1 interval)")
    reject((rfi == 1) & (rf == os_t), "relapse and terminal event at the same time")
    unique, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        dup = unique[counts > 1][:10].tolist()
        raise DataError(f"duplicate subject ids {dup}")

    relapse = rfi == 1
    n_rows = 2 * len(wide) + int(relapse.sum())
    reps = np.where(relapse, 3, 2)
    idx = np.repeat(np.arange(len(wide)), reps)
    # Row pattern per subject: trans 1, trans 2, then trans 3 for relapsers.
    local = np.concatenate([np.arange(k) for k in reps]) if len(wide) else np.array([], int)
    trans = local + 1

    start = np.where(trans == 3, rf[idx], 0.0)
    stop = np.where(
        trans == 1, rf[idx], np.where(trans == 2, np.where(relapse[idx], rf[idx], os_t[idx]), os_t[idx])
    )
    status = np.select(
        [trans == 1, trans == 2],
        [rfi[idx], np.where(relapse[idx], 0, osi[idx])],
        default=osi[idx],
    )
    from_state = np.where(trans == 3, 2, 1)
    to_state = np.where(trans == 1, 2, 3)

    long = pd.DataFrame(
        {
            "id": ids[idx],
            "start": start,
            "stop": stop,
            "from": from_state,
            "to": to_state,
            "status": status.astype(int),
            "trans": trans.astype(int),
        }
    )
    for c in covariate_names:
        long[c] = wide[c].to_numpy()[idx]
    assert n_rows == len(long)
    return long
