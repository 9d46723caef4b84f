"""
Report and manifest writers.

Every report is written twice: ``<name>.jsonl`` (one sorted-key record per
line) and ``<name>.txt`` (an aligned table). Both are pure functions of the
records, so identical runs produce identical files.
"""
import json
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

from timbre_lab.binio import atomic_write_text
from timbre_lab.logs import NumpyEncoder, log_event, to_json_line

FLOAT_FORMAT = "{:.4f}".format


def utc_now():
    return datetime.now(timezone.utc).isoformat()


def records_frame(records, columns=None):
    """DataFrame of records, columns in the given order when supplied"""
    frame = pd.DataFrame.from_records(records)
    if columns is not None:
        frame = frame[list(columns)]
    return frame


def summarise(frame, by, metrics):
    """
    Mean and population spread of each metric over seeds.

    Returns:
        pd.DataFrame: One row per group in first-appearance order, with
            ``<metric>Mean`` / ``<metric>Std`` columns and ``seeds``
    """
    order = list(dict.fromkeys(frame[by]))
    grouped = frame.groupby(by, sort=False)
    summary = pd.DataFrame({by: order})
    summary["seeds"] = [len(grouped.get_group(key)) for key in order]
    for metric in metrics:
        summary[f"{metric}Mean"] = [float(grouped.get_group(key)[metric].mean()) for key in order]
        summary[f"{metric}Std"] = [float(grouped.get_group(key)[metric].std(ddof=0)) for key in order]
    return summary


def render_table(frame, title=None):
    text = frame.to_string(index=False, float_format=FLOAT_FORMAT)
    if title:
        text = f"{title}\n{'=' * len(title)}\n{text}"
    return text + "\n"


def write_report(run_dir, name, records, *tables):
    """
    Persist a report under ``<run_dir>/reports``.

    Args:
        run_dir: Output root
        name (str): File stem
        records (list[dict]): Line-delimited records
        *tables: (title, DataFrame) pairs rendered into the text file

    Returns:
        tuple: (jsonl path, txt path)
    """
    reports = Path(run_dir) / "reports"
    jsonl = atomic_write_text(reports / f"{name}.jsonl", "".join(to_json_line(r) + "\n" for r in records))
    text = "\n".join(render_table(frame, title) for title, frame in tables)
    txt = atomic_write_text(reports / f"{name}.txt", text)
    log_event("INFO", "Report written", report=name, records=len(records), path=str(jsonl))
    return jsonl, txt


def write_run_manifest(run_dir, command, config, seeds, started_at, artifacts=None, hashes=None):
    """
    Write ``manifests/<command>.json`` describing one CLI run.

    Args:
        run_dir: Output root
        command (str): Subcommand name, e.g. "train-substitute"
        config (dict): Fully resolved configuration
        seeds (list[int]): Seeds the run used
        started_at (str): ISO timestamp taken at start
        artifacts (dict): Name -> path of every produced file
        hashes (dict): Name -> sha256 of every checkpoint read or written

    Returns:
        Path: Manifest path
    """
    manifest = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "startedAt": started_at,
        "finishedAt": utc_now(),
        "artifacts": {k: str(v) for k, v in (artifacts or {}).items()},
        "checkpointHashes": dict(hashes or {}),
    }
    path = Path(run_dir) / "manifests" / f"{command}.json"
    atomic_write_text(path, json.dumps(manifest, cls=NumpyEncoder, indent=2, sort_keys=True) + "\n")
    return path
