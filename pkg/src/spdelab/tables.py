"""CSV tables and JSON run summaries with stable, hashable formatting."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, rows, columns=None) -> Path:
    """Write dict rows with deterministic float formatting (%.17g)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(c)) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_summary(out_dir, command: str, config: dict, root_seed: int,
                      outputs, started: float) -> Path:
    """JSON record of a run: config echo, seed, content hashes, wall time.

    The CSV outputs are the bit-reproducible artifacts; the summary itself
    contains the wall time and is not part of the reproducibility contract.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "root_seed": root_seed,
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
        "wall_time_s": round(time.time() - started, 3),
    }
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
