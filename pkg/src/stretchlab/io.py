"""CSV/JSON artifact writers and run manifests."""

from dataclasses import asdict, dataclass, field
import datetime as dt
import hashlib
import json
import math
from pathlib import Path

import numpy as np

# flags that change where or how output is written but never its content
NON_CONTENT_KEYS = frozenset({"threads", "out", "format"})


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def to_json(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def config_hash(config):
    """Stable hex digest of the resolved configuration."""
    content = {k: v for k, v in config.items() if k not in NON_CONTENT_KEYS}
    blob = json.dumps(_plain(content), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    config_hash: str = ""
    started: str = field(default_factory=_now)
    finished: str = ""
    outputs: list = field(default_factory=list)

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    @property
    def seed(self):
        return self.config.get("seed")

    @property
    def gamma(self):
        return self.config.get("gamma")

    def finish(self):
        self.finished = _now()

    def to_dict(self):
        d = asdict(self)
        d["seed"] = self.seed
        d["gamma"] = self.gamma
        return d


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def csv_text(columns, rows, units, manifest_hash):
    """CSV with a manifest comment line and a ``name[unit]`` header."""
    lines = [f"# manifest {manifest_hash}",
             ",".join(f"{c}[{units.get(c, '1')}]" for c in columns)]
    lines += [",".join(format_value(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def csv_body(text):
    """The CSV without comment lines; the part that must be reproducible."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def write_table(out_dir, stem, columns, rows, units, manifest, fmt="csv"):
    out_dir = Path(out_dir)
    if fmt == "csv":
        path = out_dir / f"{stem}.csv"
        path.write_text(csv_text(columns, rows, units, manifest.config_hash))
    else:
        path = out_dir / f"{stem}.json"
        payload = {"manifest": manifest.config_hash, "units": {c: units.get(c, "1") for c in columns},
                   "columns": list(columns), "rows": [list(r) for r in rows]}
        path.write_text(to_json(payload))
    manifest.outputs.append(str(path))
    return path


def write_json(out_dir, name, payload, manifest=None):
    path = Path(out_dir) / name
    path.write_text(to_json(payload))
    if manifest is not None:
        manifest.outputs.append(str(path))
    return path


def aligned_text(rows, columns=None):
    """Render a list of dicts as aligned columns."""
    if not rows:
        return ""
    columns = columns or list(rows[0])

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(columns)]
    out = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    out += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(out)


def report_text(report):
    """Aligned text for a :class:`~stretchlab.analysis.CheckReport`."""
    lines = [f"{report.name}: {report.status}"]
    for k, v in report.values.items():
        if isinstance(v, list) and len(v) > 4:
            v = "[" + ", ".join(f"{x:.3g}" for x in v) + "]"
        lines.append(f"  {k} = {v}")
    if report.table:
        lines.append(aligned_text(report.table))
    return "\n".join(lines)
