"""Run directories: CSV/HTML outputs, the manifest, and run-to-run comparison."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from ldp_lab import __version__
from ldp_lab.config import ExperimentConfig
from ldp_lab.errors import ManifestMissing

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FLOAT_FORMAT = "%.17g"
RESULTS_COLUMNS = ["T", "target", "eps", "method", "n", "p_hat", "std_err",
                   "log_rate", "reference_rate", "abs_gap"]
PLOT_COLUMNS = ["T", "log_rate", "reference_rate"]
_PACKAGES = ("numpy", "scipy", "pandas", "plotly", "scikit-learn")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict[str, str]:
    out = {"ldp_lab": __version__, "python": platform.python_version()}
    for pkg in _PACKAGES:
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


# ============================
# WRITER
# ============================

@dataclass
class RunWriter:
    """Buffers outputs and writes them, plus the manifest, in one pass."""

    out_dir: Path
    frames: dict = field(default_factory=dict)
    figures: dict = field(default_factory=dict)

    def add_csv(self, name: str, frame: pd.DataFrame) -> None:
        self.frames[name] = frame

    def add_figure(self, name: str, fig: go.Figure) -> None:
        self.figures[name] = fig

    def finish(self, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, frame in self.frames.items():
            path = self.out_dir / name
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
            files[name] = _sha256(path)
        for name, fig in self.figures.items():
            path = self.out_dir / name
            fig.write_html(path, include_plotlyjs="cdn", div_id="ldp-lab-plot")
            files[name] = _sha256(path)
        manifest = {
            "kind": cfg.kind,
            "config_hash": cfg.config_hash,
            "seed": cfg.seed,
            "versions": versions(),
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": files,
            "summary": extra or {},
        }
        with open(self.out_dir / MANIFEST, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        logger.info("[artifacts] wrote %d files to %s", len(files), self.out_dir)
        return self.out_dir / MANIFEST


def _json_default(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def json_float(x: float) -> float | str:
    """Manifest-safe float: JSON has no inf."""
    return x if math.isfinite(x) else ("inf" if x > 0 else str(x))


def plot_rates(frame: pd.DataFrame, title: str) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame["T"], y=frame["log_rate"], mode="lines+markers",
                             name="-(1/T) ln p_hat"))
    fig.add_trace(go.Scatter(x=frame["T"], y=frame["reference_rate"], mode="lines",
                             name="reference rate", line=dict(dash="dash")))
    fig.update_layout(title=title, xaxis_title="T", yaxis_title="rate", xaxis_type="log")
    return fig


# ============================
# COMPARE
# ============================

def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise ManifestMissing(f"{run_dir} has no {MANIFEST}")
    with open(path) as fh:
        return json.load(fh)


@dataclass(frozen=True)
class CompareReport:
    diffs: pd.DataFrame

    @property
    def passed(self) -> bool:
        return bool((~self.diffs["flagged"]).all()) if len(self.diffs) else True

    @property
    def flagged(self) -> pd.DataFrame:
        return self.diffs[self.diffs["flagged"]] if len(self.diffs) else self.diffs


def _log_rate_slack(frame: pd.DataFrame, k: float) -> pd.Series:
    # delta method: se(log_rate) = se(p) / (p T)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = k * frame["std_err"] / (frame["p_hat"] * frame["T"])
    return s.replace([np.inf, -np.inf], np.nan).fillna(0.0)


def compare(run_dir_a: str | Path, run_dir_b: str | Path, tolerance: float = 0.0,
            stderr_multiple: float = 0.0) -> CompareReport:
    """Row-wise numeric diff of the CSV files both runs produced.

    A CSV listed by only one manifest is flagged as a whole-file difference.
    """
    ma, mb = read_manifest(run_dir_a), read_manifest(run_dir_b)
    csv_a = {n for n in ma["files"] if n.endswith(".csv")}
    csv_b = {n for n in mb["files"] if n.endswith(".csv")}
    shared = sorted(csv_a & csv_b)
    rows = [{"file": name, "row": -1, "column": "*", "a": name in csv_a, "b": name in csv_b,
             "diff": math.inf, "allowed": 0.0, "flagged": True}
            for name in sorted(csv_a ^ csv_b)]
    per_T_slack: dict[float, float] = {}
    if stderr_multiple and "results.csv" in shared:
        ra = pd.read_csv(Path(run_dir_a) / "results.csv")
        rb = pd.read_csv(Path(run_dir_b) / "results.csv")
        if len(ra) == len(rb):
            lr = np.maximum(_log_rate_slack(ra, stderr_multiple), _log_rate_slack(rb, stderr_multiple))
            per_T_slack = dict(zip(ra["T"].astype(float), lr))
    for name in shared:
        a = pd.read_csv(Path(run_dir_a) / name)
        b = pd.read_csv(Path(run_dir_b) / name)
        if list(a.columns) != list(b.columns) or len(a) != len(b):
            rows.append({"file": name, "row": -1, "column": "*", "a": len(a), "b": len(b),
                         "diff": math.inf, "allowed": 0.0, "flagged": True})
            continue
        slack = {c: pd.Series(0.0, index=a.index) for c in a.columns}
        if stderr_multiple and "std_err" in a.columns:
            se = np.maximum(a["std_err"], b["std_err"])
            for col in ("p_hat", "std_err"):
                slack[col] = stderr_multiple * se
            lr = np.maximum(_log_rate_slack(a, stderr_multiple), _log_rate_slack(b, stderr_multiple))
            for col in ("log_rate", "abs_gap"):
                if col in a.columns:
                    slack[col] = lr
        elif stderr_multiple and "log_rate" in a.columns and "T" in a.columns:
            slack["log_rate"] = a["T"].astype(float).map(per_T_slack).fillna(0.0)
        for col in a.columns:
            for i, (x, y) in enumerate(zip(a[col], b[col])):
                diff = _cell_diff(x, y)
                allowed = tolerance + float(slack[col].iloc[i])
                if diff > allowed:
                    rows.append({"file": name, "row": i, "column": col, "a": x, "b": y,
                                 "diff": diff, "allowed": allowed, "flagged": True})
    diffs = pd.DataFrame(rows, columns=["file", "row", "column", "a", "b", "diff", "allowed", "flagged"])
    return CompareReport(diffs)


def _cell_diff(x, y) -> float:
    if isinstance(x, str) or isinstance(y, str):
        return 0.0 if str(x) == str(y) else math.inf
    x, y = float(x), float(y)
    if x == y or (math.isnan(x) and math.isnan(y)):
        return 0.0
    if not (math.isfinite(x) and math.isfinite(y)):
        return math.inf
    return abs(x - y)
