"""Render sweep CSVs into paper-style panels.

The input schema is the sweep CSV written by the experiment harness; nothing
else is read and no statistics are recomputed here beyond the power-law slope
shown on scaling panels.  Styles are fixed and nothing time-dependent enters
the image, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_COLUMNS = [
    "sweep_kind", "value_n", "value_L", "value_gamma", "value_N", "obs",
    "emp_mean", "emp_stderr", "tree", "one_loop", "second_loop", "total",
    "control", "flagged",
]

OBSERVABLES = ("train", "test", "gap")

FIGURE_KINDS = ("scaling", "comparison", "gamma_panel", "nn_grid")

_COLORS = {"train": "#1f77b4", "test": "#d62728", "gap": "#2ca02c"}


class SchemaError(ValueError):
    """The CSV does not match the harness sweep schema."""


class SelectionError(ValueError):
    """The requested filter selects no rows."""


@dataclass(frozen=True)
class FigureSpec:
    csv_path: str | Path
    figure_kind: str
    output_path: str | Path
    observable: str | None = None

    def __post_init__(self):
        if self.figure_kind not in FIGURE_KINDS:
            raise ValueError(
                f"unknown figure kind {self.figure_kind!r}; options: {FIGURE_KINDS}"
            )
        if self.observable is not None and self.observable not in OBSERVABLES:
            raise ValueError(f"unknown observable {self.observable!r}")


@dataclass(frozen=True)
class SweepRow:
    sweep_kind: str
    n: int
    depth: int
    gamma: float
    n_train: int
    obs: str
    emp_mean: float
    emp_stderr: float
    tree: float
    one_loop: float
    second_loop: float | None
    total: float
    control: float
    flagged: bool


def load_rows(csv_path: str | Path) -> list[SweepRow]:
    """Parse a sweep CSV, failing with column-level detail on any mismatch."""
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{csv_path}: empty file") from None
        if header != EXPECTED_COLUMNS:
            missing = [c for c in EXPECTED_COLUMNS if c not in header]
            extra = [c for c in header if c not in EXPECTED_COLUMNS]
            raise SchemaError(
                f"{csv_path}: header mismatch (missing {missing or 'none'}, "
                f"unexpected {extra or 'none'}, order must match exactly)"
            )
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(EXPECTED_COLUMNS):
                raise SchemaError(f"{csv_path}:{lineno}: wrong field count")
            rows.append(_parse_row(record, csv_path, lineno))
    return rows


def _parse_row(record: list[str], csv_path, lineno: int) -> SweepRow:
    def num(column: str, allow_empty: bool = False):
        value = record[EXPECTED_COLUMNS.index(column)]
        if value == "":
            if allow_empty:
                return None
            raise SchemaError(f"{csv_path}:{lineno}: empty value in '{column}'")
        try:
            return float(value)
        except ValueError:
            raise SchemaError(
                f"{csv_path}:{lineno}: non-numeric value {value!r} in '{column}'"
            ) from None

    obs = record[EXPECTED_COLUMNS.index("obs")]
    if obs not in OBSERVABLES:
        raise SchemaError(f"{csv_path}:{lineno}: unknown observable {obs!r}")
    flag_text = record[EXPECTED_COLUMNS.index("flagged")]
    if flag_text not in ("true", "false"):
        raise SchemaError(f"{csv_path}:{lineno}: bad flag value {flag_text!r}")
    return SweepRow(
        sweep_kind=record[0],
        n=int(num("value_n")),
        depth=int(num("value_L")),
        gamma=num("value_gamma"),
        n_train=int(num("value_N")),
        obs=obs,
        emp_mean=num("emp_mean"),
        emp_stderr=num("emp_stderr"),
        tree=num("tree"),
        one_loop=num("one_loop"),
        second_loop=num("second_loop", allow_empty=True),
        total=num("total"),
        control=num("control"),
        flagged=flag_text == "true",
    )


def fit_loglog_slope(xs, ys) -> tuple[float, float]:
    """Least-squares slope and intercept on (log x, log y).

    Deliberately re-derived here (closed-form centered normal equations)
    rather than shared with the producer of the CSVs; the two paths are held
    together by a fixture-level comparison in the tests.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if xs.shape[0] < 3:
        raise SelectionError("slope fit needs at least 3 points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise SelectionError("slope fit requires positive values")
    lx, ly = np.log(xs), np.log(ys)
    dx = lx - lx.mean()
    slope = float((dx @ (ly - ly.mean())) / (dx @ dx))
    intercept = float(ly.mean() - slope * lx.mean())
    return slope, intercept


def _select(rows: list[SweepRow], observable: str | None) -> dict[str, list[SweepRow]]:
    wanted = OBSERVABLES if observable is None else (observable,)
    groups = {obs: [r for r in rows if r.obs == obs] for obs in wanted}
    groups = {obs: grp for obs, grp in groups.items() if grp}
    if not groups:
        raise SelectionError("no rows match the requested observable filter")
    return groups


def build_figure(spec: FigureSpec) -> tuple[plt.Figure, dict]:
    """Build the matplotlib figure and return it with plot-level metadata.

    The metadata echoes every numeric value placed on the figure (series
    arrays, fitted slopes), so tests can verify the plotted content without
    decoding the rendered image.
    """
    rows = load_rows(spec.csv_path)
    if spec.figure_kind == "scaling":
        return _scaling_figure(rows, spec.observable)
    if spec.figure_kind == "comparison":
        return _comparison_figure(rows, spec.observable)
    if spec.figure_kind == "gamma_panel":
        return _gamma_panel(rows)
    return _nn_grid(rows, spec.observable)


def render(spec: FigureSpec) -> Path:
    """Render the requested panel and write the image file."""
    fig, _ = build_figure(spec)
    output = Path(spec.output_path)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(output, dpi=150, metadata=_static_metadata(output))
    plt.close(fig)
    return output


def _static_metadata(output: Path) -> dict | None:
    # PNG carries a mutable "Software" chunk by default; pin it so renders of
    # identical inputs are byte-identical.
    if output.suffix.lower() == ".png":
        return {"Software": "loopfigs"}
    if output.suffix.lower() == ".svg":
        return {"Date": None}
    return None


def _sweep_axis(rows: list[SweepRow]) -> tuple[str, list[float]]:
    kind = rows[0].sweep_kind
    if kind == "depth":
        return "depth L", [float(r.depth) for r in rows]
    if kind == "gamma":
        return "gamma", [r.gamma for r in rows]
    return "width n", [float(r.n) for r in rows]


def _scaling_figure(rows, observable):
    groups = _select(rows, observable)
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    info = {"kind": "scaling", "slopes": {}, "series": {}}
    guide_drawn = False
    for obs, grp in groups.items():
        label, xs = _sweep_axis(grp)
        ys = [abs(r.one_loop) for r in grp]
        pts = [(x, y) for x, y in zip(xs, ys) if y > 0.0]
        if len(pts) < 3:
            raise SelectionError(f"{obs}: fewer than 3 positive one-loop values")
        xs, ys = map(np.asarray, zip(*pts))
        slope, _ = fit_loglog_slope(xs, ys)
        info["slopes"][obs] = slope
        info["series"][obs] = (xs.tolist(), ys.tolist())
        ax.loglog(xs, ys, "o-", color=_COLORS[obs], markersize=4,
                  label=f"{obs} (slope {slope:.2f})")
        if not guide_drawn:
            # Reference inverse-width line anchored at the first point.
            ax.loglog(xs, ys[0] * xs[0] / xs, "--", color="gray", linewidth=1.0,
                      label="n^-1 guide")
            guide_drawn = True
        ax.set_xlabel(label)
    first_obs = next(iter(info["slopes"]))
    annotation = f"slope[{first_obs}] = {info['slopes'][first_obs]:.10f}"
    ax.text(0.04, 0.06, annotation, transform=ax.transAxes, fontsize=8)
    info["annotation"] = annotation
    ax.set_ylabel("|one-loop correction|")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig, info


def _comparison_figure(rows, observable):
    groups = _select(rows, observable)
    fig, axes = plt.subplots(1, len(groups), figsize=(4.2 * len(groups), 3.6),
                             squeeze=False)
    info = {"kind": "comparison", "series": {}}
    for ax, (obs, grp) in zip(axes[0], groups.items()):
        label, xs = _sweep_axis(grp)
        emp = [r.emp_mean for r in grp]
        err = [r.emp_stderr for r in grp]
        tree = [r.tree for r in grp]
        total = [r.total for r in grp]
        ax.errorbar(xs, emp, yerr=err, fmt="none", ecolor="black", capsize=2)
        ax.plot(xs, emp, "o", color="black", markersize=4, label="empirical")
        ax.plot(xs, tree, "s--", color="#1f77b4", markersize=4, label="tree")
        ax.plot(xs, total, "^-", color="#d62728", markersize=4, label="tree+one-loop")
        ax.set_title(obs)
        ax.set_xlabel(label)
        ax.legend(fontsize=8)
        info["series"][obs] = {
            "x": list(xs), "empirical": emp, "stderr": err,
            "tree": tree, "total": total,
        }
    fig.tight_layout()
    return fig, info


def _gamma_panel(rows):
    grp = [r for r in rows if r.obs == "train"]  # control repeats per obs
    if not grp:
        raise SelectionError("no rows to draw")
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    gammas = [r.gamma for r in grp]
    controls = [r.control for r in grp]
    ok = [not r.flagged for r in grp]
    info = {
        "kind": "gamma_panel", "gamma": gammas, "control": controls,
        "flagged": [r.flagged for r in grp],
    }
    ax.loglog([g for g, k in zip(gammas, ok) if k],
              [c for c, k in zip(controls, ok) if k],
              "o", color="#1f77b4", markersize=5, label="control")
    flagged_g = [g for g, k in zip(gammas, ok) if not k]
    flagged_c = [c for c, k in zip(controls, ok) if not k]
    if flagged_g:
        ax.loglog(flagged_g, flagged_c, "x", color="#d62728", markersize=7,
                  label="flagged (control >= 1)")
    ax.axhline(1.0, linestyle="--", color="gray", linewidth=1.0)
    ax.set_xlabel("gamma")
    ax.set_ylabel("E ||G0 Delta||")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig, info


def _nn_grid(rows, observable):
    obs = observable or "train"
    grp = [r for r in rows if r.obs == obs]
    if not grp:
        raise SelectionError(f"no rows for observable {obs!r}")
    sizes = sorted({r.n_train for r in grp})
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    info = {"kind": "nn_grid", "obs": obs, "series": {}}
    for i, N in enumerate(sizes):
        sub = [r for r in grp if r.n_train == N]
        xs = [float(r.n) for r in sub]
        ys = [abs(r.one_loop) for r in sub]
        pts = [(x, y) for x, y in zip(xs, ys) if y > 0.0]
        if not pts:
            continue
        xs, ys = map(list, zip(*pts))
        color = plt.cm.viridis(i / max(len(sizes) - 1, 1))
        ax.loglog(xs, ys, "o-", color=color, markersize=4, label=f"N = {N}")
        info["series"][N] = (xs, ys)
    if not info["series"]:
        raise SelectionError("no positive one-loop values to draw")
    ax.set_xlabel("width n")
    ax.set_ylabel(f"|one-loop {obs} correction|")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig, info
