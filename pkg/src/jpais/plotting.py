"""Figures rendered from result CSVs.

Every figure is written as SVG next to the CSV it was drawn from. Rows of
the same grid point in different seed blocks are pooled, weighting by run
count.
"""

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import LogLocator, NullFormatter  # noqa: E402

from .metrics import read_csv  # noqa: E402

#: kind -> (x column, y column, log x, log y)
KINDS = {
    "ber_snr": ("snr_db", "ber", False, True),
    "ber_users": ("K", "ber", False, True),
    "ber_fdt": ("fdT", "ber", True, True),
    "ber_pe": ("p_e", "ber", "symlog", True),
    "nt_snr": ("snr_db", "nt", False, False),
    "mi_snr": ("snr_db", "mi", False, False),
}
EXTRA_KINDS = ("complexity", "convergence")
COMPLEXITY_COLUMNS = ("algorithm", "K", "N", "L", "n_r", "adds", "mults")
CONVERGENCE_COLUMNS = ("algorithm", "mode", "K", "n_r", "snr_db", "fdT", "symbol", "ber")

_POINT = ("algorithm", "mode", "K", "n_r", "snr_db", "fdT", "p_e")
_LABELS = {"snr_db": "SNR (dB)", "K": "users K", "fdT": "normalized Doppler $f_dT$",
           "p_e": "feedback bit error probability", "ber": "BER",
           "nt": "normalized throughput (bits/slot)", "mi": "mutual information (bits/use)",
           "symbol": "received symbols"}


def pool_rows(rows):
    """Merge seed blocks of each grid point into one row.

    BER, throughput and mutual information are run-weighted means; the CI
    half-widths combine as independent block estimates.
    """
    groups = defaultdict(list)
    for r in rows:
        groups[tuple(r[c] for c in _POINT)].append(r)
    out = []
    for key, rs in groups.items():
        n = np.array([float(r["runs"]) for r in rs])
        w = n / n.sum()
        row = dict(zip(_POINT, key))
        for c in ("ber", "nt", "mi"):
            row[c] = float(np.dot(w, [float(r[c]) for r in rs]))
        row["ber_ci95"] = float(np.sqrt(np.sum((w * [float(r["ber_ci95"]) for r in rs]) ** 2)))
        row["runs"] = int(n.sum())
        out.append(row)
    return out


def _read_plain(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"CSV {path} lacks column(s): {', '.join(missing)}")
        return list(reader)


def _series(rows, x, fixed=()):
    """Group rows into labelled series over ``x``; labels name varying keys only."""
    keys = [c for c in _POINT if c != x and c not in fixed]
    varying = [c for c in keys if len({r[c] for r in rows}) > 1]
    series = defaultdict(list)
    for r in rows:
        series[tuple((c, r[c]) for c in varying)].append(r)
    out = []
    for label_key, rs in sorted(series.items()):
        rs = sorted(rs, key=lambda r: float(r[x]))
        label = ", ".join(v if c == "algorithm" else f"{c}={v}" for c, v in label_key) or rs[0]["algorithm"]
        out.append((label, rs))
    return out


def _log_axis(ax):
    ax.set_yscale("log")
    ax.yaxis.set_major_locator(LogLocator(base=10.0))
    ax.yaxis.set_minor_locator(LogLocator(base=10.0, subs=np.arange(2, 10) * 0.1))
    ax.yaxis.set_minor_formatter(NullFormatter())
    ax.grid(True, which="major", axis="y", linestyle="-", alpha=0.5)
    ax.grid(True, which="minor", axis="y", linestyle=":", alpha=0.2)


def _finish(fig, ax, x, y, path):
    ax.set_xlabel(_LABELS.get(x, x))
    ax.set_ylabel(_LABELS.get(y, y))
    ax.grid(True, axis="x", alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_kind(rows, kind, path):
    """Draw one metric figure from pooled metric rows."""
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {sorted(KINDS) + list(EXTRA_KINDS)}")
    x, y, logx, logy = KINDS[kind]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    series = _series(rows, x)
    floor = np.inf
    if logy:
        # zero BER cannot be drawn on a log axis; clip to a decade below the smallest value
        positive = [float(r[y]) for _, rs in series for r in rs if float(r[y]) > 0]
        floor = min(positive) / 10 if positive else 1e-6
    for label, rs in series:
        xs = np.array([float(r[x]) for r in rs])
        ys = np.array([float(r[y]) for r in rs])
        err = None
        if y == "ber":
            ci = np.array([float(r["ber_ci95"]) for r in rs])
            lower = np.minimum(ci, np.maximum(ys - floor, 0.0)) if logy else ci
            err = np.vstack([lower, ci])
        ax.errorbar(xs, np.maximum(ys, floor) if logy else ys, yerr=err, marker="o",
                    markersize=4 if len(xs) > 1 else 7, capsize=2, label=label)
    if logy:
        _log_axis(ax)
        ax.set_ylim(bottom=floor)
    xs_all = sorted({float(r[x]) for r in rows})
    if logx is True:
        ax.set_xscale("log")
    elif logx == "symlog":
        positive = [v for v in xs_all if v > 0]
        ax.set_xscale("symlog", linthresh=min(positive) if positive else 1e-4)
        ax.set_xlim(left=0.0)
    return _finish(fig, ax, x, y, path)


def plot_complexity(path, out):
    """Multiplications per symbol against ``K`` from a complexity CSV."""
    rows = _read_plain(path, COMPLEXITY_COLUMNS)
    if not rows:
        raise ValueError(f"{path} has no rows")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_alg = defaultdict(list)
    for r in rows:
        by_alg[r["algorithm"]].append(r)
    for alg, rs in sorted(by_alg.items()):
        rs = sorted(rs, key=lambda r: int(r["K"]))
        ks = [int(r["K"]) for r in rs]
        ax.plot(ks, [int(r["mults"]) for r in rs], marker="o", markersize=4 if len(ks) > 1 else 7, label=alg)
    _log_axis(ax)
    return _finish(fig, ax, "K", "complex multiplications per symbol", out)


def plot_convergence(path, out):
    """BER against received symbols from a convergence CSV."""
    rows = _read_plain(path, CONVERGENCE_COLUMNS)
    if not rows:
        raise ValueError(f"{path} has no rows")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    groups = defaultdict(list)
    for r in rows:
        groups[(r["algorithm"], r["mode"])].append(r)
    floor = np.inf
    for (alg, mode), rs in sorted(groups.items()):
        xs = np.array([int(r["symbol"]) for r in rs])
        ys = np.array([float(r["ber"]) for r in rs])
        if np.any(ys > 0):
            floor = min(floor, ys[ys > 0].min() / 10)
        ax.plot(xs, ys, marker="o" if len(xs) == 1 else None, label=f"{alg} ({mode})")
    _log_axis(ax)
    if np.isfinite(floor):
        ax.set_ylim(bottom=floor)
    return _finish(fig, ax, "symbol", "ber", out)


def default_kinds(rows):
    """Metric figures that make sense for the axes a CSV actually sweeps."""
    varies = {c: len({r[c] for r in rows}) > 1 for c in _POINT}
    kinds = []
    if varies["snr_db"]:
        kinds += ["ber_snr", "nt_snr", "mi_snr"]
    if varies["K"]:
        kinds.append("ber_users")
    if varies["fdT"]:
        kinds.append("ber_fdt")
    if varies["p_e"]:
        kinds.append("ber_pe")
    return kinds or ["ber_snr"]


def emit_plots(csv_path, kinds=None, out_dir=None):
    """Render figures for a result CSV and return their paths.

    Parameters
    ----------
    csv_path : path-like
        A metrics CSV, or a complexity/convergence CSV when ``kinds`` is
        ``["complexity"]`` or ``["convergence"]``.
    kinds : list of str, optional
        Figure kinds; defaults to the ones the CSV's sweep supports. A
        ``<stem>_convergence.csv`` next to a metrics CSV is plotted too.
    out_dir : path-like, optional
        Defaults to the CSV's directory.
    """
    csv_path = Path(csv_path)
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = csv_path.stem
    kinds = list(kinds) if kinds else None
    if kinds in (["complexity"], ["convergence"]):
        fn = plot_complexity if kinds[0] == "complexity" else plot_convergence
        return [fn(csv_path, out_dir / f"{stem}_{kinds[0]}.svg")]
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    rows = pool_rows(rows)
    paths = [plot_kind(rows, k, out_dir / f"{stem}_{k}.svg") for k in (kinds or default_kinds(rows))]
    conv = csv_path.with_name(f"{stem}_convergence.csv")
    if kinds is None and conv.exists():
        paths.append(plot_convergence(conv, out_dir / f"{stem}_convergence.svg"))
    return paths
