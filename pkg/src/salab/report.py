"""Figure rendering for the tables the subcommands emit.

Runs downstream of the CSV output: `salab report --out DIR` scans the
directory for recognized tables and drops one PNG next to each.  The
simulation and verdict paths stay plot-free so their outputs remain
byte-stable.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_ensemble(path: Path) -> Path:
    rows = _read(path)
    by_cp = defaultdict(lambda: ([], []))
    for r in rows:
        ex, ey = by_cp[int(r["checkpoint"])]
        ex.append(float(r["err_x"]))
        ey.append(float(r["err_y"]))
    ks = sorted(by_cp)
    import numpy as np

    med_x = [float(np.median(by_cp[k][0])) for k in ks]
    med_y = [float(np.median(by_cp[k][1])) for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    positive = [k for k in ks if k > 0]
    if len(positive) >= 2:
        ax.loglog([k for k in ks if k > 0],
                  [m for k, m in zip(ks, med_x) if k > 0], "o-", label="median err x")
        ax.loglog([k for k in ks if k > 0],
                  [m for k, m in zip(ks, med_y) if k > 0], "s-", label="median err y")
    else:
        ax.plot(ks, med_x, "o-", label="median err x")
        ax.plot(ks, med_y, "s-", label="median err y")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("squared error")
    ax.set_title("iterate vs averaged error decay")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path.with_suffix(".png"))


def render_bound_table(path: Path) -> Path:
    rows = _read(path)
    by_delta = defaultdict(list)
    for r in rows:
        by_delta[float(r["delta"])].append(r)
    fig, ax = plt.subplots(figsize=(6, 4))
    for delta, group in sorted(by_delta.items()):
        group.sort(key=lambda r: int(r["k"]))
        ks = [int(r["k"]) for r in group]
        for col, style in (("main", "-"), ("crude", "--"), ("combined", ":")):
            ax.loglog(ks, [float(r[col]) for r in group], style,
                      label=f"{col} (delta={delta:g})")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("bound on squared averaged error")
    ax.set_title("bound components")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path.with_suffix(".png"))


def render_coverage(path: Path) -> Path:
    rows = _read(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"k={r['checkpoint']}, d={float(r['delta']):g}" for r in rows]
    upper = [float(r["exceed_upper_ci"]) for r in rows]
    deltas = [float(r["delta"]) for r in rows]
    colors = ["tab:green" if r["verdict"] == "pass" else "tab:red" for r in rows]
    x = range(len(rows))
    ax.bar(x, upper, color=colors)
    ax.plot(x, deltas, "k_", markersize=18, label="target delta")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("99% upper CI on exceedance probability")
    ax.set_title("bound coverage")
    ax.legend()
    return _save(fig, path.with_suffix(".png"))


def render_tightness(path: Path) -> Path:
    rows = _read(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    x = range(len(rows))
    ax.bar([i - 0.2 for i in x], [float(r["empirical_quantile"]) for r in rows],
           width=0.2, label="empirical quantile")
    ax.bar(list(x), [float(r["exact"]) for r in rows], width=0.2, label="exact law")
    ax.bar([i + 0.2 for i in x], [float(r["leading_term"]) for r in rows],
           width=0.2, label="bound leading term")
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"delta={float(r['delta']):g}" for r in rows])
    ax.set_ylabel("error-norm quantile")
    ax.set_title("tightness of the leading term")
    ax.legend()
    return _save(fig, path.with_suffix(".png"))


def render_decay(path: Path) -> Path:
    rows = _read(path)
    rows.sort(key=lambda r: int(r["checkpoint"]))
    ks = [int(r["checkpoint"]) for r in rows if int(r["checkpoint"]) > 0]
    q = [float(r["quantile_err_y"]) for r in rows if int(r["checkpoint"]) > 0]
    lo = [float(r["ci_lo"]) for r in rows if int(r["checkpoint"]) > 0]
    hi = [float(r["ci_hi"]) for r in rows if int(r["checkpoint"]) > 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(ks, q, "o-", label="quantile of squared error")
    ax.fill_between(ks, lo, hi, alpha=0.25, label="99% order-statistic band")
    if len(ks) >= 2:
        ref = [q[0] * ks[0] / k for k in ks]
        ax.loglog(ks, ref, "k--", alpha=0.6, label="1/k reference")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("squared error quantile")
    ax.set_title("averaged-error quantile decay")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path.with_suffix(".png"))


def render_mgf(path: Path) -> Path:
    rows = _read(path)
    by_t = defaultdict(list)
    for r in rows:
        by_t[float(r["t"])].append((float(r["radius"]), float(r["value"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for t, pts in sorted(by_t.items()):
        pts.sort()
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"t={t:g}")
    ax.set_xlabel("truncation radius")
    ax.set_ylabel("truncated moment value")
    ax.set_title("truncated exponential moments")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path.with_suffix(".png"))


RENDERERS = {
    "ensemble.csv": render_ensemble,
    "bound_table.csv": render_bound_table,
    "coverage.csv": render_coverage,
    "td_coverage.csv": render_coverage,
    "q_coverage.csv": render_coverage,
    "tightness.csv": render_tightness,
    "offpolicy_decay.csv": render_decay,
    "mgf.csv": render_mgf,
}


def render_all(out_dir: Path) -> list[Path]:
    made = []
    for name, renderer in RENDERERS.items():
        path = out_dir / name
        if path.exists():
            made.append(renderer(path))
    return made
