"""Tables and figures from evaluation and filter datasets."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from detfilt.bench import (
    EQUAL_SPEED_M,
    EVAL_FILE,
    PAPER_COLLAPSE_RATES,
    PAPER_WEIGHT_COLLAPSE,
    compute_collapse_rates,
    cost_equal_speed_m,
    cost_model,
    ecdf,
    eqmcp99_from_records,
    filter_records,
    read_eval_csv,
)
from detfilt.errors import DetfiltError
from detfilt.filters import read_filter_csv
from detfilt.likelihood import MONTE_CARLO, UXHW
from detfilt.statespace import fmt

ECDF_POINTS = 1001
PAPER_TAG = "paper (hardware)"


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "detfilt"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()


def _label(method: str, param) -> str:
    return method if not int(param) else f"{method} {param}"


def _ecdf_figure_records(records):
    preferred = filter_records(records, "gaussian", 3.0, "uniform", 0.5)
    return preferred or records


def ecdf_table(records) -> list[list]:
    groups = defaultdict(list)
    for r in records:
        groups[(r.method, r.param)].append(r.abs_error)
    rows = []
    for (method, param), errs in sorted(groups.items()):
        curve = ecdf(errs)
        # Thin long curves to evenly spaced ranks; the final point is kept.
        picks = np.unique(np.linspace(0, len(curve) - 1, min(len(curve), ECDF_POINTS)).round().astype(int))
        rows += [[method, param, fmt(curve[i][0]), fmt(curve[i][1])] for i in picks]
    return rows


def weight_collapse_rows(filter_rows) -> list[list]:
    acc = defaultdict(lambda: [0, 0])
    for r in filter_rows:
        key = (r["variant"], r["estimator"], int(r["param"]), int(r["N"]))
        acc[key][0] += int(r["weight_collapses"])
        acc[key][1] += 1
    return [[v, e, p, n, c, t, fmt(c / t)] for (v, e, p, n), (c, t) in sorted(acc.items())]


def rmse_ess_rows(filter_rows) -> list[list]:
    acc = defaultdict(list)
    for r in filter_rows:
        acc[(r["variant"], r["estimator"], int(r["param"]), int(r["N"]))].append(
            (float(r["rmse"]), float(r["mean_ess"]))
        )
    out = []
    for (v, e, p, n), vals in sorted(acc.items()):
        a = np.array(vals)
        out.append([v, e, p, n, len(a), fmt(a[:, 0].mean()), fmt(a[:, 1].mean()), fmt(a[:, 1].mean() / n)])
    return out


def report(in_dir, out_dir) -> list[Path]:
    """Write CSV tables and SVG figures for the datasets found in ``in_dir``.

    ``in_dir`` may hold an ``eval.csv`` from the grid runner and any number
    of ``filter*.csv`` files from ``run-filter``. Published hardware numbers
    are drawn next to ours and tagged as such.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    records = read_eval_csv(in_dir / EVAL_FILE) if (in_dir / EVAL_FILE).exists() else []
    filter_rows = []
    for p in sorted(in_dir.glob("filter*.csv")):
        filter_rows += read_filter_csv(p)
    if not records and not filter_rows:
        raise DetfiltError(f"no evaluation or filter data in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    plt = _pyplot()
    written = []

    cost_rows = []
    for eta, m in EQUAL_SPEED_M.items():
        c = cost_model(UXHW, eta)
        cost_rows.append([eta, c.total, m, cost_model(MONTE_CARLO, m).total, cost_equal_speed_m(eta)])
    _write(out_dir / "cost_model.csv",
           ["eta", "uxhw_atom_ops", "equal_speed_M_paper", "mc_sample_evals", "equal_cost_M"], cost_rows)
    written.append(out_dir / "cost_model.csv")

    if records:
        fig_records = _ecdf_figure_records(records)
        rows = ecdf_table(fig_records)
        _write(out_dir / "ecdf.csv", ["method", "param", "threshold", "fraction"], rows)
        fig, ax = plt.subplots(figsize=(6, 4))
        series = defaultdict(list)
        for method, param, t, f in rows:
            series[(method, param)].append((float(t), float(f)))
        for (method, param), pts in sorted(series.items()):
            a = np.array(pts)
            ax.step(np.maximum(a[:, 0], 1e-12), 100 * a[:, 1], where="post", label=_label(method, param))
        ax.set_xscale("log")
        ax.set_xlabel("absolute error")
        ax.set_ylabel("% of errors below")
        ax.legend(fontsize=7)
        _save(fig, out_dir / "ecdf.svg")
        written += [out_dir / "ecdf.csv", out_dir / "ecdf.svg"]

        rates = compute_collapse_rates(filter_records(records, "gaussian", 3.0, "uniform"))
        _write(out_dir / "collapse_rates.csv", ["method", "param", "s_nu", "rate_percent", "paper_hardware"],
               [[m, p, fmt(s), f"{r:.4f}", _paper_rate(m, p, s)] for m, p, s, r in rates])
        fig, ax = plt.subplots(figsize=(6, 4))
        scales = sorted({s for _, _, s, _ in rates})
        pos = {s: i for i, s in enumerate(scales)}
        width = 0.8 / max(1, len(EQUAL_SPEED_M) * 2)
        j = 0
        for eta, m in EQUAL_SPEED_M.items():
            for method, param in ((UXHW, eta), (MONTE_CARLO, m)):
                pts = [(pos[s], r) for mm, pp, s, r in rates if mm == method and pp == param]
                if pts:
                    a = np.array(pts, dtype=float)
                    ax.bar(a[:, 0] + j * width, a[:, 1], width, label=_label(method, param))
                j += 1
        paper = [(pos[s], v[1]) for (s, eta), v in sorted(PAPER_COLLAPSE_RATES.items()) if s in pos and eta == 8]
        if paper:
            a = np.array(paper)
            ax.plot(a[:, 0] + width, a[:, 1], "kx", label=f"MC 20, {PAPER_TAG}")
        ax.set_xticks(range(len(scales)), [fmt(s) for s in scales])
        ax.set_xlabel("observation noise scale")
        ax.set_ylabel("likelihood collapse rate (%)")
        ax.legend(fontsize=6)
        _save(fig, out_dir / "collapse_rates.svg")
        written += [out_dir / "collapse_rates.csv", out_dir / "collapse_rates.svg"]

        eq = eqmcp99_from_records(records)
        _write(out_dir / "eqmcp99.csv", ["config_id", "eta", "eqmcp99", "paper_hardware"],
               [[e["config_id"], e["eta"], "none" if e["eqmcp99"] is None else e["eqmcp99"],
                 "" if e["paper_hardware"] is None else e["paper_hardware"]] for e in eq])
        written.append(out_dir / "eqmcp99.csv")

    if filter_rows:
        rows = rmse_ess_rows(filter_rows)
        _write(out_dir / "rmse_ess.csv",
               ["variant", "estimator", "param", "N", "trials", "mean_rmse", "mean_ess", "mean_ess_fraction"], rows)
        wc = weight_collapse_rows(filter_rows)
        _write(out_dir / "weight_collapse.csv",
               ["variant", "estimator", "param", "N", "weight_collapses", "trials", "collapses_per_trial",
                "paper_hardware_percent"],
               [r + [_paper_weight_collapse(r[1], r[2])] for r in wc])
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
        series = defaultdict(list)
        for v, e, p, n, _, rm, es, frac in rows:
            series[(v, e, p)].append((n, float(rm), float(frac)))
        for (v, e, p), pts in sorted(series.items()):
            a = np.array(sorted(pts))
            lab = v if v == "bootstrap" else _label(e, p)
            ax1.plot(a[:, 0], a[:, 1], "o-", label=lab)
            ax2.plot(a[:, 0], a[:, 2], "o-", label=lab)
        ax1.set_xlabel("particles")
        ax1.set_ylabel("mean RMSE")
        ax2.set_xlabel("particles")
        ax2.set_ylabel("mean ESS / N")
        ax1.legend(fontsize=6)
        fig.tight_layout()
        _save(fig, out_dir / "rmse_ess.svg")
        written += [out_dir / "rmse_ess.csv", out_dir / "weight_collapse.csv", out_dir / "rmse_ess.svg"]
    plt.close("all")
    return written


def _paper_rate(method: str, param: int, s_nu: float) -> str:
    for (s, eta), (ux, mc) in PAPER_COLLAPSE_RATES.items():
        if s == s_nu and method == UXHW and param == eta:
            return f"{ux:.4f}"
        if s == s_nu and method == MONTE_CARLO and param == EQUAL_SPEED_M[eta]:
            return f"{mc:.4f}"
    return ""


def _paper_weight_collapse(estimator: str, param: int) -> str:
    for eta, (ux, mc) in PAPER_WEIGHT_COLLAPSE.items():
        if estimator == UXHW and param == eta:
            return f"{ux:.2f}"
        if estimator == MONTE_CARLO and param == EQUAL_SPEED_M[eta]:
            return f"{mc:.2f}"
    return ""
