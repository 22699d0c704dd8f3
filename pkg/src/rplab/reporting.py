"""Aggregates finished runs into summary tables and static SVG figures."""

import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from scipy import stats  # noqa: E402

from .config import VARIABLE_FIELDS  # noqa: E402
from .exceptions import ReportError  # noqa: E402
from .logger import get_logger  # noqa: E402
from .persistence import RunStore  # noqa: E402


@dataclass
class ReportSummary:
    experiment: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    figures: List[str] = field(default_factory=list)


def compatibility_diff(manifests: Sequence[Dict[str, Any]]) -> Dict[str, List[Any]]:
    """Config fields (other than the variable ones) whose values differ across runs."""
    configs = [m.get("config", {}) for m in manifests]
    keys = sorted(set().union(*configs))
    diff: Dict[str, List[Any]] = {}
    for key in keys:
        if key in VARIABLE_FIELDS:
            continue
        values = [c.get(key) for c in configs]
        if any(v != values[0] for v in values[1:]):
            diff[key] = values
    return diff


def slope_interval(x: np.ndarray, y: np.ndarray, level: float = 0.95) -> Dict[str, float]:
    """Least-squares slope with a two-sided t confidence interval."""
    fit = stats.linregress(x, y)
    dof = len(x) - 2
    half = float(stats.t.ppf(0.5 + level / 2.0, dof) * fit.stderr) if dof > 0 else math.nan
    return {
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "stderr": float(fit.stderr),
        "ci_low": float(fit.slope) - half,
        "ci_high": float(fit.slope) + half,
        "n_points": float(len(x)),
    }


def _label(manifest: Dict[str, Any]) -> str:
    config = manifest.get("config", {})
    return f"delta={config.get('delta')}"


def _save(out: RunStore, summary: ReportSummary, name: str, figure: Any) -> None:
    summary.figures.append(out.write_figure(name, figure))
    plt.close(figure)


def _scaling_report(stores: List[RunStore], manifests: List[Dict[str, Any]], out: RunStore, summary: ReportSummary) -> None:
    figure, axis = plt.subplots(figsize=(6, 4.5))
    rows = []
    for store, manifest in zip(stores, manifests):
        per_n = store.read_frame("scaling.csv")
        log_n, log_ipr = np.log(per_n["N"].to_numpy(float)), np.log(per_n["median_ipr"].to_numpy(float))
        fit = slope_interval(log_n, log_ipr)
        label = _label(manifest)
        rows.append({"run": os.path.basename(os.path.normpath(store.run_dir)), "label": label, "quantity": "ipr", **fit})
        axis.loglog(per_n["N"], per_n["median_ipr"], "o", label=f"{label}: slope {fit['slope']:.3f} ± {fit['ci_high'] - fit['slope']:.3f}")
        grid = np.linspace(log_n.min(), log_n.max(), 50)
        axis.loglog(np.exp(grid), np.exp(fit["intercept"] + fit["slope"] * grid), "-", color=axis.lines[-1].get_color())
    axis.set_xlabel("N")
    axis.set_ylabel("median IPR (bulk eigenvectors)")
    axis.legend()
    figure.tight_layout()
    _save(out, summary, "ipr_scaling.svg", figure)
    summary.tables["scaling_summary"] = pd.DataFrame(rows)


def _localization_report(stores: List[RunStore], manifests: List[Dict[str, Any]], out: RunStore, summary: ReportSummary) -> None:
    rows = []
    for store in stores:
        frame = store.read_frame("localization.csv")
        checks = store.read_frame("localization_checks.csv") if store.has("localization_checks.csv") else None
        for N, group in frame.groupby("N"):
            row = {
                "run": os.path.basename(os.path.normpath(store.run_dir)),
                "N": int(N),
                "eigenvectors": len(group),
                "median_ipr": float(group["ipr"].median()),
                "median_sup_norm_sq": float(group["sup_norm_sq"].median()),
                "median_mass_outside": float(group["mass_outside"].median()),
            }
            if checks is not None:
                sub = checks.loc[checks["N"] == N]
                row["sup_bound_fraction"] = float(sub["sup_bound_ok"].mean())
                row["route_bound_holds"] = bool((sub["mass_outside"] <= sub["route_bound"] + 1e-12).all())
            rows.append(row)
    table = pd.DataFrame(rows).sort_values(["N", "run"]).reset_index(drop=True)
    summary.tables["localization_summary"] = table
    if table["N"].nunique() >= 2:
        figure, axis = plt.subplots(figsize=(6, 4.5))
        axis.loglog(table["N"], table["median_ipr"], "o-", label="median IPR")
        axis.loglog(table["N"], table["median_sup_norm_sq"], "s-", label="median sup-norm squared")
        axis.set_xlabel("N")
        axis.legend()
        figure.tight_layout()
        _save(out, summary, "localization_scaling.svg", figure)


def _flow_report(stores: List[RunStore], manifests: List[Dict[str, Any]], out: RunStore, summary: ReportSummary) -> None:
    events = pd.concat([s.read_frame("events.csv") for s in stores], ignore_index=True)
    grids = pd.concat([s.read_frame("grid.csv") for s in stores], ignore_index=True)
    merged = events.merge(grids[["run_id", "N", "eta"]], on="run_id")
    rows = []
    for N, group in merged.groupby("N"):
        a_s = group.loc[group["statistic_name"] == "A_S"]
        a_g = group.loc[group["statistic_name"] == "A_G"]
        rows.append({
            "N": int(N),
            "eta": float(group["eta"].iloc[0]),
            "runs": len(a_s),
            "A_S_frequency": float(a_s["occurred"].mean()),
            "A_S_mean_statistic": float(a_s["value"].mean()),
            "A_S_max_statistic": float(a_s["value"].max()),
            "A_S_threshold": float(a_s["threshold"].iloc[0]),
            "A_G_frequency": float(a_g["occurred"].mean()),
            "A_G_max_statistic": float(a_g["value"].max()),
        })
    table = pd.DataFrame(rows)
    summary.tables["events_summary"] = table
    if len(table) >= 3:
        x = np.log(table["N"].to_numpy(float) * table["eta"].to_numpy(float))
        y = np.log(table["A_S_mean_statistic"].to_numpy(float))
        summary.tables["events_scaling"] = pd.DataFrame([{"quantity": "A_S_mean_statistic", **slope_interval(x, y)}])
        figure, axis = plt.subplots(figsize=(6, 4.5))
        axis.loglog(np.exp(x), np.exp(y), "o-", label="mean sup |S_t(xi_t) - S_0|")
        axis.set_xlabel("N eta")
        axis.legend()
        figure.tight_layout()
        _save(out, summary, "a_s_scaling.svg", figure)

    store = stores[0]
    trajectories = store.read_frame("trajectories.csv")
    eta = float(store.read_frame("grid.csv")["eta"].iloc[0])
    fig_t, ax_t = plt.subplots(figsize=(6, 4.5))
    fig_p, ax_p = plt.subplots(figsize=(6, 4.5))
    for (run_id, z_re, z_im), curve in trajectories.groupby(["run_id", "z0_re", "z0_im"], sort=False):
        ax_t.plot(curve["t"], curve["xi_im"], lw=0.8)
        ax_p.plot(curve["xi_re"], curve["xi_im"], lw=0.8)
        ax_p.plot([z_re], [z_im], "k.", ms=3)
    for axis in (ax_t, ax_p):
        axis.axhline(eta / 2.0, color="red", ls="--", lw=0.8, label="eta / 2")
        axis.legend()
    ax_t.set_xlabel("t")
    ax_t.set_ylabel("Im xi_t")
    ax_p.set_xlabel("Re xi_t")
    ax_p.set_ylabel("Im xi_t")
    fig_t.tight_layout()
    fig_p.tight_layout()
    _save(out, summary, "trajectories_im.svg", fig_t)
    _save(out, summary, "trajectories_plane.svg", fig_p)


def _concentration_report(stores: List[RunStore], manifests: List[Dict[str, Any]], out: RunStore, summary: ReportSummary) -> None:
    table = pd.concat([s.read_frame("concentration.csv") for s in stores], ignore_index=True)
    summary.tables["concentration_summary"] = table
    figure, axis = plt.subplots(figsize=(6, 4.5))
    for N, group in table.groupby("N"):
        positive = group.loc[group["tail_prob"] > 0]
        axis.semilogy(positive["mu"], positive["tail_prob"], "o-", label=f"N={N}")
    axis.set_xlabel("mu")
    axis.set_ylabel("P(sup |Im S_0 - E Im S_0| > mu)")
    axis.legend()
    figure.tight_layout()
    _save(out, summary, "tails.svg", figure)


def _subordination_report(stores: List[RunStore], manifests: List[Dict[str, Any]], out: RunStore, summary: ReportSummary) -> None:
    frame = pd.concat([s.read_frame("subordination.csv") for s in stores], ignore_index=True)
    rows = []
    for N, group in frame.groupby("N"):
        rows.append({
            "N": int(N),
            "median_rel_error": float(group["rel_error"].median()),
            "min_im_w_ratio": float(group["im_w_ratio"].min()),
            "max_shift_ratio": float(group["shift_ratio"].max()),
        })
    summary.tables["subordination_summary"] = pd.DataFrame(rows)


def _regularity_report(stores: List[RunStore], manifests: List[Dict[str, Any]], out: RunStore, summary: ReportSummary) -> None:
    frame = pd.concat([s.read_frame("regularity.csv") for s in stores], ignore_index=True)
    table = frame.groupby("N")[["K_m_fit", "K_m_cor_fit", "K_l_fit"]].median().reset_index()
    summary.tables["regularity_summary"] = table


_SECTIONS = {
    "scaling-sweep": _scaling_report,
    "localization": _localization_report,
    "flow-events": _flow_report,
    "concentration": _concentration_report,
    "subordination": _subordination_report,
    "regularity": _regularity_report,
}


def report(run_dirs: Sequence[str], out_dir: str) -> ReportSummary:
    """
    Aggregates compatible runs of one experiment kind.

    Raises:
        ReportError: On an empty run list, a missing manifest, or runs whose
            configs differ in non-variable fields (the diff is attached).
    """
    if not run_dirs:
        raise ReportError("usage: report needs at least one run directory")
    log = get_logger()
    stores = [RunStore(d, logger=log) for d in run_dirs]
    manifests = []
    for store in stores:
        manifest = store.load_manifest()
        if not manifest:
            raise ReportError(f"run directory '{store.run_dir}' has no readable manifest")
        manifests.append(manifest)
    kinds = sorted({m.get("experiment", "") for m in manifests})
    if len(kinds) != 1:
        raise ReportError("runs belong to different experiments", {"experiment": [m.get("experiment") for m in manifests]})
    diff = compatibility_diff(manifests)
    if diff:
        raise ReportError("refusing to combine runs with incompatible configs", diff)
    experiment = kinds[0]
    out = RunStore(out_dir, logger=log)
    summary = ReportSummary(experiment=experiment)
    _SECTIONS[experiment](stores, manifests, out, summary)
    for name, table in sorted(summary.tables.items()):
        out.write_frame(f"{name}.csv", table)
    log.info(
        f"[report] {experiment}: {len(stores)} run(s), {len(summary.tables)} table(s), "
        f"{len(summary.figures)} figure(s) in {out_dir}."
    )
    return summary
