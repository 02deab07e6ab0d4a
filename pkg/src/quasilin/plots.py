"""Figure rendering for run reports.

Every report emitted with the "png" format gets its figures written next to
the delimited output: ray tracks for analyze runs, convergence and profile
plots for solve runs, verdict bars for verify runs, and sweep tables as
line plots.  All figures go through the Agg backend; nothing is shown
interactively.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_analyze",
    "render_solve",
    "render_verify",
    "render_sweep",
]


def _save(fig, outdir, name):
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def render_analyze(report: dict, outdir: str, worst_ray=None) -> list:
    paths = []
    trap = report.get("trap", {})
    fig, ax = plt.subplots(figsize=(6, 6))
    R = trap.get("R", 1.0)
    theta = np.linspace(0, 2 * np.pi, 200)
    ax.plot(2 * R * np.cos(theta), 2 * R * np.sin(theta), "k--", lw=1,
            label="2R ball")
    ax.plot(R * np.cos(theta), R * np.sin(theta), "k:", lw=1, label="R ball")
    if worst_ray is not None and len(worst_ray.samples) > 1:
        pos = worst_ray.positions
        if pos.shape[1] == 1:
            ax.plot(pos[:, 0], np.zeros_like(pos[:, 0]), "r-", lw=1.2,
                    label="worst ray")
        else:
            ax.plot(pos[:, 0], pos[:, 1], "r-", lw=1.2, label="worst ray")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    flag = "trapped" if trap.get("trapped") else "nontrapping"
    ax.set_title(f"L = {trap.get('L', float('nan')):.3g} ({flag})")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    paths.append(_save(fig, outdir, "rays.png"))

    lengths = trap.get("seed_lengths")
    if lengths:
        fig, ax = plt.subplots(figsize=(6, 3.2))
        ax.plot(sorted(lengths), ".-", ms=3)
        ax.axhline(trap.get("L", 0.0), color="r", ls="--", lw=1)
        ax.set_xlabel("seed (sorted)")
        ax.set_ylabel("in-ball length")
        ax.grid(alpha=0.3)
        paths.append(_save(fig, outdir, "seed_lengths.png"))
    return paths


def render_solve(report: dict, outdir: str, solution=None) -> list:
    paths = []
    trace = report.get("trace", {})
    diffs = trace.get("diff_norms", [])
    if diffs:
        fig, ax = plt.subplots(figsize=(6, 3.6))
        ax.semilogy(range(1, len(diffs) + 1), diffs, "o-")
        ax.set_xlabel("iterate")
        ax.set_ylabel("difference norm")
        ax.set_title("iteration convergence")
        ax.grid(alpha=0.3, which="both")
        paths.append(_save(fig, outdir, "convergence.png"))

    if solution is not None:
        u = solution.u
        fig, ax = plt.subplots(figsize=(7, 3.6))
        if u.spec.d == 1:
            x = u.spec.axis()
            ax.plot(x, np.abs(u.data[0, 0]), label="|u(0)|")
            ax.plot(x, np.abs(u.data[-1, 0]), label="|u(T)|")
            ax.set_xlabel("x")
            ax.legend(fontsize=8)
        else:
            im = ax.imshow(np.abs(u.data[-1, 0]).T, origin="lower",
                           extent=[-u.spec.box / 2, u.spec.box / 2] * 2)
            fig.colorbar(im, ax=ax, label="|u(T)|")
        ax.set_title("solution profile")
        paths.append(_save(fig, outdir, "profile.png"))

    env = report.get("envelope")
    if env:
        fig, ax = plt.subplots(figsize=(6, 3.6))
        k = range(len(env["envelope"]))
        ax.semilogy(k, env["envelope"], "s-", label="data envelope")
        ax.semilogy(k, env["solution_blocks"], "o-", label="solution blocks")
        ax.set_xlabel("dyadic band")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3, which="both")
        paths.append(_save(fig, outdir, "envelope.png"))
    return paths


def render_verify(report: dict, outdir: str) -> list:
    checks = report.get("checks", {})
    if not checks:
        return []
    names = list(checks)
    vals = [1.0 if checks[n]["ok"] else 0.0 for n in names]
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(names) + 1.2))
    colors = ["tab:green" if v else "tab:red" for v in vals]
    ax.barh(range(len(names)), [1.0] * len(names), color=colors, alpha=0.7)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xticks([])
    ax.set_title("property suite verdicts")
    return [_save(fig, outdir, "verdicts.png")]


def render_sweep(report: dict, outdir: str) -> list:
    table = report.get("table", [])
    if not table:
        return []
    keys = [k for k in table[0] if k != "index" and isinstance(table[0][k], (int, float))]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for k in keys:
        ax.plot(range(len(table)), [row.get(k, np.nan) for row in table],
                "o-", label=k)
    ax.set_xlabel("sweep cell")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return [_save(fig, outdir, "sweep.png")]
