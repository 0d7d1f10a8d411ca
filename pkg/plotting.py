"""Nash-gap curves from an experiment records CSV, rendered to deterministic SVG."""

import logging
import os
import re
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from csv_io import read_records  # noqa: E402

logger = logging.getLogger("mailbench.plotting")

SVG_RC = {"svg.hashsalt": "mailbench", "svg.fonttype": "path"}


def _safe_name(env: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", env)


def _curves(rows: Sequence[Dict[str, object]]) -> Dict[str, Dict[int, List[float]]]:
    curves: Dict[str, Dict[int, List[float]]] = {}
    for row in rows:
        curves.setdefault(row["algorithm"], {}).setdefault(row["expert_queries"], []).append(row["nash_gap"])
    return curves


def _render(path: str, title: str, rows: Sequence[Dict[str, object]]) -> None:
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        curves = _curves(rows)
        for algorithm in sorted(curves):
            by_queries = curves[algorithm]
            x = np.array(sorted(by_queries), dtype=float)
            mean = np.array([np.mean(by_queries[q]) for q in sorted(by_queries)])
            std = np.array([np.std(by_queries[q]) for q in sorted(by_queries)])
            ax.plot(x, mean, marker="o", label=algorithm)
            ax.fill_between(x, mean - std, mean + std, alpha=0.2)
        if curves:
            all_x = [q for c in curves.values() for q in c]
            ax.set_xscale("log" if min(all_x) > 0 else "symlog")
            ax.legend()
        ax.set_xlabel("expert queries")
        ax.set_ylabel("Nash gap")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def plot_records(csv_path: str, out_path: str) -> List[str]:
    """Render one SVG per env: mean Nash gap against expert queries with a +-1 std band.

    A single env is written to `out_path`; several envs go to `<stem>_<env>.svg` next to
    it. A CSV without rows yields one empty-axes SVG at `out_path` and a warning.

    Returns:
        Paths of the written SVG files.

    Raises:
        FileNotFoundError: if the CSV does not exist.
        KeyError: if required columns are missing.
        ValueError: if a row is malformed.
    """
    rows = read_records(csv_path)
    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    if not rows:
        logger.warning("no records in %s; writing empty axes to %s", csv_path, out_path)
        _render(out_path, "no records", [])
        return [out_path]
    envs = sorted({r["env"] for r in rows})
    if len(envs) == 1:
        _render(out_path, envs[0], rows)
        return [out_path]
    stem = os.path.splitext(out_path)[0]
    written = []
    for env in envs:
        path = f"{stem}_{_safe_name(env)}.svg"
        _render(path, env, [r for r in rows if r["env"] == env])
        written.append(path)
    logger.info("wrote %d plots from %s", len(written), csv_path)
    return written
