"""Figures written to files from the long-format rows (Agg backend)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _series(long, suffix=None):
    out = defaultdict(lambda: ([], []))
    for _, n, s, v in long:
        if suffix is not None:
            if not s.endswith(suffix):
                continue
            s = s[: -len(suffix)]
        if v is None or v != v or v <= 0:
            continue
        out[s][0].append(n)
        out[s][1].append(v)
    return out


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def _loglog(long, suffix, ylabel, title, path, xlabel="n"):
    fig, ax = plt.subplots(figsize=(5, 4))
    for lab, (x, y) in sorted(_series(long, suffix).items()):
        ax.loglog(x, y, "o-", label=lab)
    ax.set(xlabel=xlabel, ylabel=ylabel, title=title)
    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_bundle(kind, bundle, out_dir):
    """Write the figures for one experiment; returns the written paths."""
    out = Path(out_dir)
    long = bundle.long
    if kind == "convergence":
        return [_loglog(long, ":rel_err", "relative error", "energy convergence", out / "convergence.png"),
                _loglog(long, ":gamma", "gamma_n", "self-interaction", out / "gamma.png")]
    if kind == "reg_compare":
        sel = [r for r in long if r[2] in ("spread", "discretization_error")]
        return [_loglog([(e, n, s + ":v", v) for e, n, s, v in sel], ":v", "energy", "regularizer spread",
                        out / "reg_compare.png")]
    if kind == "gamma_regime":
        return [_loglog(long, ":gamma", "gamma_n", "gamma_n by schedule", out / "gamma_regime.png"),
                _loglog(long, ":ratio", "log(1/delta)/n", "regime ratio", out / "regime_ratio.png")]
    if kind == "relax_demo":
        paths = [_loglog([(e, n + 1, s, v) for e, n, s, v in long], ":objective", "objective",
                         "relaxation trace", out / "relax_trace.png", xlabel="iteration + 1")]
        for name, d in bundle.artifacts.items():
            if not name.endswith("_minimizer.json"):
                continue
            import numpy as np
            ny, nx = d["shape"]
            vals = np.array(d["species"], dtype=float).reshape(-1, ny, nx)
            fig, axes = plt.subplots(1, len(vals), figsize=(3.2 * len(vals), 3), squeeze=False)
            x0, x1, y0, y1 = d["box"]
            for s, ax in enumerate(axes[0]):
                im = ax.imshow(vals[s], origin="lower", extent=(x0, x1, y0, y1))
                ax.set_title(f"species {s}")
                fig.colorbar(im, ax=ax, shrink=0.8)
            paths.append(_save(fig, out / name.replace(".json", ".png")))
        return paths
    if kind == "kernel_verify":
        checks = bundle.summary["checks"]
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(checks) + 1))
        names = [c["name"] for c in checks]
        ratios = [max(c["ratio"], 1e-18) for c in checks]
        ax.barh(names, ratios, color=["tab:green" if c["pass"] else "tab:red" for c in checks])
        ax.axvline(1.0, color="k", lw=0.8)
        ax.set(xscale="log", xlabel="error / tolerance", title="kernel verification")
        return [_save(fig, out / "kernel_verify.png")]
    return []
