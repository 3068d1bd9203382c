from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Tuple

from .lintopf import Polygon


def plot_polygons(
    polygons: Sequence[Tuple[str, Polygon]],
    path: Path,
    doe_point: Optional[Tuple[float, float]] = None,
) -> Path:
    """Overlay traced regions (and the equal-allocation envelope) in one PNG.

    Needs the ``plot`` extra (matplotlib).
    """
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt
    from matplotlib.patches import Polygon as Patch

    fig, ax = plt.subplots(figsize=(5, 5))
    for k, (label, polygon) in enumerate(polygons):
        if polygon.empty:
            continue
        patch = Patch(polygon.points, closed=True, fill=False, edgecolor=f"C{k}", label=label)
        ax.add_patch(patch)
    if doe_point is not None:
        ax.plot(*doe_point, "k*", label="DOE")
    pair = polygons[0][1].pair if polygons else ("p_a", "p_b")
    ax.set_xlabel(f"{pair[0]} (kW)")
    ax.set_ylabel(f"{pair[1]} (kW)")
    ax.autoscale_view()
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
