"""Emit standalone matplotlib scripts next to result CSVs.

The package never imports matplotlib itself; each script reads its CSV
(skipping the provenance comment) and draws the figure when run by hand.
"""

import logging
from enum import StrEnum
from pathlib import Path

logger = logging.getLogger(__name__)


class PlotKind(StrEnum):
    SURFACE = "surface"  # value over the grid of the first two columns
    CURVE = "curve"  # one or more columns against tau
    TABLE = "table"  # estimates with error bars
    BAR = "bar"  # one value per labelled row


_HEADER = '''"""Plot {csv_name} (generated by robustvol)."""

from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

CSV = Path(__file__).with_name("{csv_name}")
df = pd.read_csv(CSV, comment="#")
'''

_BODIES = {
    PlotKind.SURFACE: '''
value = "{value}"
y_name, x_name = df.columns[:2]
fig = plt.figure()
ax = fig.add_subplot(projection="3d")
pivot = df.pivot_table(index=y_name, columns=x_name, values=value)
X, Y = np.meshgrid(pivot.columns.values, pivot.index.values)
ax.plot_surface(X, Y, pivot.values, cmap="viridis")
ax.set_xlabel(x_name)
ax.set_ylabel(y_name)
ax.set_zlabel(value)
''',
    PlotKind.CURVE: '''
fig, ax = plt.subplots()
for column in [c for c in df.columns if c != "tau"]:
    if pd.api.types.is_numeric_dtype(df[column]):
        ax.plot(df["tau"], df[column], label=column)
ax.set_xlabel("tau")
ax.legend()
''',
    PlotKind.BAR: '''
fig, ax = plt.subplots()
ax.bar(df["{label}"].astype(str), df["{value}"])
ax.set_xlabel("{label}")
ax.set_ylabel("{value}")
''',
    PlotKind.TABLE: '''
fig, ax = plt.subplots()
ax.errorbar(df["quantity"], df["estimate"], yerr=3 * df["stderr"], fmt="o")
ax.set_ylabel("estimate (3 SE bars)")
''',
}

_FOOTER = '''
fig.tight_layout()
fig.savefig(CSV.with_suffix(".png"), dpi=150)
'''


def write_plot_script(
    csv_path: str | Path, kind: PlotKind | str, *, value: str = "epsilon", label: str = "tau"
) -> Path:
    """
    Write ``<stem>_plot.py`` beside ``csv_path``.

    Args:
        csv_path: CSV the script will read
        kind: surface, curve, bar or table
        value: Column drawn as the surface height or bar length
        label: Column naming the bars (bar plots only)

    Returns:
        Path of the generated script
    """
    csv_path = Path(csv_path)
    kind = PlotKind(kind)
    script = csv_path.with_name(f"{csv_path.stem}_plot.py")
    body = _BODIES[kind].format(value=value, label=label)
    text = _HEADER.format(csv_name=csv_path.name) + body + _FOOTER
    script.write_text(text)
    logger.debug(f"Wrote plot script {script}")
    return script
