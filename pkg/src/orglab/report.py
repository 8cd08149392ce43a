"""Analysis over arena event logs: maturity-cost trends and exports.

Mirrors the headline population analysis: matured organisms are indexed
by completion order, their maturity cost (virtual multiply-accumulate
units) is smoothed with a moving average, and the last-quartile mean is
compared against the first-quartile mean.  A falling ratio is the
signature of selection for faster reproduction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .events import Event, read_events

CSV_HEADER = ("index", "maturity_cost", "moving_avg", "lr", "hid", "noi", "aux")


class InsufficientData(ValueError):
    """Fewer than two matured organisms; no trend to speak of."""


@dataclass(frozen=True)
class MaturityRecord:
    """One matured organism in the chosen indexing order (index is 1-based)."""

    index: int
    organism_id: str
    vcost: int
    epochs: int
    lr: float
    hid: int
    noi: int
    aux: int
    spawn_seq: int
    maturity_seq: int


@dataclass
class SummaryStats:
    records: list[MaturityRecord]
    window: int
    moving_avg: list[float]  # length N - window + 1 (empty when N < window)
    first_quartile_mean: float
    last_quartile_mean: float
    quartile_size: int

    @property
    def ratio(self) -> float:
        """Mean maturity cost, last quartile over first."""
        return self.last_quartile_mean / self.first_quartile_mean

    def costs(self) -> list[int]:
        return [r.vcost for r in self.records]


def summarize(events: list[Event], window: int = 16,
              index: str = "maturity") -> SummaryStats:
    """Pure function of the log: maturity-cost series and its aggregates.

    index="maturity" orders matured organisms by when they completed
    training (the headline indexing); index="spawn" orders them by birth.
    """
    if index not in ("maturity", "spawn"):
        raise ValueError(f"unknown indexing {index!r}")
    if window < 1:
        raise ValueError("window must be >= 1")

    spawn_seq = {e.id: e.seq for e in events if e.kind == "spawn"}
    matured = [e for e in events if e.kind == "maturity"]
    if len(matured) < 2:
        raise InsufficientData(f"need >= 2 matured organisms, found {len(matured)}")
    if index == "spawn":
        matured = sorted(matured, key=lambda e: spawn_seq.get(e.id, e.seq))

    records = [
        MaturityRecord(
            index=i + 1, organism_id=e.id, vcost=e.vcost, epochs=e.epochs,
            lr=e.lr, hid=e.hid, noi=e.noi, aux=e.aux,
            spawn_seq=spawn_seq.get(e.id, -1), maturity_seq=e.seq)
        for i, e in enumerate(matured)
    ]
    costs = [r.vcost for r in records]
    n = len(costs)

    moving = []
    if n >= window:
        running = sum(costs[:window])
        moving.append(running / window)
        for i in range(window, n):
            running += costs[i] - costs[i - window]
            moving.append(running / window)

    q = max(1, math.ceil(n / 4))
    first_mean = sum(costs[:q]) / q
    last_mean = sum(costs[-q:]) / q
    return SummaryStats(records=records, window=window, moving_avg=moving,
                        first_quartile_mean=first_mean,
                        last_quartile_mean=last_mean, quartile_size=q)


def summarize_log(path: str | Path, window: int = 16,
                  index: str = "maturity") -> SummaryStats:
    return summarize(read_events(path), window=window, index=index)


def export_csv(stats: SummaryStats, path: str | Path) -> Path:
    """One row per matured organism; moving_avg is blank before the window fills."""
    path = Path(path)
    w = stats.window
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in stats.records:
            if r.index >= w and stats.moving_avg:
                avg = repr(stats.moving_avg[r.index - w])
            else:
                avg = ""
            writer.writerow([r.index, r.vcost, avg, f"{r.lr:.6f}",
                             r.hid, r.noi, r.aux])
    return path


def read_csv(path: str | Path) -> list[dict]:
    """Parse an exported CSV back into typed rows (for round-trip checks)."""
    rows = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for rec in reader:
            rows.append({
                "index": int(rec["index"]),
                "maturity_cost": int(rec["maturity_cost"]),
                "moving_avg": float(rec["moving_avg"]) if rec["moving_avg"] else None,
                "lr": float(rec["lr"]),
                "hid": int(rec["hid"]),
                "noi": int(rec["noi"]),
                "aux": int(rec["aux"]),
            })
    return rows


def _polyline(points: list[tuple[float, float]]) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="#1f6feb" stroke-width="1.5" '
            f'points="{coords}"/>')


def export_svg(stats: SummaryStats, path: str | Path,
               width: int = 640, height: int = 400) -> Path:
    """Line chart of the moving-average maturity cost against organism index.

    Hand-rolled SVG: one polyline for the series, plain lines for axes.
    When fewer organisms than the window exist, the raw costs are drawn
    instead so the chart is never empty.
    """
    path = Path(path)
    if stats.moving_avg:
        series = stats.moving_avg
        x0 = stats.window  # moving average k covers indices k-W+1..k
        label = f"moving average (window {stats.window}) of maturity cost"
    else:
        series = [float(c) for c in stats.costs()]
        x0 = 1
        label = "maturity cost"

    ml, mr, mt, mb = 60.0, 15.0, 25.0, 35.0
    pw, ph = width - ml - mr, height - mt - mb
    xs = list(range(x0, x0 + len(series)))
    xmin, xmax = xs[0], xs[-1]
    ymin, ymax = min(series), max(series)
    if xmax == xmin:
        xmax += 1
    if ymax == ymin:
        ymax += 1.0
    pad = 0.05 * (ymax - ymin)
    ymin -= pad
    ymax += pad

    def px(x: float) -> float:
        return ml + (x - xmin) / (xmax - xmin) * pw

    def py(y: float) -> float:
        return mt + (ymax - y) / (ymax - ymin) * ph

    points = [(px(x), py(y)) for x, y in zip(xs, series)]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph:.2f}" x2="{ml + pw:.2f}" '
        f'y2="{mt + ph:.2f}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph:.2f}" stroke="black"/>',
        _polyline(points),
        f'<text x="{ml + pw / 2:.2f}" y="{height - 8}" text-anchor="middle" '
        f'font-size="12">organism index</text>',
        f'<text x="{ml - 45:.2f}" y="{mt + ph / 2:.2f}" font-size="12" '
        f'transform="rotate(-90 {ml - 45:.2f} {mt + ph / 2:.2f})" '
        f'text-anchor="middle">{label}</text>',
        f'<text x="{ml + 4}" y="{mt - 8}" font-size="11">'
        f'min {min(series):.3g} / max {max(series):.3g}</text>',
        "</svg>",
    ]
    path.write_text("\n".join(parts) + "\n", encoding="ascii")
    return path


def render_figures(stats: SummaryStats, fig_dir: str | Path) -> list[Path]:
    """Matplotlib renderings of the trend and the genome-parameter drift."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    out: list[Path] = []
    idx = [r.index for r in stats.records]
    costs = stats.costs()

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(idx, costs, ".", color="0.6", markersize=4, label="maturity cost")
    if stats.moving_avg:
        ax.plot(range(stats.window, stats.window + len(stats.moving_avg)),
                stats.moving_avg, color="tab:blue", linewidth=1.8,
                label=f"moving average (W={stats.window})")
    ax.set_xlabel("organism index (maturity order)")
    ax.set_ylabel("virtual maturity cost (MAC units)")
    ax.legend(frameon=False)
    ax.set_title(f"last/first quartile ratio: {stats.ratio:.3f}")
    fig.tight_layout()
    p = fig_dir / "maturity_cost.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    out.append(p)

    fig, axes = plt.subplots(2, 2, figsize=(8, 5.5), sharex=True)
    for ax, key in zip(axes.flat, ("lr", "hid", "noi", "aux")):
        ax.plot(idx, [getattr(r, key) for r in stats.records],
                ".", markersize=4, color="tab:green")
        ax.set_ylabel(key)
    for ax in axes[1]:
        ax.set_xlabel("organism index")
    fig.suptitle("genome parameters of matured organisms")
    fig.tight_layout()
    p = fig_dir / "genome_drift.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    out.append(p)
    return out
