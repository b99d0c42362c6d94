"""CSV, markdown and PNG renderings of transfer matrices, precision curves and loss traces."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Mapping, Sequence

from .experiments import PREFIX_METRIC, PrecisionCurve, TransferMatrix

FORMATS = ("csv", "md", "png")

# matrix columns in table order: evaluated model, proxy data, clean WER, success rates
MATRIX_COLUMNS = ("model", "data", "clean_wer", "targeted_word", "targeted_char", "untargeted_word",
                  "transferred", "n", "valid")

LossTraces = Mapping[str, Sequence[tuple[int, float]]]


class UnknownFormatError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def matrix_rows(matrix: TransferMatrix) -> tuple[list[str], list[list]]:
    extra = [m for m in matrix.metrics if m not in MATRIX_COLUMNS]
    prefix = PREFIX_METRIC in matrix.metrics
    header = list(MATRIX_COLUMNS[:3]) + (["clean_prefix_rate"] if prefix else []) + list(MATRIX_COLUMNS[3:6])
    header += extra + list(MATRIX_COLUMNS[6:])
    rows = []
    for proxy in matrix.proxies:
        for model in matrix.models:
            c = matrix.cell(proxy, model)
            rates = [c.rates.get(m, math.nan) for m in ("targeted_word", "targeted_char", "untargeted_word")]
            clean = [matrix.clean[model].get("wer", math.nan)]
            if prefix:
                clean.append(matrix.clean[model].get("prefix_rate", math.nan))
            rows.append([model, proxy, *clean, *rates,
                         *[c.rates.get(m, math.nan) for m in extra], c.transferred, c.n, c.valid])
    return header, rows


def curve_rows(curve: PrecisionCurve) -> tuple[list[str], list[list]]:
    header = ["k", "whitebox", "transfer", "repeats", "n_inputs"]
    return header, [[k, w, t, curve.repeats, curve.n_inputs]
                    for k, w, t in zip(curve.ks, curve.whitebox, curve.transfer)]


def trace_rows(traces: LossTraces) -> tuple[list[str], list[list]]:
    return ["series", "iteration", "loss"], [[name, it, loss] for name, series in traces.items()
                                             for it, loss in series]


def _rows(obj):
    if isinstance(obj, TransferMatrix):
        return matrix_rows(obj)
    if isinstance(obj, PrecisionCurve):
        return curve_rows(obj)
    if isinstance(obj, Mapping):
        return trace_rows(obj)
    raise TypeError(f"cannot render {type(obj).__name__}")


def to_csv(obj) -> str:
    header, rows = _rows(obj)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def to_markdown(obj) -> str:
    header, rows = _rows(obj)
    if isinstance(obj, TransferMatrix):
        # percentages, non-transferred cells in italics
        pct = {"targeted_word", "targeted_char", "untargeted_word", "clean_wer", "clean_prefix_rate", PREFIX_METRIC}
        body = []
        for r in rows:
            cells = []
            for h, v in zip(header, r):
                s = f"{100 * v:.1f}%" if h in pct and isinstance(v, float) and not math.isnan(v) else _fmt(v)
                if h in pct - {"clean_wer", "clean_prefix_rate"} and not r[header.index("transferred")]:
                    s = f"*{s}*"
                cells.append(s)
            body.append(cells)
    else:
        body = [[_fmt(v) for v in r] for r in rows]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    text = "\n".join(lines) + "\n"
    if isinstance(obj, TransferMatrix) and PREFIX_METRIC in obj.metrics:
        text += (f"\nOff-diagonal {PREFIX_METRIC}: mean {obj.off_diagonal_mean(PREFIX_METRIC):.3f}, "
                 f"sd {obj.off_diagonal_sd(PREFIX_METRIC):.3f}\n")
    return text


def _plot(obj, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if isinstance(obj, PrecisionCurve):
        ax.plot(obj.ks, obj.whitebox, marker="o", label="white-box")
        ax.plot(obj.ks, obj.transfer, marker="s", label="transfer")
        ax.set_xlabel("target precision k")
        ax.set_ylabel("top-k match accuracy")
        ax.set_ylim(0, 1.05)
        ax.set_xticks(obj.ks)
    elif isinstance(obj, TransferMatrix):
        metric = PREFIX_METRIC if PREFIX_METRIC in obj.metrics else "targeted_char"
        table = obj.rate_table(metric)
        im = ax.imshow(table, vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(obj.models)), obj.models, rotation=45, ha="right")
        ax.set_yticks(range(len(obj.proxies)), obj.proxies)
        ax.set_xlabel("evaluated model")
        ax.set_ylabel("proxy")
        for i in range(table.shape[0]):
            for j in range(table.shape[1]):
                if not math.isnan(table[i, j]):
                    ax.text(j, i, f"{table[i, j]:.2f}", ha="center", va="center", color="w")
        fig.colorbar(im, ax=ax, label=metric)
    else:
        for name, series in obj.items():
            if series:
                it, loss = zip(*series)
                ax.plot(it, loss, label=name)
        ax.set_xlabel("attack step")
        ax.set_ylabel("targeted loss")
        ax.set_yscale("log")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_report(obj, path: str | Path, fmt: str | None = None) -> Path:
    """Write ``obj`` (TransferMatrix, PrecisionCurve, or a name -> [(step, loss)] mapping) to ``path``.

    The format comes from ``fmt`` or the file suffix.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise UnknownFormatError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")
    if path.suffix.lstrip(".").lower() != fmt:
        path = path.with_suffix("." + fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path.write_text(to_csv(obj), encoding="utf-8")
    elif fmt == "md":
        path.write_text(to_markdown(obj), encoding="utf-8")
    else:
        _plot(obj, path)
    return path
