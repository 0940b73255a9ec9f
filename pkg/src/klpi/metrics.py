"""CSV metrics sink.

Layout: the resolved configuration as ``# key = value`` comment lines, the
fixed header, then one row per emitted :class:`~klpi.trainer.MetricsRow`.
Floats use 9 significant digits.
"""

from __future__ import annotations

import math
from pathlib import Path

from .config import TrainConfig, serialize_config
from .trainer import METRIC_COLUMNS, MetricsRow

HEADER = ",".join(METRIC_COLUMNS)


def format_value(value) -> str:
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    return "%.9g" % value


def format_row(row: MetricsRow) -> str:
    vals = row.values()
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"refusing to write non-finite metrics row: {row}")
    return ",".join(format_value(v) for v in vals)


class CsvSink:
    """Writes metrics to a text stream; the header goes out exactly once."""

    def __init__(self, stream, config: TrainConfig | None = None):
        self._out = stream
        self._header_done = False
        self._config = config

    def _start(self) -> None:
        if self._config is not None:
            for line in serialize_config(self._config).splitlines():
                self._out.write(f"# {line}\n")
        self._out.write(HEADER + "\n")
        self._header_done = True

    def write(self, row: MetricsRow) -> None:
        line = format_row(row)  # validate before touching the stream
        if not self._header_done:
            self._start()
        self._out.write(line + "\n")
        self._out.flush()

    def close(self) -> None:
        if not self._header_done:
            self._start()
        self._out.flush()


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a metrics file back into (config dict of strings, rows)."""
    cfg, rows, header = {}, [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            cfg[key.strip()] = value.strip()
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append({k: (int(v) if k == "iter" else float(v))
                         for k, v in zip(header, line.split(","))})
    return cfg, rows
