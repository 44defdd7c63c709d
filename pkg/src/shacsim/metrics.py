"""Per-episode CSV logging: metrics.csv (deterministic) and timers.csv.

metrics.csv contains only quantities that are reproducible from (config,
seed); wall-clock phase timings go to timers.csv so the metrics file is
byte-identical across repeated runs.
"""

from __future__ import annotations

import os

METRIC_COLUMNS = ["episode", "env_steps", "policy_loss", "value_loss_final",
                  "actor_grad_norm", "eval_return_mean", "eval_return_std",
                  "terminations_in_episode"]
TIMER_COLUMNS = ["episode", "forward_s", "backward_s", "critic_s"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Appends one flushed row per episode to metrics.csv and timers.csv."""

    def __init__(self, out_dir, resume=False):
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if resume else "w"
        self.metrics = open(os.path.join(out_dir, "metrics.csv"), mode)
        self.timers = open(os.path.join(out_dir, "timers.csv"), mode)
        if not resume:
            self.metrics.write(",".join(METRIC_COLUMNS) + "\n")
            self.timers.write(",".join(TIMER_COLUMNS) + "\n")
            self.metrics.flush()
            self.timers.flush()

    def write(self, row, timings):
        self.metrics.write(",".join(_fmt(row.get(c)) for c in METRIC_COLUMNS) + "\n")
        self.metrics.flush()
        trow = dict(timings, episode=row["episode"])
        self.timers.write(",".join(_fmt(trow.get(c)) for c in TIMER_COLUMNS) + "\n")
        self.timers.flush()

    def close(self):
        self.metrics.close()
        self.timers.close()


def read_metrics(path):
    """Read metrics.csv into a dict of column -> list (floats where possible)."""
    import csv

    with open(path) as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    out = {c: [] for c in reader.fieldnames}
    for r in rows:
        for c, v in r.items():
            if v == "" or v is None:
                out[c].append(None)
            else:
                try:
                    out[c].append(float(v))
                except ValueError:
                    out[c].append(v)
    return out
