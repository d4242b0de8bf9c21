"""Session logs and the study metrics computed over them.

A session log holds one record per processed frame: instrument positions,
per-arm minimum distances, safety zone and events. From a completed log the
five task metrics are computed (overall minimum distance, mean distance
inside the risk area, dwell-based collision count, total path length,
execution time), plus the usability questionnaire score and an exact
signed-rank comparison between the two viewing modalities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

RISK_AREA_M = 0.03
COLLISION_RADIUS_M = 0.005
COLLISION_DWELL_S = 1.0


class SessionError(ValueError):
    pass


@dataclass
class FrameRecord:
    m: int
    t_s: float
    c_l_m: Optional[list] = None
    c_r_m: Optional[list] = None
    d_ml_m: Optional[float] = None
    d_mr_m: Optional[float] = None
    zone: str = "SAFE"
    color: Optional[list] = None
    events: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "m": self.m, "t_s": self.t_s, "c_l_m": self.c_l_m,
            "c_r_m": self.c_r_m, "d_ml_m": self.d_ml_m,
            "d_mr_m": self.d_mr_m, "zone": self.zone, "color": self.color,
            "events": self.events}, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "FrameRecord":
        d = json.loads(line)
        return FrameRecord(m=d["m"], t_s=d["t_s"], c_l_m=d["c_l_m"],
                           c_r_m=d["c_r_m"], d_ml_m=d["d_ml_m"],
                           d_mr_m=d["d_mr_m"], zone=d["zone"],
                           color=d["color"], events=d["events"])


@dataclass
class SessionLog:
    modality: str = "experiment"
    seed: int = 0
    records: list[FrameRecord] = field(default_factory=list)

    def append(self, record: FrameRecord) -> None:
        if self.records and record.t_s <= self.records[-1].t_s:
            raise SessionError("record times must be strictly increasing")
        self.records.append(record)

    def events(self) -> list[tuple[float, dict]]:
        out = []
        for r in self.records:
            for e in r.events:
                out.append((r.t_s, e))
        return out


def write_session_jsonl(log: SessionLog, path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"type": "session_header", "schema": 1,
                            "modality": log.modality, "seed": log.seed},
                           sort_keys=True) + "\n")
        for r in log.records:
            f.write(r.to_json() + "\n")


def read_session_jsonl(path) -> SessionLog:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("type") != "session_header":
            raise SessionError(f"{path}: missing session header line")
        log = SessionLog(modality=header["modality"], seed=header.get("seed", 0))
        for line in f:
            if line.strip():
                log.append(FrameRecord.from_json(line))
    return log


# ---------------------------------------------------------------------------
# Task metrics


def _arm_distances(log: SessionLog) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.array([r.t_s for r in log.records])
    dl = np.array([r.d_ml_m if r.d_ml_m is not None else np.nan
                   for r in log.records])
    dr = np.array([r.d_mr_m if r.d_mr_m is not None else np.nan
                   for r in log.records])
    return t, dl, dr


def d_min(log: SessionLog) -> float:
    """Smallest per-frame minimum distance over both arms and all frames."""
    _, dl, dr = _arm_distances(log)
    values = np.concatenate([dl[np.isfinite(dl)], dr[np.isfinite(dr)]])
    if values.size == 0:
        raise SessionError("log carries no distance samples")
    return float(values.min())


def d_mean(log: SessionLog, risk_limit_m: float = RISK_AREA_M) -> Optional[float]:
    """Mean of the per-arm per-frame minima strictly inside the risk area;
    None when the instruments never entered it."""
    _, dl, dr = _arm_distances(log)
    pool = np.concatenate([dl[np.isfinite(dl) & (dl < risk_limit_m)],
                           dr[np.isfinite(dr) & (dr < risk_limit_m)]])
    if pool.size == 0:
        return None
    return float(pool.mean())


def _runs_below(t: np.ndarray, d: np.ndarray, r: float) -> list[tuple[float, float]]:
    runs = []
    start = None
    prev_t = None
    for ti, di in zip(t, d):
        below = np.isfinite(di) and di < r
        if below and start is None:
            start = ti
        elif not below and start is not None:
            runs.append((start, prev_t))
            start = None
        prev_t = ti
    if start is not None:
        runs.append((start, t[-1]))
    return runs


def collision_count(log: SessionLog, r: float = COLLISION_RADIUS_M,
                    dwell_s: float = COLLISION_DWELL_S,
                    mode: str = "per_run") -> int:
    """Dwell-based collision count.

    per_run: each maximal below-threshold run lasting at least dwell_s counts
    once. per_second: such a run counts floor(duration / dwell_s) times.
    Arms are counted independently and summed.
    """
    if mode not in ("per_run", "per_second"):
        raise ValueError(f"unknown mode {mode!r}")
    t, dl, dr = _arm_distances(log)
    total = 0
    for d in (dl, dr):
        for start, end in _runs_below(t, d, r):
            duration = end - start
            if duration >= dwell_s:
                total += 1 if mode == "per_run" else int(duration // dwell_s)
    return total


def path_length(log: SessionLog) -> float:
    """Sum of per-frame end-effector displacements over both arms."""
    cl = np.array([r.c_l_m for r in log.records], dtype=np.float64)
    cr = np.array([r.c_r_m for r in log.records], dtype=np.float64)
    if len(cl) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(cl, axis=0), axis=1))
                 + np.sum(np.linalg.norm(np.diff(cr, axis=0), axis=1)))


def execution_time(log: SessionLog) -> float:
    """Task end marker minus start marker, seconds."""
    t_start = None
    t_end = None
    for t, e in log.events():
        if e.get("event") == "trial_start" and t_start is None:
            t_start = t
        if e.get("event") == "trial_end":
            t_end = t
    if t_start is None or t_end is None:
        raise SessionError("log is missing trial start/end markers")
    return float(t_end - t_start)


# ---------------------------------------------------------------------------
# Usability questionnaire


def sus_score(answers: Sequence[int]) -> float:
    """Ten-item usability score in [0, 100]: odd items credit agreement,
    even items credit disagreement, scaled by 2.5."""
    if len(answers) != 10:
        raise SessionError("usability form needs exactly 10 answers")
    if any(not (1 <= int(a) <= 5) for a in answers):
        raise SessionError("answers must be integers in 1..5")
    odd = sum(int(answers[k]) - 1 for k in range(0, 10, 2))
    even = sum(5 - int(answers[k]) for k in range(1, 10, 2))
    return (odd + even) * 2.5


# ---------------------------------------------------------------------------
# Paired signed-rank test


@dataclass
class WilcoxonResult:
    w: float          # min of the two signed-rank sums
    w_plus: float
    w_minus: float
    n: int            # pairs after dropping zero differences
    p_two_sided: float
    exact: bool


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float],
                         exact_limit: int = 25) -> WilcoxonResult:
    """Paired two-sided signed-rank test.

    Zero differences are dropped; ties get midranks. Up to exact_limit pairs
    the p-value enumerates the full sign-assignment distribution (computed by
    subset-sum convolution over doubled ranks, identical to enumerating all
    2^n assignments); beyond that a tie-corrected normal approximation with
    continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SessionError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise SessionError("all differences are zero")
    ranks = stats.rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    w_minus = total - w_plus
    if n <= exact_limit:
        doubled = np.rint(ranks * 2).astype(np.int64)
        dist = np.zeros(int(doubled.sum()) + 1)
        dist[0] = 1.0
        for r in doubled:
            shifted = np.zeros_like(dist)
            shifted[r:] = dist[:-r] if r > 0 else dist
            dist = dist + shifted
        denom = 2.0 ** n
        s = int(round(2 * w_plus))
        p_le = dist[:s + 1].sum() / denom
        p_ge = dist[s:].sum() / denom
        p = min(1.0, 2.0 * min(p_le, p_ge))
        return WilcoxonResult(w=min(w_plus, w_minus), w_plus=w_plus,
                              w_minus=w_minus, n=n, p_two_sided=float(p),
                              exact=True)
    # Normal approximation with tie correction.
    mean = n * (n + 1) / 4.0
    tie_counts = np.unique(ranks, return_counts=True)[1]
    tie_term = np.sum(tie_counts ** 3 - tie_counts) / 2.0
    var = (n * (n + 1) * (2 * n + 1) - tie_term) / 24.0
    z = (w_plus - mean - 0.5 * np.sign(w_plus - mean)) / math.sqrt(var)
    p = min(1.0, 2.0 * stats.norm.sf(abs(z)))
    return WilcoxonResult(w=min(w_plus, w_minus), w_plus=w_plus,
                          w_minus=w_minus, n=n, p_two_sided=float(p),
                          exact=False)


def significance_stars(p: Optional[float]) -> str:
    if p is None or p > 0.05:
        return "ns"
    if p > 0.01:
        return "*"
    if p > 0.001:
        return "**"
    if p > 0.0001:
        return "***"
    return "****"


# ---------------------------------------------------------------------------
# Modality comparison


@dataclass
class MetricRow:
    metric: str
    unit: str
    control_mean: Optional[float]
    experiment_mean: Optional[float]
    p: Optional[float]
    stars: str
    n_pairs: int

    def as_dict(self) -> dict:
        return {"metric": self.metric, "unit": self.unit,
                "control_mean": self.control_mean,
                "experiment_mean": self.experiment_mean,
                "p": self.p, "significance": self.stars,
                "n_pairs": self.n_pairs}


@dataclass
class StudyReport:
    rows: list[MetricRow]

    def as_dict(self) -> dict:
        return {"rows": [r.as_dict() for r in self.rows]}

    def to_text(self) -> str:
        header = f"{'Metric':<28}{'Unit':<8}{'Control':>12}{'Experiment':>12}{'P value':>12}  sig"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            c = "-" if r.control_mean is None else f"{r.control_mean:.4f}"
            e = "-" if r.experiment_mean is None else f"{r.experiment_mean:.4f}"
            p = "-" if r.p is None else f"{r.p:.4f}"
            lines.append(f"{r.metric:<28}{r.unit:<8}{c:>12}{e:>12}{p:>12}  {r.stars}")
        return "\n".join(lines)


def _paired_row(name: str, unit: str, control: list, experiment: list,
                scale: float = 1.0) -> MetricRow:
    pairs = [(c, e) for c, e in zip(control, experiment)
             if c is not None and e is not None]
    if not pairs:
        return MetricRow(name, unit, None, None, None, "ns", 0)
    c = np.array([p[0] for p in pairs]) * scale
    e = np.array([p[1] for p in pairs]) * scale
    try:
        p_val = wilcoxon_signed_rank(c, e).p_two_sided
    except SessionError:
        p_val = None
    return MetricRow(name, unit, float(c.mean()), float(e.mean()), p_val,
                     significance_stars(p_val), len(pairs))


def compare_modalities(control: Sequence[SessionLog],
                       experiment: Sequence[SessionLog],
                       control_sus: Optional[Sequence[Sequence[int]]] = None,
                       experiment_sus: Optional[Sequence[Sequence[int]]] = None,
                       collision_mode: str = "per_run") -> StudyReport:
    """Per-user paired comparison of the five task metrics (plus the
    usability score when questionnaires are supplied)."""
    if len(control) != len(experiment):
        raise SessionError("modalities need the same number of user sessions")

    def metric_list(logs, fn):
        out = []
        for log in logs:
            try:
                out.append(fn(log))
            except SessionError:
                out.append(None)
        return out

    rows = [
        _paired_row("Minimum Distance D_min", "cm",
                    metric_list(control, d_min),
                    metric_list(experiment, d_min), scale=100.0),
        _paired_row("Mean Distance D_mean", "cm",
                    metric_list(control, d_mean),
                    metric_list(experiment, d_mean), scale=100.0),
        _paired_row("Collision Number N_c", "count",
                    metric_list(control, lambda lg: collision_count(
                        lg, mode=collision_mode)),
                    metric_list(experiment, lambda lg: collision_count(
                        lg, mode=collision_mode))),
        _paired_row("Overall Path S_p", "cm",
                    metric_list(control, path_length),
                    metric_list(experiment, path_length), scale=100.0),
        _paired_row("Execution Time T_exe", "s",
                    metric_list(control, execution_time),
                    metric_list(experiment, execution_time)),
    ]
    if control_sus is not None and experiment_sus is not None:
        rows.append(_paired_row("SUS Score", "0-100",
                                [sus_score(s) for s in control_sus],
                                [sus_score(s) for s in experiment_sus]))
    return StudyReport(rows=rows)
