"""Band-exit ladders: the stopping-time skeleton of a sampled path.

A ladder records the successive first grid times at which the path leaves
a multiplicative band (1+eps)^{-1} < S/anchor < 1+eps around its previous
anchor (or an additive band |S - anchor| < eps), ending with a retirement
stop at the horizon. In one dimension the anchors are snapped onto the
exact geometric (or arithmetic) grid spanned by the initial anchor.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LadderOverflowError, ValidationError

__all__ = ["LadderSkeleton", "extract_ladder", "ladder_increments",
           "write_skeletons_csv", "read_skeletons_csv"]

MAX_STOPS_DEFAULT = 1_000_000


@dataclass
class LadderSkeleton:
    """Stopping-time ladder of one path.

    marks[j] belongs to stop j+1; the final mark is always 0 (retirement
    at the horizon) and the final anchor is the raw terminal price. For
    snapped one-dimensional ladders, levels[j] is the integer grid level
    of anchor j relative to the initial anchor.
    """

    eps: float
    mode: str
    grid_indices: np.ndarray
    times: np.ndarray
    anchors: np.ndarray
    marks: np.ndarray
    snap: bool
    levels: np.ndarray = None
    overshoots: np.ndarray = None
    max_step_log: float = 0.0
    path_id: int = 0

    def __post_init__(self):
        self.grid_indices = np.asarray(self.grid_indices, dtype=int)
        self.times = np.asarray(self.times, dtype=float)
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        if self.anchors.shape[0] != len(self.times):
            self.anchors = self.anchors.T
        self.marks = np.asarray(self.marks, dtype=int)
        if len(self.marks) != len(self.times) - 1:
            raise ValidationError("need one mark per stop after the first")
        if len(self.marks) and self.marks[-1] != 0:
            raise ValidationError("final stop must be a retirement (mark 0)")
        zero = np.flatnonzero(self.marks == 0)
        if len(zero) and np.any(self.marks[zero[0]:] != 0):
            raise ValidationError("marks cannot resume after retirement")

    @property
    def d(self):
        return self.anchors.shape[1]

    @property
    def n_stops(self):
        return len(self.marks)

    @property
    def retired_at(self):
        return self.n_stops

    @property
    def anchor0(self):
        return self.anchors[0]

    @classmethod
    def from_marks(cls, marks, eps, x0, mode="multiplicative", times=None):
        """Synthetic one-dimensional ladder from a mark sequence.

        Anchors are placed exactly on the grid; used for enumerated-tree
        constructions and tests.
        """
        marks = np.asarray(marks, dtype=int)
        levels = np.concatenate([[0], np.cumsum(marks)])
        if mode == "multiplicative":
            anchors = x0 * (1.0 + eps) ** levels
        else:
            anchors = x0 + eps * levels
        n = len(marks)
        if times is None:
            times = np.linspace(0.0, 1.0, n + 1)
        return cls(eps=eps, mode=mode, grid_indices=np.arange(n + 1),
                   times=np.asarray(times, dtype=float), anchors=anchors[:, None],
                   marks=marks, snap=True, levels=levels,
                   overshoots=np.zeros(n))


def _inside_band(values, anchor, eps, mode):
    if mode == "multiplicative":
        ratio = values / anchor[None, :]
        return np.all((ratio > 1.0 / (1.0 + eps)) & (ratio < 1.0 + eps), axis=1)
    return np.all(np.abs(values - anchor[None, :]) < eps, axis=1)


def extract_ladder(path, eps, mode="multiplicative", anchor0=None, snap=None,
                   max_stops=MAX_STOPS_DEFAULT, path_id=None):
    """First-grid-exit ladder of a sample path.

    anchor0 defaults to the initial price; a custom anchor is accepted as
    long as the path starts strictly inside its band. Snapping (default
    for d = 1) places each non-retired anchor exactly on the geometric or
    arithmetic grid through anchor0; the crossing overshoot is recorded
    as a diagnostic. Grid values between consecutive stops always lie
    inside the open band by construction.
    """
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    if mode not in ("multiplicative", "additive"):
        raise ValidationError(f"unknown ladder mode {mode!r}")
    values = path.values
    d = values.shape[1]
    if snap is None:
        snap = d == 1
    if snap and d != 1:
        raise ValidationError("snapping is only defined for one asset")

    x0 = values[0].copy() if anchor0 is None else np.atleast_1d(np.asarray(anchor0, dtype=float)).copy()
    if x0.shape != (d,):
        raise ValidationError("anchor0 dimension mismatch")
    if anchor0 is not None and not _inside_band(values[:1], x0, eps, mode)[0]:
        raise ValidationError("path must start strictly inside the band of anchor0")

    n_grid = len(path.grid.times)
    idx = [0]
    anchors = [x0]
    marks = []
    levels = [0] if snap else None
    overshoots = []
    anchor = x0
    level = 0
    pos = 0
    while True:
        if len(marks) >= max_stops:
            raise LadderOverflowError(
                f"ladder exceeded {max_stops} stops (eps={eps})", count=max_stops)
        inside = _inside_band(values[pos + 1:], anchor, eps, mode)
        exits = np.flatnonzero(~inside)
        g = None if len(exits) == 0 else pos + 1 + int(exits[0])
        if g is None or g == n_grid - 1:
            # Retirement: the horizon arrives before (or exactly at) the
            # next exit; the final anchor is the raw terminal price.
            idx.append(n_grid - 1)
            anchors.append(values[-1].copy())
            marks.append(0)
            if snap:
                levels.append(level)
            overshoots.append(0.0)
            break
        raw = values[g]
        if mode == "multiplicative":
            up = raw / anchor >= 1.0 + eps
            down = raw / anchor <= 1.0 / (1.0 + eps)
        else:
            up = raw - anchor >= eps
            down = anchor - raw >= eps
        sign = 1 if up.any() else -1
        if snap:
            level += sign
            new_anchor = (x0 * (1.0 + eps) ** level if mode == "multiplicative"
                          else x0 + eps * level)
            over = (abs(float(np.log(raw[0] / new_anchor[0])))
                    if mode == "multiplicative" else abs(float(raw[0] - new_anchor[0])))
            levels.append(level)
        else:
            new_anchor = raw.copy()
            over = 0.0
        idx.append(g)
        anchors.append(new_anchor)
        marks.append(sign)
        overshoots.append(over)
        anchor = new_anchor
        pos = g

    log_v = np.log(values)
    max_step_log = float(np.max(np.abs(np.diff(log_v, axis=0)))) if n_grid > 1 else 0.0
    return LadderSkeleton(
        eps=eps, mode=mode,
        grid_indices=np.array(idx), times=path.grid.times[np.array(idx)],
        anchors=np.array(anchors), marks=np.array(marks), snap=snap,
        levels=np.array(levels) if snap else None,
        overshoots=np.array(overshoots), max_step_log=max_step_log,
        path_id=path.path_id if path_id is None else path_id)


def ladder_increments(skel):
    """Anchor increments between consecutive stops, zeroed at retirement.

    Returns an (n_stops, d) array; row j is anchor_{j+1} - anchor_j when
    stop j+1 carries a nonzero mark and the zero vector once retired.
    """
    deltas = np.diff(skel.anchors, axis=0)
    deltas[skel.marks == 0] = 0.0
    return deltas


def write_skeletons_csv(skels, csv_path, sidecar_path=None):
    """Batch CSV `path_id,n,tau,anchor_0,...,mark` plus a JSON sidecar
    with eps, mode and snap diagnostics."""
    d = skels[0].d
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "n", "tau"] + [f"anchor_{i}" for i in range(d)] + ["mark"])
        for sk in skels:
            for n in range(len(sk.times)):
                mark = 0 if n == 0 else int(sk.marks[n - 1])
                writer.writerow([sk.path_id, n, repr(float(sk.times[n]))]
                                + [repr(float(a)) for a in sk.anchors[n]] + [mark])
    if sidecar_path is not None:
        meta = {
            "eps": skels[0].eps,
            "mode": skels[0].mode,
            "snap": bool(skels[0].snap),
            "anchor0": [float(a) for a in skels[0].anchor0],
            "n_paths": len(skels),
            "overshoot_max": max((float(np.max(sk.overshoots)) if len(sk.overshoots) else 0.0)
                                 for sk in skels),
            "max_step_log": max(sk.max_step_log for sk in skels),
        }
        with open(sidecar_path, "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")


def read_skeletons_csv(csv_path, sidecar_path):
    """Rebuild skeletons from the batch CSV and its sidecar."""
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 4
        for r in reader:
            rows.append((int(r[0]), int(r[1]), float(r[2]),
                         [float(x) for x in r[3:3 + d]], int(r[3 + d])))
    skels = []
    for pid in sorted({r[0] for r in rows}):
        mine = sorted((r for r in rows if r[0] == pid), key=lambda r: r[1])
        times = np.array([r[2] for r in mine])
        anchors = np.array([r[3] for r in mine])
        marks = np.array([r[4] for r in mine[1:]], dtype=int)
        levels = None
        if meta["snap"] and d == 1:
            levels = np.concatenate([[0], np.cumsum(marks)])
        skels.append(LadderSkeleton(
            eps=meta["eps"], mode=meta["mode"], grid_indices=np.arange(len(times)),
            times=times, anchors=anchors, marks=marks, snap=meta["snap"],
            levels=levels, overshoots=np.zeros(len(marks)),
            max_step_log=meta.get("max_step_log", 0.0), path_id=pid))
    return skels
