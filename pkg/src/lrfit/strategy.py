"""Refinement strategies: labels, thresholds and knot-segment planning.

A strategy label such as ``"eFA tn"`` or ``"bR/eFB tk/n"`` is parsed into a
:class:`StrategySpec`; each iteration the accuracy ledger is converted into a
:class:`RefinementPlan` of midpoint knot segments according to the strategy
family (full span, minimum span, structured mesh, restricted mesh), the
direction policy and the active thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import LRSpace, MeshSegment, U, V
from .surface import AccuracyLedger

GRAMMAR = (
    "label := strategy [' t' thresholds]; "
    "strategy := 'e' ('F' | 'M'[luc]['/F']) ('A'|'B') "
    "| 'b' ('S' | 'R'['+eL'|'/eF']) ('A'|'B'); "
    "thresholds := letters from {d, n, k} joined with '+' (same level) "
    "or '/' (levels before/after a strategy switch)"
)


class LabelError(ValueError):
    """Strategy label does not match the grammar."""

    def __init__(self, msg: str):
        super().__init__(f"{msg}; grammar: {GRAMMAR}")


@dataclass(frozen=True)
class StrategySpec:
    """Parsed strategy label."""

    trigger: str                     # 'e' (element) or 'b' (B-spline)
    kind: str                        # 'F', 'M', 'S' or 'R'
    subtype: str | None              # 'l' | 'u' | 'c' for minimum span
    extension_L: bool                # simultaneous element extension (R only)
    direction_policy: str            # 'A' alternating | 'B' both
    thresholds: frozenset            # subset of {'td', 'tn', 'tk'}
    switch_to: "StrategySpec | None" = None
    combined_simultaneous: bool = False
    label: str = ""


def _parse_threshold_level(txt: str, kind: str) -> frozenset:
    names = set()
    for letter in txt.split("+"):
        if letter not in ("d", "n", "k"):
            raise LabelError(f"unknown threshold letter {letter!r}")
        names.add("t" + letter)
    if "tk" in names and kind != "R":
        raise LabelError("threshold tk applies to restricted B-spline strategies only")
    if kind in ("S", "R") and "tn" in names:
        raise LabelError("threshold tn applies to element based strategies only")
    return frozenset(names)


def parse_label(label: str) -> StrategySpec:
    """Parse a strategy label like ``"eFA tn"``, ``"bR+eLA tk"``, ``"eMc/FA tn"``."""
    parts = label.strip().split()
    if len(parts) == 0 or len(parts) > 2:
        raise LabelError(f"malformed label {label!r}")
    strat = parts[0]
    thr = parts[1] if len(parts) == 2 else None
    if len(strat) < 3:
        raise LabelError(f"strategy part {strat!r} too short")
    direction = strat[-1]
    if direction not in ("A", "B"):
        raise LabelError(f"direction must be 'A' or 'B', got {direction!r}")
    body = strat[:-1]
    switch_body: str | None = None
    ext = False
    if "/" in body:
        body, switch_body = body.split("/", 1)
    elif "+" in body:
        body, ext_body = body.split("+", 1)
        if ext_body != "eL":
            raise LabelError(f"unknown simultaneous combination {ext_body!r}")
        ext = True

    trigger = body[0] if body else ""
    if trigger == "e":
        rest = body[1:]
        if rest == "F":
            kind, subtype = "F", None
        elif len(rest) == 2 and rest[0] == "M" and rest[1] in "luc":
            kind, subtype = "M", rest[1]
        else:
            raise LabelError(f"unknown element strategy {rest!r}")
        if ext:
            raise LabelError("element extension '+eL' applies to 'bR' only")
    elif trigger == "b":
        rest = body[1:]
        if rest == "S":
            kind, subtype = "S", None
        elif rest == "R":
            kind, subtype = "R", None
        else:
            raise LabelError(f"unknown B-spline strategy {rest!r}")
        if ext and kind != "R":
            raise LabelError("element extension '+eL' applies to 'bR' only")
    else:
        raise LabelError(f"trigger must be 'e' or 'b', got {trigger!r}")

    if switch_body is not None:
        if switch_body not in ("F", "eF"):
            raise LabelError(f"unknown switch target {switch_body!r}")
        if kind not in ("M", "R"):
            raise LabelError("a '/F' switch applies to minimum span or restricted mesh")

    levels: list[frozenset] = []
    if thr is not None:
        if not thr.startswith("t") or len(thr) < 2:
            raise LabelError(f"malformed threshold part {thr!r}")
        lvl_txts = thr[1:].split("/")
        if len(lvl_txts) > (2 if switch_body else 1):
            raise LabelError("more threshold levels than strategy levels")
        kinds = [kind, "F"]
        levels = [_parse_threshold_level(t, kinds[i]) for i, t in enumerate(lvl_txts)]
    primary_thr = levels[0] if levels else frozenset()
    if switch_body is not None:
        switch_thr = levels[1] if len(levels) > 1 else primary_thr - {"tk"}
        switch = StrategySpec(trigger="e", kind="F", subtype=None, extension_L=False,
                              direction_policy=direction, thresholds=switch_thr,
                              label=f"eF{direction}"
                              + (" t" + "+".join(s[1] for s in sorted(switch_thr))
                                 if switch_thr else ""))
    else:
        switch = None
    return StrategySpec(trigger=trigger, kind=kind, subtype=subtype, extension_L=ext,
                        direction_policy=direction, thresholds=primary_thr,
                        switch_to=switch, combined_simultaneous=ext,
                        label=label.strip())


def directions_for(policy: str, iteration: int) -> tuple[str, ...]:
    """Parameter directions refined at this iteration level: alternating
    strategies refine the first direction at odd levels, the second at even
    levels; 'B' refines both."""
    if iteration < 1:
        raise ValueError("iterations are 1-based")
    if policy == "B":
        return (U, V)
    if policy == "A":
        return (U,) if iteration % 2 == 1 else (V,)
    raise ValueError(f"unknown direction policy {policy!r}")


@dataclass
class ThresholdState:
    """Weights and per-iteration decay of the threshold cutoffs."""

    decay: float = 0.9
    weights_td: tuple[float, float, float] = (0.3, 0.4, 0.3)
    weights_tn: tuple[float, float] = (0.5, 0.5)


@dataclass(frozen=True)
class Cutoffs:
    td: float
    tn: float
    tk: float


def _support_point_stats(space: LRSpace, acc: AccuracyLedger
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per B-spline: point count, out-of-tolerance count and max distance
    over the elements in its support."""
    _, b2e = space.overlap_maps()
    n_pts = np.array([s.n_points for s in acc.per_element])
    n_out = np.array([s.n_out for s in acc.per_element])
    max_d = np.array([s.max_dist for s in acc.per_element])
    pts = np.array([n_pts[e].sum() for e in b2e])
    out = np.array([n_out[e].sum() for e in b2e])
    mx = np.array([max_d[e].max() if len(e) else 0.0 for e in b2e])
    return pts, out, mx


def element_scores(acc: AccuracyLedger) -> np.ndarray:
    """The tn significance score ``n_out * (1 + max_dist / tolerance)``."""
    return np.array([s.n_out * (1.0 + s.max_dist / acc.tolerance)
                     for s in acc.per_element])


def compute_thresholds(acc: AccuracyLedger, state: ThresholdState, iteration: int,
                       space: LRSpace) -> Cutoffs:
    """Numeric cutoffs for td, tn and tk at this iteration level.

    All cutoffs shrink by the decay factor with successive iterations.
    """
    f = state.decay ** max(iteration - 1, 0)
    g = acc.global_stats
    w1, w2, w3 = state.weights_td
    td = f * (w1 * g.max_dist + w2 * g.avg_out_dist + w3 * acc.tolerance)
    scores = element_scores(acc)
    if len(scores):
        wmin, wmax = state.weights_tn
        tn = f * (wmin * scores.min() + wmax * scores.max())
    else:
        tn = 0.0
    pts, out, _ = _support_point_stats(space, acc)
    mean_out = out.mean() if len(out) else 0.0
    mean_pts = pts.mean() if len(pts) else 0.0
    tk = 0.01 * mean_pts if mean_pts > 100.0 * mean_out else mean_out
    return Cutoffs(td=td, tn=tn, tk=f * tk)


@dataclass(frozen=True)
class PlanSegment:
    """A planned meshline: constant-``axis`` line at ``value`` spanning
    ``[lo, hi]`` in the orthogonal parameter (all in value space)."""

    axis: str
    value: float
    lo: float
    hi: float


@dataclass
class RefinementPlan:
    segments: list[PlanSegment] = field(default_factory=list)
    _seen: set = field(default_factory=set, repr=False)

    def add(self, seg: PlanSegment) -> None:
        if seg not in self._seen:
            self._seen.add(seg)
            self.segments.append(seg)

    def __len__(self) -> int:
        return len(self.segments)

    def splits_element(self, axis: str, d0: float, d1: float,
                       o0: float, o1: float) -> bool:
        """True if some planned segment in ``axis`` cuts the element box
        ``[d0, d1] x [o0, o1]`` (d along ``axis``, o orthogonal)."""
        for seg in self.segments:
            if seg.axis != axis:
                continue
            if d0 < seg.value < d1 and seg.lo < o1 and seg.hi > o0:
                return True
        return False


def _element_bounds(space: LRSpace, e: int) -> tuple[float, float, float, float]:
    return space.elements()[e].bounds(space)


def _axis_ranges(bounds, axis: str) -> tuple[float, float, float, float]:
    """(d0, d1, o0, o1): element range along ``axis`` and orthogonal to it."""
    u0, u1, v0, v1 = bounds
    return (u0, u1, v0, v1) if axis == U else (v0, v1, u0, u1)


def _support_ranges(space: LRSpace, key, axis: str) -> tuple[float, float, float, float]:
    su0, su1, sv0, sv1 = space.support_values(key)
    return (su0, su1, sv0, sv1) if axis == U else (sv0, sv1, su0, su1)


def _wide_enough(d0: float, d1: float, min_interval: float) -> bool:
    # halving must not create intervals narrower than the configured minimum
    return min_interval <= 0.0 or (d1 - d0) / 2.0 >= min_interval


def flagged_elements(acc: AccuracyLedger, thresholds: frozenset,
                     cuts: Cutoffs) -> list[int]:
    """Elements with unresolved points, filtered by the active thresholds."""
    scores = element_scores(acc) if "tn" in thresholds else None
    out = []
    for e, s in enumerate(acc.per_element):
        if s.n_out < 1:
            continue
        if "td" in thresholds and s.max_dist <= cuts.td:
            continue
        if scores is not None and scores[e] <= cuts.tn:
            continue
        out.append(e)
    return out


def flagged_bsplines(space: LRSpace, acc: AccuracyLedger, thresholds: frozenset,
                     cuts: Cutoffs) -> list[int]:
    """B-splines with unresolved points in their support, td-filtered."""
    _, out_b, max_b = _support_point_stats(space, acc)
    ids = np.flatnonzero(out_b >= 1)
    if "td" in thresholds:
        ids = ids[max_b[ids] > cuts.td]
    return [int(i) for i in ids]


def plan_full_span(flagged: list[int], space: LRSpace, dirs: tuple[str, ...],
                   min_interval: float = 0.0,
                   plan: RefinementPlan | None = None) -> RefinementPlan:
    """Per flagged element and direction: a midpoint segment spanning the
    union of the supports of every B-spline overlapping the element."""
    plan = plan if plan is not None else RefinementPlan()
    e2b, _ = space.overlap_maps()
    keys = space.keys_sorted()
    for e in flagged:
        bounds = _element_bounds(space, e)
        for axis in dirs:
            d0, d1, o0, o1 = _axis_ranges(bounds, axis)
            if not _wide_enough(d0, d1, min_interval):
                continue
            lo, hi = o0, o1
            for bi in e2b[e]:
                _, _, s0, s1 = _support_ranges(space, keys[bi], axis)
                lo = min(lo, s0)
                hi = max(hi, s1)
            plan.add(PlanSegment(axis, (d0 + d1) / 2.0, lo, hi))
    return plan


def plan_min_span(flagged: list[int], space: LRSpace, acc: AccuracyLedger,
                  dirs: tuple[str, ...], sub: str,
                  min_interval: float = 0.0) -> RefinementPlan:
    """Per flagged element and direction: a midpoint segment spanning exactly
    the support of one selected overlapping B-spline.

    Selection: 'l' largest support, 'u' highest unresolved-point share,
    'c' equal-weight combination; ties broken by centeredness with respect
    to the element, then by lowest B-spline index.
    """
    if sub not in ("l", "u", "c"):
        raise ValueError(f"unknown minimum-span subtype {sub!r}")
    plan = RefinementPlan()
    e2b, _ = space.overlap_maps()
    keys = space.keys_sorted()
    pts_b, out_b, _ = _support_point_stats(space, acc)
    for e in flagged:
        bounds = _element_bounds(space, e)
        bids = e2b[e]
        if not bids:
            continue
        areas = []
        shares = []
        for bi in bids:
            su0, su1, sv0, sv1 = space.support_values(keys[bi])
            areas.append((su1 - su0) * (sv1 - sv0))
            shares.append(out_b[bi] / pts_b[bi] if pts_b[bi] > 0 else 0.0)
        areas = np.asarray(areas)
        shares = np.asarray(shares)
        if sub == "l":
            score = areas
        elif sub == "u":
            score = shares
        else:
            def norm(x):
                rng = x.max() - x.min()
                return (x - x.min()) / rng if rng > 0 else np.zeros_like(x)
            score = 0.5 * (norm(areas) + norm(shares))
        best = score.max()
        cand = [i for i in range(len(bids)) if score[i] == best]
        if len(cand) > 1:
            ecu = (bounds[0] + bounds[1]) / 2.0
            ecv = (bounds[2] + bounds[3]) / 2.0
            def offcenter(i):
                su0, su1, sv0, sv1 = space.support_values(keys[bids[i]])
                return np.hypot((su0 + su1) / 2.0 - ecu, (sv0 + sv1) / 2.0 - ecv)
            dists = [offcenter(i) for i in cand]
            dmin = min(dists)
            cand = [i for i, d in zip(cand, dists) if d == dmin]
        chosen = bids[min(cand)]
        for axis in dirs:
            d0, d1, _, _ = _axis_ranges(bounds, axis)
            if not _wide_enough(d0, d1, min_interval):
                continue
            _, _, s0, s1 = _support_ranges(space, keys[chosen], axis)
            plan.add(PlanSegment(axis, (d0 + d1) / 2.0, s0, s1))
    return plan


def _local_intervals(space: LRSpace, key, axis: str) -> list[tuple[float, float]]:
    loc = key[0] if axis == U else key[1]
    table = space.table(axis)
    vals = sorted(set(loc))
    return [(float(table[a]), float(table[b]))
            for a, b in zip(vals[:-1], vals[1:])]


def plan_structured(flagged_b: list[int], space: LRSpace, dirs: tuple[str, ...],
                    min_interval: float = 0.0) -> RefinementPlan:
    """Per flagged B-spline and direction: one midpoint segment for every
    local knot interval, spanning the full orthogonal support."""
    plan = RefinementPlan()
    keys = space.keys_sorted()
    for bi in flagged_b:
        key = keys[bi]
        for axis in dirs:
            _, _, o0, o1 = _support_ranges(space, key, axis)
            for a, b in _local_intervals(space, key, axis):
                if not _wide_enough(a, b, min_interval):
                    continue
                plan.add(PlanSegment(axis, (a + b) / 2.0, o0, o1))
    return plan


def plan_restricted(flagged_b: list[int], space: LRSpace, acc: AccuracyLedger,
                    dirs: tuple[str, ...], thresholds: frozenset, cuts: Cutoffs,
                    min_interval: float = 0.0) -> RefinementPlan:
    """As :func:`plan_structured`, but a knot interval is refined only when
    the elements in its strip carry significant approximation error: summed
    out-of-tolerance count above the tk cutoff, or strip max distance above
    td when td is active; with no threshold, at least one unresolved point."""
    plan = RefinementPlan()
    keys = space.keys_sorted()
    _, b2e = space.overlap_maps()
    els = space.elements()
    for bi in flagged_b:
        key = keys[bi]
        eids = b2e[bi]
        for axis in dirs:
            _, _, o0, o1 = _support_ranges(space, key, axis)
            for a, b in _local_intervals(space, key, axis):
                if not _wide_enough(a, b, min_interval):
                    continue
                n_out = 0
                max_d = 0.0
                for e in eids:
                    d0, d1, _, _ = _axis_ranges(els[int(e)].bounds(space), axis)
                    mid = (d0 + d1) / 2.0
                    if a < mid < b:
                        st = acc.per_element[int(e)]
                        n_out += st.n_out
                        max_d = max(max_d, st.max_dist)
                take = False
                if "tk" in thresholds:
                    take = n_out > cuts.tk
                if not take and "td" in thresholds:
                    take = max_d > cuts.td
                if not thresholds:
                    take = n_out >= 1
                if take:
                    plan.add(PlanSegment(axis, (a + b) / 2.0, o0, o1))
    return plan


def plan_element_extension(plan: RefinementPlan, space: LRSpace,
                           acc: AccuracyLedger, dirs: tuple[str, ...],
                           cuts: Cutoffs,
                           min_interval: float = 0.0) -> RefinementPlan:
    """Supplementary full-span splits for significant elements that the base
    restricted plan leaves uncut; each direction is judged individually."""
    scores = element_scores(acc)
    significant = [e for e, s in enumerate(acc.per_element)
                   if s.n_out >= 1 and scores[e] > cuts.tn]
    e2b, _ = space.overlap_maps()
    keys = space.keys_sorted()
    for e in significant:
        bounds = _element_bounds(space, e)
        for axis in dirs:
            d0, d1, o0, o1 = _axis_ranges(bounds, axis)
            if not _wide_enough(d0, d1, min_interval):
                continue
            if plan.splits_element(axis, d0, d1, o0, o1):
                continue
            lo, hi = o0, o1
            for bi in e2b[e]:
                _, _, s0, s1 = _support_ranges(space, keys[bi], axis)
                lo = min(lo, s0)
                hi = max(hi, s1)
            plan.add(PlanSegment(axis, (d0 + d1) / 2.0, lo, hi))
    return plan


def build_plan(spec: StrategySpec, space: LRSpace, acc: AccuracyLedger,
               dirs: tuple[str, ...], state: ThresholdState, iteration: int,
               min_interval: float = 0.0) -> RefinementPlan:
    """One iteration's refinement plan for the given strategy."""
    cuts = compute_thresholds(acc, state, iteration, space)
    if spec.trigger == "e":
        flagged = flagged_elements(acc, spec.thresholds, cuts)
        if spec.kind == "F":
            return plan_full_span(flagged, space, dirs, min_interval)
        return plan_min_span(flagged, space, acc, dirs, spec.subtype, min_interval)
    flagged_b = flagged_bsplines(space, acc, spec.thresholds, cuts)
    if spec.kind == "S":
        return plan_structured(flagged_b, space, dirs, min_interval)
    plan = plan_restricted(flagged_b, space, acc, dirs, spec.thresholds, cuts,
                           min_interval)
    if spec.extension_L:
        plan = plan_element_extension(plan, space, acc, dirs, cuts, min_interval)
    return plan


def should_switch(history: list[tuple[int, int]], unresolved_remaining: int) -> bool:
    """Switch to the backup strategy when the newly-resolved-points per
    new-coefficient ratio of the last iteration drops below 0.1, or when the
    space stopped growing while points remain unresolved."""
    if not history:
        return False
    d_res, d_coef = history[-1]
    if d_coef > 0:
        return d_res / d_coef < 0.1
    return unresolved_remaining > 0


def plan_to_segments(space: LRSpace, plan: RefinementPlan) -> list[MeshSegment]:
    """Materialize a plan: grow the knot tables with the new midpoint values
    and convert the planned lines into index-form meshline segments."""
    for axis in (U, V):
        vals = [s.value for s in plan.segments if s.axis == axis]
        if vals:
            space.ensure_values(axis, vals)
    segs = []
    for s in plan.segments:
        table = space.table(axis := s.axis)
        run = space.table(U if axis == V else V)
        fixed = int(np.searchsorted(table, s.value))
        lo = int(np.searchsorted(run, s.lo))
        hi = int(np.searchsorted(run, s.hi))
        segs.append(MeshSegment(axis, fixed, lo, hi))
    return segs
