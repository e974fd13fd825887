"""Rotation- and translation-invariant minutiae matching.

Each template is reduced to an edge table: every minutia pair within
``d_max_px``, described by the pair distance and the two minutia directions
relative to the connecting segment. Those features are invariant under
rigid motion, so two templates are compared by pairing up compatible edges.

Scoring: every compatible edge pair implies a rotation between the
templates. Candidates are grouped into rotation windows (span twice
``rotation_tol_deg``), and the score is the largest maximum bipartite
matching between the two edge tables over any window, which makes the
score symmetric, bounded by both table sizes, and non-increasing when
minutiae are deleted.

All scoring is integer-valued; thresholds come from FMR calibration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigurationError
from .minutiae import MinutiaeTemplate

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MatcherParams:
    d_max_px: float = 75.0
    dist_tol_px: float = 4.0
    dist_tol_rel: float = 0.08
    angle_tol_deg: float = 11.25
    rotation_tol_deg: float = 22.5

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "MatcherParams":
        data = json.loads(text)
        known = {f: data[f] for f in
                 ("d_max_px", "dist_tol_px", "dist_tol_rel",
                  "angle_tol_deg", "rotation_tol_deg") if f in data}
        return MatcherParams(**known)


# The strict variant halves every tolerance (d_max is a cutoff, not a
# tolerance, and stays put); it stands in for an independent second matcher.
MATCHERS: dict[str, MatcherParams] = {
    "default": MatcherParams(),
    "strict": MatcherParams(d_max_px=75.0, dist_tol_px=2.0, dist_tol_rel=0.04,
                            angle_tol_deg=5.625, rotation_tol_deg=11.25),
}


def get_matcher(matcher_id: str) -> MatcherParams:
    try:
        return MATCHERS[matcher_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown matcher {matcher_id!r}; available: {sorted(MATCHERS)}"
        ) from None


def load_matcher_params(path: str | Path) -> MatcherParams:
    return MatcherParams.from_json(Path(path).read_text())


@dataclass(frozen=True)
class EdgeTable:
    """Pairwise features sorted ascending by distance.

    d: pair distance; phi: angle of the segment i -> j; beta1/beta2: the two
    minutia directions measured relative to that segment; mi/mj: minutia
    indices with mi < mj in canonical template order.
    """

    d: np.ndarray
    phi: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    mi: np.ndarray
    mj: np.ndarray

    def __len__(self) -> int:
        return len(self.d)


_EMPTY = np.zeros(0, dtype=np.float64)
_EMPTY_I = np.zeros(0, dtype=np.int32)


def build_edge_table(t: MinutiaeTemplate, params: MatcherParams | None = None) -> EdgeTable:
    params = params or MatcherParams()
    n = len(t)
    if n < 2:
        return EdgeTable(_EMPTY, _EMPTY, _EMPTY, _EMPTY, _EMPTY_I, _EMPTY_I)
    xy = t.xy()
    th = t.thetas()
    ii, jj = np.triu_indices(n, k=1)
    dx = xy[jj, 0] - xy[ii, 0]
    dy = xy[jj, 1] - xy[ii, 1]
    d = np.hypot(dx, dy)
    keep = d <= params.d_max_px
    ii, jj, dx, dy, d = ii[keep], jj[keep], dx[keep], dy[keep], d[keep]
    phi = np.mod(np.arctan2(dy, dx), _TWO_PI)
    beta1 = np.mod(th[ii] - phi, _TWO_PI)
    beta2 = np.mod(th[jj] - phi, _TWO_PI)
    order = np.lexsort((jj, ii, d))
    return EdgeTable(
        np.ascontiguousarray(d[order]),
        np.ascontiguousarray(phi[order]),
        np.ascontiguousarray(beta1[order]),
        np.ascontiguousarray(beta2[order]),
        np.ascontiguousarray(ii[order].astype(np.int32)),
        np.ascontiguousarray(jj[order].astype(np.int32)),
    )


@numba.njit(inline="always")
def _angdiff(a, b):
    d = (a - b) % 6.283185307179586
    if d > 3.141592653589793:
        d = 6.283185307179586 - d
    return d


@numba.njit(cache=True, nogil=True)
def _collect_candidates(da, phia, b1a, b2a, db, phib, b1b, b2b,
                        tol_px, tol_rel, ang_tol):
    """Compatible edge pairs and their implied rotations.

    Returns (rot, ai, bi, count). Both pair orientations are tested; the
    distance tolerance uses the smaller distance so the test is symmetric.
    """
    na = da.shape[0]
    nb = db.shape[0]
    pi = 3.141592653589793
    two_pi = 6.283185307179586

    # Upper bound on candidates: pairs inside the conservative distance window.
    bound = 0
    lo = 0
    hi = 0
    for k in range(na):
        t = tol_px if tol_px > tol_rel * da[k] else tol_rel * da[k]
        while lo < nb and db[lo] < da[k] - t:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < nb and db[hi] <= da[k] + t:
            hi += 1
        bound += 2 * (hi - lo)
    rot = np.empty(bound, dtype=np.float64)
    ai = np.empty(bound, dtype=np.int32)
    bi = np.empty(bound, dtype=np.int32)

    cnt = 0
    lo = 0
    hi = 0
    for k in range(na):
        t_max = tol_px if tol_px > tol_rel * da[k] else tol_rel * da[k]
        while lo < nb and db[lo] < da[k] - t_max:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < nb and db[hi] <= da[k] + t_max:
            hi += 1
        for l in range(lo, hi):
            dmin = da[k] if da[k] < db[l] else db[l]
            tol = tol_px if tol_px > tol_rel * dmin else tol_rel * dmin
            dd = da[k] - db[l]
            if dd < 0.0:
                dd = -dd
            if dd > tol:
                continue
            # direct correspondence (i->k's i, j->l's j)
            if _angdiff(b1a[k], b1b[l]) <= ang_tol and _angdiff(b2a[k], b2b[l]) <= ang_tol:
                rot[cnt] = (phib[l] - phia[k]) % two_pi
                ai[cnt] = k
                bi[cnt] = l
                cnt += 1
            # swapped correspondence (i->l's j, j->l's i): reverse b's segment
            if (_angdiff(b1a[k], (b2b[l] - pi) % two_pi) <= ang_tol
                    and _angdiff(b2a[k], (b1b[l] - pi) % two_pi) <= ang_tol):
                rot[cnt] = (phib[l] + pi - phia[k]) % two_pi
                ai[cnt] = k
                bi[cnt] = l
                cnt += 1
    return rot, ai, bi, cnt


@numba.njit(cache=True, nogil=True)
def _best_window_matching(rot, ai, bi, cnt, na, nb, rot_tol, target):
    """Largest bipartite matching (a-edges vs b-edges) over any rotation
    window of span 2 * rot_tol anchored at a candidate rotation.

    With target > 0 the search may stop as soon as a matching of that size
    exists; the returned value then answers "score >= target" exactly but
    is not necessarily the maximum.
    """
    if cnt == 0 or (target > 0 and cnt < target):
        return 0
    order = np.argsort(rot[:cnt], kind="mergesort")
    c2 = 2 * cnt
    rs = np.empty(c2, dtype=np.float64)
    as_ = np.empty(c2, dtype=np.int32)
    bs = np.empty(c2, dtype=np.int32)
    for t in range(cnt):
        o = order[t]
        rs[t] = rot[o]
        as_[t] = ai[o]
        bs[t] = bi[o]
        rs[t + cnt] = rot[o] + 6.283185307179586
        as_[t + cnt] = ai[o]
        bs[t + cnt] = bi[o]

    match_r = np.full(nb, -1, dtype=np.int32)
    seen_r = np.zeros(nb, dtype=np.int64)
    adj_start = np.zeros(na + 1, dtype=np.int32)
    arc_b = np.empty(c2, dtype=np.int32)
    stk_u = np.empty(na + 1, dtype=np.int32)
    stk_arc = np.empty(na + 1, dtype=np.int32)
    stk_v = np.empty(na + 1, dtype=np.int32)

    best = 0
    window_span = 2.0 * rot_tol
    stamp = 0
    hi = 0
    for c in range(cnt):
        if c > 0 and rs[c] == rs[c - 1]:
            continue
        if hi < c + 1:
            hi = c + 1
        while hi < c2 and rs[hi] <= rs[c] + window_span:
            hi += 1
        w = hi - c
        if w <= best or (target > 0 and w < target):
            continue

        # Counting-sort arcs of this window by their a-edge.
        for u in range(na + 1):
            adj_start[u] = 0
        for t in range(c, hi):
            adj_start[as_[t] + 1] += 1
        for u in range(na):
            adj_start[u + 1] += adj_start[u]
        for t in range(c, hi):
            u = as_[t]
            arc_b[adj_start[u]] = bs[t]
            adj_start[u] += 1
        for u in range(na, 0, -1):
            adj_start[u] = adj_start[u - 1]
        adj_start[0] = 0

        for v in range(nb):
            match_r[v] = -1
        size = 0
        for u0 in range(na):
            if adj_start[u0] == adj_start[u0 + 1]:
                continue
            stamp += 1
            top = 0
            stk_u[0] = u0
            stk_arc[0] = adj_start[u0]
            success = False
            while top >= 0:
                u = stk_u[top]
                descended = False
                while stk_arc[top] < adj_start[u + 1]:
                    v = arc_b[stk_arc[top]]
                    stk_arc[top] += 1
                    if seen_r[v] == stamp:
                        continue
                    seen_r[v] = stamp
                    stk_v[top] = v
                    wmatch = match_r[v]
                    if wmatch < 0:
                        success = True
                        break
                    top += 1
                    stk_u[top] = wmatch
                    stk_arc[top] = adj_start[wmatch]
                    descended = True
                    break
                if success:
                    break
                if not descended:
                    top -= 1
            if success:
                for t in range(top + 1):
                    match_r[stk_v[t]] = stk_u[t]
                size += 1
                if size >= w:
                    break
        if size > best:
            best = size
        if target > 0 and best >= target:
            return best
    return best


@numba.njit(cache=True, nogil=True)
def _match_pair(da, phia, b1a, b2a, db, phib, b1b, b2b,
                tol_px, tol_rel, ang_tol, rot_tol, target):
    na = da.shape[0]
    nb = db.shape[0]
    if na == 0 or nb == 0:
        return 0
    if target > 0 and (na < target or nb < target):
        return 0
    rot, ai, bi, cnt = _collect_candidates(da, phia, b1a, b2a, db, phib, b1b, b2b,
                                           tol_px, tol_rel, ang_tol)
    return _best_window_matching(rot, ai, bi, cnt, na, nb, rot_tol, target)


def match_score(a: MinutiaeTemplate | EdgeTable, b: MinutiaeTemplate | EdgeTable,
                params: MatcherParams | None = None) -> int:
    """Similarity score: size of the best consistent edge-pair cluster.

    Symmetric in its arguments; 0 when either side has fewer than two
    in-range minutiae pairs.
    """
    params = params or MatcherParams()
    ea = a if isinstance(a, EdgeTable) else build_edge_table(a, params)
    eb = b if isinstance(b, EdgeTable) else build_edge_table(b, params)
    return int(_match_pair(
        ea.d, ea.phi, ea.beta1, ea.beta2, eb.d, eb.phi, eb.beta1, eb.beta2,
        params.dist_tol_px, params.dist_tol_rel,
        math.radians(params.angle_tol_deg), math.radians(params.rotation_tol_deg),
        0,
    ))


def is_match(score: int, threshold) -> bool:
    """Decision rule: accept when the score reaches the calibrated value."""
    thr = threshold.score if hasattr(threshold, "score") else int(threshold)
    return int(score) >= thr
