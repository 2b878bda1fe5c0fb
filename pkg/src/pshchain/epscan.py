"""Parameter sweeps with level tracking and exceptional-point localization.

Sweeps move along one normalized coordinate (the coupling ``j_tilde`` or the
gain ``gamma_tilde``) on the unit circle j^2 + delta^2 = 1. Levels are
followed through the sweep by maximal biorthogonal overlap |<L(p)|R(p+dp)>|,
which stays reliable through genuine crossings where plain energy ordering
would swap labels.

Second-order exceptional points are boundaries between real and
complex-conjugate eigenvalues of a tracked pair and are localized by
bisection in the swept parameter. Third-order points show up as the
collision of two such boundaries sharing the middle level of a triple; they
are localized by bisecting the coupling for the partner-switch of the middle
level.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .biortho import (INDICATOR_FLOOR, AtExceptionalPoint, BiorthoSpectrum,
                      IndexIllDefined, LevelRecord, spectrum_with_indices)
from .model import (ChainSpec, NormalizedPoint, build_hamiltonian, build_parity,
                    gain_generator)

AXIS_COUPLING = "j_tilde"
AXIS_GAIN = "gamma_tilde"
_AXES = (AXIS_COUPLING, AXIS_GAIN)

#: Default bisection tolerance in the swept parameter.
BISECT_TOL = 1e-8
#: Matched overlap below which a track break is recorded.
OVERLAP_MIN = 0.5


class NoEPInBracket(RuntimeError):
    """The bracketed interval contains no reality boundary for the pair."""


class NoEP3InBox(RuntimeError):
    """No collision of second-order exceptional points inside the search box."""


class AccidentallyZeroElement(RuntimeError):
    """The pair is not coupled by the gain generator (matrix element ~ 0)."""

    def __init__(self, magnitude: float, floor: float):
        self.magnitude = float(magnitude)
        self.floor = float(floor)
        super().__init__(
            f"gain matrix element {self.magnitude:.3e} below floor {self.floor:.3e}"
        )


_parity_cache: dict[int, np.ndarray] = {}


def _parity(n: int) -> np.ndarray:
    p = _parity_cache.get(n)
    if p is None:
        p = build_parity(n)
        _parity_cache[n] = p
    return p


def _solve_value(axis: str, fixed_value: float, n: int, value: float,
                 reality_tol, indicator_floor: float) -> BiorthoSpectrum:
    """Spectrum at one normalized point; nudges off exact exceptional points."""
    zeta = _parity(n)
    last: Exception | None = None
    for dv in (0.0, 1e-11, -1e-11, 1e-10):
        v = value + dv
        if axis == AXIS_COUPLING:
            v = min(1.0, max(-1.0, v))
            point = NormalizedPoint(v, fixed_value)
        else:
            point = NormalizedPoint(fixed_value, max(0.0, v))
        try:
            h = build_hamiltonian(point.chain(n))
            return spectrum_with_indices(h, zeta, reality_tol=reality_tol,
                                         indicator_floor=indicator_floor)
        except AtExceptionalPoint as exc:
            last = exc
    raise last  # pragma: no cover - needs an exact EP hit on the grid


@dataclass(frozen=True)
class SweepGrid:
    """Sampling of one normalized coordinate at a fixed value of the other."""

    axis: str
    fixed_value: float
    points: tuple[float, ...]
    n: int

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValueError(f"axis must be one of {_AXES}, got {self.axis!r}")
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2 or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be strictly increasing (>= 2 points)")
        object.__setattr__(self, "points", pts)
        # every point must map onto the unit normalization circle
        for p in pts:
            self.point(p)

    def point(self, value: float) -> NormalizedPoint:
        if self.axis == AXIS_COUPLING:
            return NormalizedPoint(value, self.fixed_value)
        return NormalizedPoint(self.fixed_value, value)

    def chain_at(self, value: float) -> ChainSpec:
        return self.point(value).chain(self.n)

    def solver(self, reality_tol=None, indicator_floor=INDICATOR_FLOOR):
        def solve(value: float) -> BiorthoSpectrum:
            return _solve_value(self.axis, self.fixed_value, self.n, value,
                                reality_tol, indicator_floor)

        return solve

    def index_of(self, value: float) -> int:
        pts = np.asarray(self.points)
        i = int(np.argmin(np.abs(pts - value)))
        if abs(pts[i] - value) > 1e-12 * max(1.0, abs(value)):
            raise ValueError(f"{value!r} is not a grid point of this sweep")
        return i


@dataclass
class LevelTrack:
    """One level followed across a sweep.

    ``z2`` holds -1/0/+1 per grid point (0 = undefined), ``partner`` the
    track id of the conjugate partner (or -1), ``columns`` the level's
    position in the sorted spectrum at each point, and ``overlaps`` the
    matched biorthogonal overlap against the previous point.
    """

    level_id: int
    grid: SweepGrid
    eigenvalues: np.ndarray
    z2: np.ndarray
    indicator: np.ndarray
    partner: np.ndarray
    columns: np.ndarray
    overlaps: np.ndarray
    breaks: list[int] = field(default_factory=list)

    @property
    def continuity_score(self) -> float:
        return float(np.min(self.overlaps[1:])) if self.overlaps.size > 1 else 1.0

    def mutual_partner(self, point_index: int, other: "LevelTrack") -> bool:
        return (self.partner[point_index] == other.level_id
                and other.partner[point_index] == self.level_id)


def _compact(sp: BiorthoSpectrum) -> dict:
    dim = sp.dim
    values = np.array([lv.eigenvalue for lv in sp.levels], dtype=np.complex128)
    z2 = np.array([lv.z2_index or 0 for lv in sp.levels], dtype=np.int8)
    ind = np.array([lv.ep_indicator for lv in sp.levels])
    partner = np.array(
        [-1 if lv.conjugate_partner is None else lv.conjugate_partner for lv in sp.levels],
        dtype=np.int64,
    )
    return {
        "values": values,
        "z2": z2,
        "indicator": ind,
        "partner_col": partner,
        "right": sp.eigensystem.right,
        "left": sp.eigensystem.left,
        "dim": dim,
    }


def _sweep_task(args) -> dict:
    axis, fixed_value, n, value, reality_tol, indicator_floor = args
    return _compact(_solve_value(axis, fixed_value, n, value, reality_tol, indicator_floor))


def _result_stream(grid: SweepGrid, workers: int, reality_tol, indicator_floor):
    tasks = [(grid.axis, grid.fixed_value, grid.n, v, reality_tol, indicator_floor)
             for v in grid.points]
    if workers <= 1:
        for t in tasks:
            yield _sweep_task(t)
        return
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:  # pragma: no cover - non-POSIX fallback
        ctx = multiprocessing.get_context()
    chunk = max(1, len(tasks) // (4 * workers))
    with ctx.Pool(processes=workers) as pool:
        yield from pool.imap(_sweep_task, tasks, chunksize=chunk)


def sweep(grid: SweepGrid, workers: int = 1, reality_tol=None,
          indicator_floor: float = INDICATOR_FLOOR,
          overlap_min: float = OVERLAP_MIN) -> list[LevelTrack]:
    """Track all 2^N levels across the grid.

    Grid-point eigensolves are independent (and may run in ``workers``
    processes); the overlap matching is a sequential reduction in grid
    order, so results are identical for any worker count. Matched overlaps
    below ``overlap_min`` are recorded as track breaks and the sweep
    continues with the assignment it found.
    """
    npts = len(grid.points)
    dim = 1 << grid.n
    evals = np.zeros((dim, npts), dtype=np.complex128)
    z2 = np.zeros((dim, npts), dtype=np.int8)
    ind = np.zeros((dim, npts))
    partner = np.full((dim, npts), -1, dtype=np.int64)
    columns = np.zeros((dim, npts), dtype=np.int64)
    overlaps = np.ones((dim, npts))
    breaks: list[list[int]] = [[] for _ in range(dim)]

    col_of_track = np.arange(dim)
    prev_left = None
    for p, data in enumerate(_result_stream(grid, workers, reality_tol, indicator_floor)):
        if data["dim"] != dim:
            raise ArithmeticError("grid point returned a spectrum of wrong dimension")
        if p > 0:
            overlap = np.abs(prev_left.conj().T @ data["right"])
            rows, cols = linear_sum_assignment(-overlap)
            col_of_track = cols[np.argsort(rows)]
            matched = overlap[np.arange(dim), col_of_track]
            overlaps[:, p] = matched
            for t in np.flatnonzero(matched < overlap_min):
                breaks[int(t)].append(p)
        col_to_track = np.empty(dim, dtype=np.int64)
        col_to_track[col_of_track] = np.arange(dim)
        for t in range(dim):
            c = col_of_track[t]
            evals[t, p] = data["values"][c]
            z2[t, p] = data["z2"][c]
            ind[t, p] = data["indicator"][c]
            columns[t, p] = c
            pc = data["partner_col"][c]
            partner[t, p] = col_to_track[pc] if pc >= 0 else -1
        prev_left = data["left"][:, col_of_track]
    return [
        LevelTrack(level_id=t, grid=grid, eigenvalues=evals[t], z2=z2[t],
                   indicator=ind[t], partner=partner[t], columns=columns[t],
                   overlaps=overlaps[t], breaks=breaks[t])
        for t in range(dim)
    ]


@dataclass(frozen=True)
class EPRecord:
    """A located exceptional point.

    ``location`` always carries both normalized coordinates. ``indices`` are
    the Z2 indices of the participating levels just outside the point, and
    ``residual`` is the eigenvalue gap (order 2) or the mismatch of the two
    colliding boundaries (order 3) at the claimed location.
    """

    order: int
    location: dict[str, float]
    levels: tuple[int, ...]
    indices: tuple[int, ...]
    residual: float
    bracket_width: float

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "location": {k: float(v) for k, v in sorted(self.location.items())},
            "levels": list(self.levels),
            "indices": list(self.indices),
            "residual": float(self.residual),
            "bracket_width": float(self.bracket_width),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EPRecord":
        return cls(order=int(d["order"]),
                   location={k: float(v) for k, v in d["location"].items()},
                   levels=tuple(int(x) for x in d["levels"]),
                   indices=tuple(int(x) for x in d["indices"]),
                   residual=float(d["residual"]),
                   bracket_width=float(d["bracket_width"]))


def _match_levels(ref_left: np.ndarray, sp: BiorthoSpectrum):
    """Columns of ``sp`` matched to the reference left vectors, plus overlaps."""
    overlap = np.abs(ref_left.conj().T @ sp.eigensystem.right)
    rows, cols = linear_sum_assignment(-overlap)
    cols = cols[np.argsort(rows)]
    return cols, overlap[np.arange(ref_left.shape[1]), cols]


def _pair_state(sp: BiorthoSpectrum, ca: int, cb: int) -> dict:
    la, lb = sp.levels[ca], sp.levels[cb]
    mutual = la.conjugate_partner == cb and lb.conjugate_partner == ca
    both_real = (abs(la.eigenvalue.imag) <= sp.reality_tol
                 and abs(lb.eigenvalue.imag) <= sp.reality_tol)
    return {
        "cols": (ca, cb),
        "mutual": mutual,
        "both_real": both_real,
        "gap": abs(la.eigenvalue - lb.eigenvalue),
        "z2": (la.z2_index, lb.z2_index),
        "indicator": (la.ep_indicator, lb.ep_indicator),
        "left": np.column_stack([la.left, lb.left]),
    }


def locate_reality_boundary(solve, p_real: float, p_complex: float,
                            pair, tol: float = BISECT_TOL,
                            max_iter: int = 200) -> dict:
    """Bisect the parameter where a tracked pair switches real <-> complex.

    ``solve`` maps a parameter value to a :class:`BiorthoSpectrum`; ``pair``
    gives the two level labels at ``p_real``. The pair is re-identified at
    every probe by overlap against the current real-side vectors. Raises
    :class:`NoEPInBracket` when the bracket shows no transition or the
    converged boundary is not a real-to-complex one.
    """
    sp_r = solve(p_real)
    state_r = _pair_state(sp_r, *pair)
    if state_r["mutual"]:
        raise NoEPInBracket("pair is already complex on the declared real side")

    sp_c = solve(p_complex)
    cols_c, _ = _match_levels(state_r["left"], sp_c)
    if not _pair_state(sp_c, *cols_c)["mutual"]:
        raise NoEPInBracket("pair is not complex-conjugate on the complex side")

    pr, pc = float(p_real), float(p_complex)
    it = 0
    while abs(pc - pr) > tol and it < max_iter:
        it += 1
        pm = 0.5 * (pr + pc)
        sp_m = solve(pm)
        cols_m, _ = _match_levels(state_r["left"], sp_m)
        state_m = _pair_state(sp_m, *cols_m)
        if state_m["mutual"]:
            pc = pm
        else:
            pr = pm
            state_r = state_m
    if not state_r["both_real"]:
        raise NoEPInBracket(
            "pairing changes without a reality boundary (partner exchange)"
        )

    location = 0.5 * (pr + pc)
    sp_loc = solve(location)
    cols_loc, _ = _match_levels(state_r["left"], sp_loc)
    residual = _pair_state(sp_loc, *cols_loc)["gap"]
    return {
        "location": location,
        "bracket": (min(pr, pc), max(pr, pc)),
        "width": abs(pc - pr),
        "residual": float(residual),
        "real_side_z2": state_r["z2"],
        "real_side_indicator": state_r["indicator"],
        "real_side_parameter": pr,
    }


def _location_dict(grid: SweepGrid, value: float) -> dict[str, float]:
    if grid.axis == AXIS_COUPLING:
        return {AXIS_COUPLING: float(value), AXIS_GAIN: float(grid.fixed_value)}
    return {AXIS_COUPLING: float(grid.fixed_value), AXIS_GAIN: float(value)}


def find_ep2(track_a: LevelTrack, track_b: LevelTrack, bracket,
             tol: float = BISECT_TOL, reality_tol=None,
             indicator_floor: float = INDICATOR_FLOOR) -> EPRecord:
    """Localize a second-order exceptional point of two tracked levels.

    ``bracket`` is a pair of grid-point parameter values with the levels real
    and separated on one side and complex-conjugate on the other. The record
    carries both Z2 indices from the real side.
    """
    grid = track_a.grid
    if grid != track_b.grid:
        raise ValueError("tracks come from different sweeps")
    i_lo = grid.index_of(bracket[0])
    i_hi = grid.index_of(bracket[1])
    paired_lo = track_a.mutual_partner(i_lo, track_b)
    paired_hi = track_a.mutual_partner(i_hi, track_b)
    if paired_lo == paired_hi:
        raise NoEPInBracket("no real/complex transition between the bracket ends")
    i_real, i_cplx = (i_lo, i_hi) if paired_hi else (i_hi, i_lo)

    solve = grid.solver(reality_tol=reality_tol, indicator_floor=indicator_floor)
    res = locate_reality_boundary(
        solve, grid.points[i_real], grid.points[i_cplx],
        (int(track_a.columns[i_real]), int(track_b.columns[i_real])), tol=tol)

    ia, ib = int(track_a.z2[i_real]), int(track_b.z2[i_real])
    if ia == 0 or ib == 0:
        ia, ib = res["real_side_z2"][0] or 0, res["real_side_z2"][1] or 0
    if ia == 0 or ib == 0:
        raise IndexIllDefined("no well-defined index on the real side of the bracket")
    return EPRecord(order=2,
                    location=_location_dict(grid, res["location"]),
                    levels=(track_a.level_id, track_b.level_id),
                    indices=(ia, ib),
                    residual=res["residual"],
                    bracket_width=res["width"])


def reality_transitions(tracks: list[LevelTrack]):
    """Grid intervals where some pair of tracks gains or loses conjugate pairing.

    Returns tuples ``(a, b, interval_index, complex_side)`` with
    ``complex_side`` in {"lo", "hi"}.
    """
    npts = len(tracks[0].grid.points)
    pairs_at = []
    for p in range(npts):
        pairs = set()
        for tr in tracks:
            q = tr.partner[p]
            if q >= 0 and q > tr.level_id:
                if tracks[q].partner[p] == tr.level_id:
                    pairs.add((tr.level_id, int(q)))
        pairs_at.append(pairs)
    events = []
    for p in range(npts - 1):
        for a, b in sorted(pairs_at[p] - pairs_at[p + 1]):
            events.append((a, b, p, "lo"))
        for a, b in sorted(pairs_at[p + 1] - pairs_at[p]):
            events.append((a, b, p, "hi"))
    events.sort(key=lambda e: (e[2], e[0], e[1], e[3]))
    return events


def locate_ep2_records(tracks: list[LevelTrack], tol: float = BISECT_TOL,
                       reality_tol=None,
                       indicator_floor: float = INDICATOR_FLOOR):
    """Refine every reality transition of a sweep into an EP record.

    Partner exchanges that bisect to no reality boundary (they occur when a
    complex pair trades one member for another level) are collected in the
    second return value instead of producing records.
    """
    grid = tracks[0].grid
    records: list[EPRecord] = []
    skipped: list[dict] = []
    for a, b, p, side in reality_transitions(tracks):
        bracket = (grid.points[p], grid.points[p + 1])
        try:
            records.append(find_ep2(tracks[a], tracks[b], bracket, tol=tol,
                                    reality_tol=reality_tol,
                                    indicator_floor=indicator_floor))
        except NoEPInBracket as exc:
            skipped.append({"levels": [a, b], "bracket": [bracket[0], bracket[1]],
                            "complex_side": side, "reason": str(exc)})
    records.sort(key=lambda r: (r.location[AXIS_GAIN], r.location[AXIS_COUPLING], r.levels))
    return records, skipped


@dataclass(frozen=True)
class CrossingRecord:
    """A level crossing on the Hermitian line, labeled by the pair's indices."""

    location: float
    levels: tuple[int, int]
    indices: tuple[int, int]
    kind: str
    gap: float


def _refine_crossing(solve, p_lo: float, p_hi: float, pair, d_lo: float,
                     tol: float) -> tuple[float, float]:
    sp = solve(p_lo)
    state = _pair_state(sp, *pair)
    ref = state["left"]
    lo, hi = p_lo, p_hi
    sign_lo = math.copysign(1.0, d_lo)
    val = None
    while hi - lo > tol:
        pm = 0.5 * (lo + hi)
        sp_m = solve(pm)
        cols, _ = _match_levels(ref, sp_m)
        d = (sp_m.levels[cols[0]].eigenvalue - sp_m.levels[cols[1]].eigenvalue).real
        val = abs(d)
        if math.copysign(1.0, d) == sign_lo:
            lo = pm
            ref = _pair_state(sp_m, *cols)["left"]
        else:
            hi = pm
    return 0.5 * (lo + hi), (val if val is not None else abs(d_lo))


def classify_crossings(tracks: list[LevelTrack], ambiguous_gap: float = 1e-6,
                       refine_tol: float = 1e-12, reality_tol=None) -> list[CrossingRecord]:
    """Locate and label all level crossings of a gain-free coupling sweep.

    Opposite-index crossings are the ones that split into pairs of
    second-order exceptional points once the gain is turned on; same-index
    crossings are stable. Near-degeneracies without a sign change of the
    tracked gap are flagged ``ambiguous``.
    """
    grid = tracks[0].grid
    if grid.axis != AXIS_COUPLING or grid.fixed_value != 0.0:
        raise ValueError("crossing classification runs on a gain-free coupling sweep")
    pts = np.asarray(grid.points)
    solve = grid.solver(reality_tol=reality_tol)
    out: list[CrossingRecord] = []
    dim = len(tracks)
    for a in range(dim):
        for b in range(a + 1, dim):
            d = (tracks[a].eigenvalues - tracks[b].eigenvalues).real
            prod = d[:-1] * d[1:]
            hits = set(np.flatnonzero(prod < 0.0).tolist())
            exact = np.flatnonzero(d == 0.0)
            for p in exact:
                ia, ib = int(tracks[a].z2[p]), int(tracks[b].z2[p])
                kind = "same" if ia * ib > 0 else "opposite"
                out.append(CrossingRecord(float(pts[p]), (a, b), (ia, ib), kind, 0.0))
            for p in sorted(hits):
                loc, gap = _refine_crossing(
                    solve, pts[p], pts[p + 1],
                    (int(tracks[a].columns[p]), int(tracks[b].columns[p])),
                    d[p], refine_tol)
                ia, ib = int(tracks[a].z2[p]), int(tracks[b].z2[p])
                kind = "same" if ia * ib > 0 else "opposite"
                out.append(CrossingRecord(float(loc), (a, b), (ia, ib), kind, float(gap)))
            absd = np.abs(d)
            for p in range(1, len(pts) - 1):
                if (absd[p] < ambiguous_gap and absd[p] <= absd[p - 1]
                        and absd[p] <= absd[p + 1]
                        and prod[p - 1] > 0.0 and prod[p] > 0.0):
                    ia, ib = int(tracks[a].z2[p]), int(tracks[b].z2[p])
                    out.append(CrossingRecord(float(pts[p]), (a, b), (ia, ib),
                                              "ambiguous", float(absd[p])))
    out.sort(key=lambda c: (c.location, c.levels))
    return out


def project_two_level(h, level_a: LevelRecord, level_b: LevelRecord) -> np.ndarray:
    """2x2 matrix <L_i|H|R_j> of ``h`` in the biorthogonal pair basis.

    With index-rescaled vectors the off-diagonal entries obey
    M_21 = s_a s_b conj(M_12), so same-index pairs give a locally Hermitian
    block and opposite-index pairs a pseudo-Hermitian one.
    """
    if level_a.z2_index is None or level_b.z2_index is None:
        raise IndexIllDefined("two-level projection requires defined indices")
    m = np.empty((2, 2), dtype=np.complex128)
    lefts = (level_a.left, level_b.left)
    rights = (level_a.right, level_b.right)
    ha = np.asarray(h, dtype=np.complex128)
    for i in range(2):
        for j in range(2):
            m[i, j] = np.vdot(lefts[i], ha @ rights[j])
    return m


def predict_gamma_cr(spec: ChainSpec, pair, element_floor: float | None = None):
    """Critical gain of an opposite-index pair from its gain-free data.

    gamma_cr = gap / (2 |w|) with w = <L_b|V|R_a> the gain-generator matrix
    element of the pair. Same-index pairs have w = 0 by symmetry and raise
    :class:`AccidentallyZeroElement`.
    """
    if any(g != 0.0 for g in spec.gamma_profile):
        raise ValueError("prediction starts from the gain-free chain")
    h = build_hamiltonian(spec)
    zeta = _parity(spec.n)
    sp = spectrum_with_indices(h, zeta)
    a, b = (int(pair[0]), int(pair[1]))
    la, lb = sp.levels[a], sp.levels[b]
    if la.z2_index is None or lb.z2_index is None:
        raise IndexIllDefined("pair indices undefined at the gain-free point")
    v = gain_generator(spec)
    w = complex(np.vdot(lb.left, v @ la.right))
    floor = element_floor if element_floor is not None else 1e-8 * spec.n
    if abs(w) < floor:
        raise AccidentallyZeroElement(abs(w), floor)
    gap = abs((lb.eigenvalue - la.eigenvalue).real)
    return gap / (2.0 * abs(w))


# ---------------------------------------------------------------------------
# third-order points


@dataclass(frozen=True)
class TriplePairing:
    """Pairing state of a tracked triple at one parameter point.

    ``kind`` is 'none' (all real), 'low-mid' or 'mid-up' (two members form a
    conjugate pair, named by the position of the real spectator), or
    'external' (a member pairs with a level outside the triple).
    """

    kind: str
    pair_real: float | None = None
    spectator_real: float | None = None
    spectator_z2: int | None = None


def _classify_triple(sp: BiorthoSpectrum, tri_cols) -> TriplePairing:
    cols = [int(c) for c in tri_cols]
    recs = [sp.levels[c] for c in cols]
    colset = set(cols)
    mutual = None
    for i in range(3):
        q = recs[i].conjugate_partner
        if q is None:
            continue
        if q not in colset:
            return TriplePairing("external")
        if mutual is None:
            mutual = (i, cols.index(q))
    if mutual is None:
        return TriplePairing("none")
    spect = ({0, 1, 2} - set(mutual)).pop()
    pair_real = recs[mutual[0]].eigenvalue.real
    spect_real = recs[spect].eigenvalue.real
    kind = "low-mid" if spect_real > pair_real else "mid-up"
    return TriplePairing(kind, pair_real=pair_real, spectator_real=spect_real,
                         spectator_z2=recs[spect].z2_index)


def _match_all(ref_left: np.ndarray, col_of_track: np.ndarray, sp: BiorthoSpectrum):
    overlap = np.abs(ref_left[:, col_of_track].conj().T @ sp.eigensystem.right)
    rows, cols = linear_sum_assignment(-overlap)
    return cols[np.argsort(rows)]


def _march_state(n: int, j_value: float, gammas, reality_tol, indicator_floor):
    """Generator of (gamma, spectrum, col_of_track) along a gain ladder."""
    dim = 1 << n
    cols = np.arange(dim)
    sp = _solve_value(AXIS_GAIN, j_value, n, float(gammas[0]), reality_tol, indicator_floor)
    yield float(gammas[0]), sp, cols
    left = sp.eigensystem.left
    for g in gammas[1:]:
        sp = _solve_value(AXIS_GAIN, j_value, n, float(g), reality_tol, indicator_floor)
        cols = _match_all(left, cols, sp)
        left = sp.eigensystem.left
        yield float(g), sp, cols


def _march_probe(n: int, j_value: float, gamma: float, reality_tol, indicator_floor,
                 rung: float = 0.005):
    """Spectrum and track columns at (j, gamma), identified by a gain march."""
    steps = max(4, int(math.ceil(gamma / rung)))
    ladder = np.linspace(0.0, gamma, steps + 1)
    sp = cols = None
    for _, sp, cols in _march_state(n, j_value, ladder, reality_tol, indicator_floor):
        pass
    return sp, cols


def triple_pairing(n: int, j_value: float, gamma: float, triple,
                   reality_tol=None,
                   indicator_floor: float = INDICATOR_FLOOR) -> TriplePairing:
    """Pairing state of three levels (zero-gain energy ranks) at one point."""
    triple = tuple(int(t) for t in triple)
    sp, cols = _march_probe(n, j_value, gamma, reality_tol, indicator_floor)
    return _classify_triple(sp, cols[list(triple)])


def _triple_state(sp: BiorthoSpectrum, tri_cols):
    recs = [sp.levels[int(c)] for c in tri_cols]
    all_real = all(r.conjugate_partner is None
                   and abs(r.eigenvalue.imag) <= sp.reality_tol for r in recs)
    return all_real, recs


def _triple_reality_boundary(solve, p_real: float, p_cplx: float, tri_cols_real,
                             tol: float, max_iter: int = 200):
    """Bisect the parameter where a tracked triple stops being all-real.

    Returns (boundary, inside_state, outside_pairing); matching follows the
    real side so label bookkeeping survives the approach to the boundary.
    """
    sp_r = solve(p_real)
    ref = np.column_stack([sp_r.levels[int(c)].left for c in tri_cols_real])
    inside = [sp_r.levels[int(c)] for c in tri_cols_real]
    pr, pc = float(p_real), float(p_cplx)
    outside = None
    it = 0
    while abs(pc - pr) > tol and it < max_iter:
        it += 1
        pm = 0.5 * (pr + pc)
        sp_m = solve(pm)
        cols_m, _ = _match_levels(ref, sp_m)
        all_real, recs = _triple_state(sp_m, cols_m)
        if all_real:
            pr = pm
            ref = np.column_stack([r.left for r in recs])
            inside = recs
        else:
            pc = pm
            outside = _classify_triple(sp_m, cols_m)
    if outside is None:
        sp_c = solve(pc)
        cols_c, _ = _match_levels(ref, sp_c)
        outside = _classify_triple(sp_c, cols_c)
    return 0.5 * (pr + pc), inside, outside


@dataclass(frozen=True)
class _Wedge:
    gamma: float
    j_lo: float
    j_hi: float
    indices: tuple
    edge_kinds: tuple


def _find_wedge(n: int, gamma: float, window, triple, samples: int,
                j_tol: float, reality_tol, indicator_floor) -> _Wedge | None:
    """Locate the all-real interval of the triple on a fixed-gain line."""
    j_vals = np.linspace(window[0], window[1], samples)
    anchor = 0.5 * (window[0] + window[1])
    sp_a, cols_a = _march_probe(n, anchor, gamma, reality_tol, indicator_floor)
    solve = lambda j: _solve_value(AXIS_COUPLING, gamma, n, j, reality_tol,
                                   indicator_floor)

    tri = list(triple)
    states: dict[int, tuple] = {}
    right_part = sorted(i for i in range(samples) if j_vals[i] >= anchor)
    left_part = sorted((i for i in range(samples) if j_vals[i] < anchor), reverse=True)
    for part in (right_part, left_part):
        sp, cols = sp_a, cols_a
        for i in part:
            sp_new = solve(float(j_vals[i]))
            cols = _match_all(sp.eigensystem.left, cols, sp_new)
            sp = sp_new
            all_real, recs = _triple_state(sp, cols[tri])
            states[i] = (all_real, cols[tri].copy(), recs)

    real_mask = np.array([states[i][0] for i in range(samples)])
    if not np.any(real_mask):
        return None
    # widest run of all-real samples
    runs = []
    start = None
    for i in range(samples):
        if real_mask[i] and start is None:
            start = i
        elif not real_mask[i] and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, samples - 1))
    run = max(runs, key=lambda r: r[1] - r[0])
    lo, hi = run

    anchor_idx = (lo + hi) // 2
    # march labels can swap inside complex bubbles; the physical roles
    # (lower, middle, upper) are the energy order inside the interval
    recs_sorted = sorted(states[anchor_idx][2], key=lambda r: r.eigenvalue.real)
    indices = tuple(r.z2_index or 0 for r in recs_sorted)

    if lo > 0:
        j_left, _, out_left = _triple_reality_boundary(
            solve, float(j_vals[lo]), float(j_vals[lo - 1]), states[lo][1], j_tol)
        kind_left = out_left.kind
    else:
        j_left, kind_left = float(j_vals[lo]), "edge"
    if hi < samples - 1:
        j_right, _, out_right = _triple_reality_boundary(
            solve, float(j_vals[hi]), float(j_vals[hi + 1]), states[hi][1], j_tol)
        kind_right = out_right.kind
    else:
        j_right, kind_right = float(j_vals[hi]), "edge"
    return _Wedge(gamma=gamma, j_lo=j_left, j_hi=j_right, indices=indices,
                  edge_kinds=(kind_left, kind_right))


def find_ep3(n: int, j_bracket, gamma_bracket, triple, j_tol: float = 1e-10,
             g_tol: float = 1e-6, samples: int = 61, reality_tol=None,
             indicator_floor: float = INDICATOR_FLOOR) -> EPRecord:
    """Localize a third-order point as the collision of two tracked boundaries.

    At fixed gain below the collision, the triple (zero-gain energy ranks,
    middle entry = shared level) is all-real on a coupling interval bounded
    by the two second-order boundaries that share the middle level. The
    interval shrinks to a point as the gain rises; its collapse is bisected
    in the gain, with the coupling window re-centered on the last seen
    interval. The record's indices are read inside the last resolved
    interval, its residual is that interval's width, and the bracket width
    is the final gain bracket.
    """
    triple = tuple(int(t) for t in triple)
    g_lo, g_hi = float(gamma_bracket[0]), float(gamma_bracket[1])
    j_lo, j_hi = float(j_bracket[0]), float(j_bracket[1])
    pad = 0.5 * (j_hi - j_lo)
    window = (max(-1.0, j_lo - pad), min(1.0, j_hi + pad))

    wedge = _find_wedge(n, g_lo, window, triple, samples, j_tol,
                        reality_tol, indicator_floor)
    if wedge is None:
        raise NoEP3InBox(
            f"triple {triple} has no all-real interval at gamma={g_lo:.6g} in {window}")

    def next_window(w: _Wedge, dgamma: float):
        width = max(w.j_hi - w.j_lo, 10 * j_tol)
        margin = max(2.0 * width, 2.0 * dgamma, 1e-4)
        return (max(-1.0, w.j_lo - margin), min(1.0, w.j_hi + margin))

    top = _find_wedge(n, g_hi, next_window(wedge, g_hi - g_lo), triple, samples,
                      j_tol, reality_tol, indicator_floor)
    if top is not None:
        raise NoEP3InBox(
            f"the all-real interval persists at gamma={g_hi:.6g}; "
            "the boundaries collide above the box")

    g_exist, g_gone = g_lo, g_hi
    while g_gone - g_exist > g_tol:
        gm = 0.5 * (g_exist + g_gone)
        probe = _find_wedge(n, gm, next_window(wedge, gm - g_exist), triple,
                            samples, j_tol, reality_tol, indicator_floor)
        if probe is None:
            g_gone = gm
        else:
            g_exist, wedge = gm, probe

    kinds = set(wedge.edge_kinds)
    if kinds != {"low-mid", "mid-up"}:
        raise NoEP3InBox(
            f"interval at gamma={wedge.gamma:.6g} is not bounded by the two "
            f"boundaries sharing the middle level (edge kinds {wedge.edge_kinds})")
    if any(i not in (-1, 1) for i in wedge.indices):
        raise NoEP3InBox("triple indices are not resolved inside the interval")

    j_star = 0.5 * (wedge.j_lo + wedge.j_hi)
    g_star = 0.5 * (g_exist + g_gone)
    return EPRecord(order=3,
                    location={AXIS_COUPLING: float(j_star), AXIS_GAIN: float(g_star)},
                    levels=triple, indices=tuple(int(i) for i in wedge.indices),
                    residual=float(wedge.j_hi - wedge.j_lo),
                    bracket_width=float(g_gone - g_exist))


def _candidate_probe(args) -> dict:
    """First merge partner and gain for every level at one coupling value."""
    n, j_value, g_hi, g_steps, reality_tol, indicator_floor = args
    dim = 1 << n
    ladder = np.linspace(0.0, g_hi, g_steps + 1)
    first: dict[int, tuple[float, int]] = {}
    prev_pairs: set[tuple] = set()
    prev_g = 0.0
    for g, sp, cols in _march_state(n, j_value, ladder, reality_tol, indicator_floor):
        ct = np.empty(dim, dtype=np.int64)
        ct[cols] = np.arange(dim)
        pairs = set()
        for c, lv in enumerate(sp.levels):
            q = lv.conjugate_partner
            if q is not None and q > c:
                pairs.add(tuple(sorted((int(ct[c]), int(ct[q])))))
        for a, b in pairs - prev_pairs:
            gmid = 0.5 * (prev_g + g)
            first.setdefault(a, (gmid, b))
            first.setdefault(b, (gmid, a))
        prev_pairs, prev_g = pairs, g
    return first


def find_ep3_candidates(n: int, j_window, gamma_window, probes: int = 33,
                        g_steps: int = 128, workers: int = 1, reality_tol=None,
                        indicator_floor: float = INDICATOR_FLOOR) -> list[dict]:
    """Coarse scan for levels that switch first-merge partners with the coupling.

    A third-order point announces itself by a shared (middle) level whose
    first merge happens with one neighbor on one side of the collision
    coupling and with another neighbor on the other side. Candidates are
    kept when the first-merge gains of both flanking probes reach at most
    ``gamma_window[1]`` and not less than one window-width below
    ``gamma_window[0]`` (the boundary gain sinks steeply away from the
    collision, so the coarse probes routinely undershoot the window).
    Each candidate carries a (lower, middle, upper) triple and a coupling
    bracket, ready for :func:`find_ep3`.
    """
    g_lo, g_hi = float(gamma_window[0]), float(gamma_window[1])
    g_floor = g_lo - (g_hi - g_lo)
    j_vals = np.linspace(float(j_window[0]), float(j_window[1]), probes)
    tasks = [(n, float(j), g_hi, g_steps, reality_tol, indicator_floor) for j in j_vals]
    if workers <= 1:
        results = [_candidate_probe(t) for t in tasks]
    else:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:  # pragma: no cover
            ctx = multiprocessing.get_context()
        with ctx.Pool(processes=workers) as pool:
            results = list(pool.map(_candidate_probe, tasks, chunksize=1))

    candidates = []
    for i in range(probes - 1):
        left, right = results[i], results[i + 1]
        for mid in sorted(set(left) & set(right)):
            g_a, part_a = left[mid]
            g_b, part_b = right[mid]
            if part_a == part_b or mid in (part_a, part_b):
                continue
            if not (g_floor <= g_a <= g_hi and g_floor <= g_b <= g_hi):
                continue
            lo_part, up_part = sorted((part_a, part_b))
            candidates.append({
                "triple": (lo_part, mid, up_part),
                "j_bracket": (float(j_vals[i]), float(j_vals[i + 1])),
                "gammas": (float(g_a), float(g_b)),
                "partners": (part_a, part_b),
            })
    candidates.sort(key=lambda c: (c["triple"], c["j_bracket"]))
    return candidates


def verify_selection_rule(records) -> list[dict]:
    """Check every record against the index selection rules.

    Order-2 records must join opposite indices; order-3 records must carry a
    staggered signature (s, -s, s). Returns the list of violations (empty on
    success); violations are data, not errors.
    """
    violations = []
    for rec in records:
        idx = rec.indices
        if any(i not in (-1, 1) for i in idx):
            violations.append({"record": rec.to_dict(), "reason": "undefined index"})
        elif rec.order == 2:
            if idx[0] * idx[1] != -1:
                violations.append({"record": rec.to_dict(),
                                   "reason": "second-order point with equal indices"})
        elif rec.order == 3:
            if not (idx[0] == idx[2] == -idx[1]):
                violations.append({"record": rec.to_dict(),
                                   "reason": "third-order point without staggered signature"})
        else:
            violations.append({"record": rec.to_dict(),
                               "reason": f"unsupported order {rec.order}"})
    return violations


def selection_rule_scan(n: int, gamma_values, j_start: float = -1.0,
                        j_stop: float = 1.0, points: int = 801, workers: int = 1,
                        tol: float = BISECT_TOL, reality_tol=None,
                        indicator_floor: float = INDICATOR_FLOOR) -> dict:
    """Sweep the coupling at each gain value, refine all EP2s, check the rule.

    Returns a dict with the refined ``records``, the ``skipped`` partner
    exchanges, and the selection-rule ``violations`` (expected empty).
    """
    all_records: list[EPRecord] = []
    all_skipped: list[dict] = []
    for g in gamma_values:
        grid = SweepGrid(axis=AXIS_COUPLING, fixed_value=float(g),
                         points=tuple(np.linspace(j_start, j_stop, points)), n=n)
        tracks = sweep(grid, workers=workers, reality_tol=reality_tol,
                       indicator_floor=indicator_floor)
        records, skipped = locate_ep2_records(tracks, tol=tol, reality_tol=reality_tol,
                                              indicator_floor=indicator_floor)
        all_records.extend(records)
        all_skipped.extend(skipped)
    return {
        "records": all_records,
        "skipped": all_skipped,
        "violations": verify_selection_rule(all_records),
    }
