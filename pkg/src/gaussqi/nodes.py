"""Scattered node sets, star selection and layout condition predicates.

A node set is a flat list of points with one scale h_j per node.  Sets
produced by the seeded generators also remember which grid index each
node came from, which the gridded quasi-interpolant uses to look up the
node nearest to a grid point in O(1).

A "star" is the small neighbour set used to recover derivatives at a
node: the scaled Vandermonde matrix over the star must be invertible
with a determinant bounded away from zero.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations, product
from pathlib import Path

import numpy as np

from .errors import StarNotFound
from .polynomials import MultiIndex, Polynomial, enumerate_multiindices, multiindex_factorial

IndexBox = tuple[tuple[int, int], ...]


def box_indices(box: IndexBox):
    """Iterate the integer indices of an inclusive box in row-major order."""
    return product(*(range(lo, hi + 1) for lo, hi in box))


def box_size(box: IndexBox) -> int:
    out = 1
    for lo, hi in box:
        out *= max(0, hi - lo + 1)
    return out


def star_size(N: int, n: int) -> int:
    """Number of star members needed for approximation order N in dimension n."""
    return math.comb(N - 1 + n, n) - 1


class _BucketIndex:
    """Uniform hash-bucket index for nearest-node queries.

    Cell size should be on the order of the node spacing; queries expand
    cell rings until the running k-th distance beats the next ring's
    minimum possible distance.
    """

    def __init__(self, points: np.ndarray, cell: float):
        self.points = points
        self.cell = float(cell)
        self.buckets: dict[tuple, list[int]] = {}
        keys = np.floor(points / self.cell).astype(int)
        for i, key in enumerate(map(tuple, keys)):
            self.buckets.setdefault(key, []).append(i)

    def nearest(self, point, k: int = 1, allowed=None) -> list[int]:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        base = tuple(np.floor(point / self.cell).astype(int))
        dim = point.size
        found: list[tuple[float, int]] = []
        ring = 0
        max_ring = 1 + int(np.ptp(self.points) / self.cell) if len(self.points) else 0
        while ring <= max_ring + 1:
            for offset in product(range(-ring, ring + 1), repeat=dim):
                if max(abs(o) for o in offset) != ring and ring > 0:
                    continue
                key = tuple(b + o for b, o in zip(base, offset))
                for i in self.buckets.get(key, ()):
                    if allowed is not None and not allowed[i]:
                        continue
                    d = float(np.linalg.norm(self.points[i] - point))
                    found.append((d, i))
            if len(found) >= k:
                found.sort()
                # the next unexplored ring cannot contain anything closer than this
                ring_floor = ring * self.cell
                if found[k - 1][0] <= ring_floor:
                    return [i for _, i in found[:k]]
            ring += 1
        found.sort()
        return [i for _, i in found[:k]]


@dataclass
class NodeSet:
    """Immutable scattered node collection with per-node scales."""

    dim: int
    points: np.ndarray
    scales: np.ndarray
    h: float | None = None
    kappa1: float | None = None
    grid_index: dict[MultiIndex, int] | None = None
    _index: _BucketIndex | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if self.points.shape[1] != self.dim:
            raise ValueError(f"points have {self.points.shape[1]} columns, expected {self.dim}")
        if self.scales.shape[0] != self.points.shape[0]:
            raise ValueError("scales and points must have equal length")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def scale_ratio(self) -> float:
        return float(self.scales.max() / self.scales.min())

    def _bucket(self) -> _BucketIndex:
        if self._index is None:
            self._index = _BucketIndex(self.points, float(self.scales.max()))
        return self._index

    def nearest(self, point, k: int = 1, allowed=None) -> list[int]:
        """Indices of the k nodes nearest to a point, distance then index order."""
        return self._bucket().nearest(point, k=k, allowed=allowed)

    def node_for_index(self, j: MultiIndex) -> int:
        if self.grid_index is None:
            raise ValueError("node set carries no grid index map")
        return self.grid_index[tuple(j)]

    # -- serialization -----------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i + 1}" for i in range(self.dim)] + ["h"])
            for p, s in zip(self.points, self.scales):
                writer.writerow([repr(float(v)) for v in p] + [repr(float(s))])

    @classmethod
    def from_csv(cls, path) -> "NodeSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if not header or header[-1] != "h" or not header[0].startswith("x"):
            raise ValueError(f"unrecognized node CSV header: {header}")
        dim = len(header) - 1
        data = np.array([[float(v) for v in row] for row in rows[1:] if row])
        return cls(dim, data[:, :dim], data[:, dim])


def generate_perturbed_grid(
    n: int, h: float, kappa1: float, index_box: IndexBox, seed: int
) -> NodeSet:
    """One node drawn uniformly from the ball B(h*j, h*kappa1) per index j.

    Deterministic for a fixed seed; the draw order is the row-major index
    order of the box.
    """
    if not 0 < kappa1 <= 0.5:
        raise ValueError(f"kappa1 must lie in (0, 1/2], got {kappa1}")
    rng = np.random.default_rng(seed)
    pts = []
    gidx = {}
    for j in box_indices(index_box):
        center = h * np.asarray(j, dtype=float)
        gidx[tuple(j)] = len(pts)
        pts.append(center + _uniform_ball(rng, n, h * kappa1))
    return NodeSet(
        dim=n,
        points=np.array(pts),
        scales=np.full(len(pts), float(h)),
        h=float(h),
        kappa1=float(kappa1),
        grid_index=gidx,
    )


def _uniform_ball(rng, n: int, radius: float) -> np.ndarray:
    while True:
        cand = rng.uniform(-1.0, 1.0, n)
        if np.sum(cand**2) <= 1.0:
            return radius * cand


@dataclass
class Star:
    """Derivative-recovery neighbourhood of one node.

    bmat[a, k] holds the inverse-Vandermonde entry pairing the a-th
    multi-index (graded-lex, degrees 1..N-1) with the k-th member.
    """

    owner: int
    owner_point: np.ndarray
    members: tuple[int, ...]
    order: int
    h: float
    alphas: tuple[MultiIndex, ...]
    vander: np.ndarray
    bmat: np.ndarray
    det: float

    def member_weight_poly(self, k: int, dim: int) -> Polynomial:
        """w_k(t) = sum_alpha b_{alpha,k} t^alpha in the scaled offset t."""
        return Polynomial(dim, {a: self.bmat[ai, k] for ai, a in enumerate(self.alphas)})

    def weights_at(self, t) -> np.ndarray:
        """Vector of w_k(t) over members for a scaled offset t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        powers = np.array([np.prod(t**np.array(a)) for a in self.alphas])
        return self.bmat.T @ powers


def _vandermonde(points: np.ndarray, origin: np.ndarray, h: float, alphas) -> np.ndarray:
    scaled = (points - origin) / h
    cols = [np.prod(scaled ** np.array(a), axis=1) for a in alphas]
    return np.column_stack(cols)


def build_star(
    nodes: NodeSet,
    j: int,
    N: int,
    h: float,
    *,
    kappa2: float = 3.0,
    det_threshold: float = 1e-3,
    members: tuple[int, ...] | None = None,
    max_combos: int = 20,
) -> Star:
    """Select a star for node j and invert its scaled Vandermonde matrix.

    Candidates are ranked by distance; combinations are tried in that
    order and the first one with |det V| >= det_threshold wins.  Passing
    `members` skips the search and just validates the given set.
    """
    if N < 2:
        raise ValueError(f"star construction needs N >= 2, got {N}")
    m = star_size(N, nodes.dim)
    alphas = tuple(enumerate_multiindices(nodes.dim, 1, N - 1))
    origin = nodes.points[j]

    if members is not None:
        members = tuple(int(k) for k in members)
        if len(members) != m:
            raise ValueError(f"star needs {m} members, got {len(members)}")
        V = _vandermonde(nodes.points[list(members)], origin, h, alphas)
        det = float(np.linalg.det(V))
        if abs(det) < det_threshold:
            raise StarNotFound(j, best_det=abs(det))
        return Star(j, origin, members, N, h, alphas, V, np.linalg.inv(V), det)

    dists = np.linalg.norm(nodes.points - origin, axis=1)
    order = np.argsort(dists, kind="stable")
    candidates = [int(k) for k in order if k != j and dists[k] <= kappa2 * h]
    if len(candidates) < m:
        raise StarNotFound(j)

    best_det = 0.0
    for count, combo in enumerate(combinations(candidates, m)):
        if count >= max_combos:
            break
        V = _vandermonde(nodes.points[list(combo)], origin, h, alphas)
        det = float(np.linalg.det(V))
        best_det = max(best_det, abs(det))
        if abs(det) >= det_threshold:
            return Star(j, origin, tuple(combo), N, h, alphas, V, np.linalg.inv(V), det)
    raise StarNotFound(j, best_det=best_det)


def build_stencil_stars(
    nodes: NodeSet, N: int, offsets: tuple[MultiIndex, ...], *, det_threshold: float = 1e-3
) -> dict[MultiIndex, Star]:
    """Stars from fixed grid-index offsets, for grid-generated node sets.

    Returns one star per grid index whose offset neighbours all exist.
    """
    if nodes.grid_index is None:
        raise ValueError("stencil stars need a grid-generated node set")
    out = {}
    for j, owner in nodes.grid_index.items():
        try:
            members = tuple(
                nodes.grid_index[tuple(ji + oi for ji, oi in zip(j, off))] for off in offsets
            )
        except KeyError:
            continue
        out[j] = build_star(
            nodes, owner, N, nodes.scales[owner], members=members, det_threshold=det_threshold
        )
    return out


def recover_derivatives(star: Star, nodes: NodeSet, values: np.ndarray) -> dict[MultiIndex, float]:
    """Scaled derivative coefficients a_alpha from data values on the star.

    a_alpha = (alpha! / h^|alpha|) sum_k b_{alpha,k} (u(x_k) - u(x_j));
    exact for polynomial data of degree <= N-1.
    """
    diffs = np.array([values[k] - values[star.owner] for k in star.members])
    coeffs = star.bmat @ diffs
    out = {}
    for ai, alpha in enumerate(star.alphas):
        out[alpha] = multiindex_factorial(alpha) / star.h ** sum(alpha) * float(coeffs[ai])
    return out


@dataclass
class ConditionReport:
    """Outcome of the layout condition checks; None means not evaluated.

    Witnesses identify the worst case: the emptiest ball for the covering
    condition, the smallest determinant for star existence.
    """

    ball_coverage_ok: bool | None = None
    worst_ball_index: MultiIndex | None = None
    worst_ball_distance: float | None = None

    stars_ok: bool | None = None
    min_star_det: float | None = None
    star_failures: list[MultiIndex] = field(default_factory=list)

    coverage_ok: bool | None = None
    uncovered_nodes: list[int] = field(default_factory=list)

    per_node_stars_ok: bool | None = None
    min_per_node_det: float | None = None
    per_node_failures: list[int] = field(default_factory=list)

    refinement_ok: bool | None = None
    worst_refinement_distance: float | None = None

    def passed(self) -> bool:
        checks = [
            self.ball_coverage_ok,
            self.stars_ok,
            self.coverage_ok,
            self.per_node_stars_ok,
            self.refinement_ok,
        ]
        return all(c for c in checks if c is not None)


def check_conditions(
    nodes: NodeSet,
    *,
    h: float | None = None,
    kappa1: float | None = None,
    index_box: IndexBox | None = None,
    N: int | None = None,
    kappa2: float = 3.0,
    det_threshold: float = 1e-3,
    per_node: bool = False,
    fine_centers: np.ndarray | None = None,
    fine_scale: float | None = None,
) -> ConditionReport:
    """Evaluate the layout conditions that apply to the given arguments.

    - ball coverage: every ball B(h*j, h*kappa1), j in index_box, holds a node;
    - star existence and node coverage: stars for the node nearest each
      grid point exist (needs N), and their union covers the node set;
    - per-node stars: a star exists for every node at its own scale;
    - refinement coverage: every fine-scale node lies within
      kappa1*fine_scale of a fine grid center.
    """
    report = ConditionReport()

    if index_box is not None and h is not None and kappa1 is not None:
        worst = (-1.0, None)
        ok = True
        for j in box_indices(index_box):
            center = h * np.asarray(j, dtype=float)
            nearest = nodes.nearest(center, k=1)
            d = float(np.linalg.norm(nodes.points[nearest[0]] - center)) if nearest else np.inf
            if d > worst[0]:
                worst = (d, tuple(j))
            if d > h * kappa1:
                ok = False
        report.ball_coverage_ok = ok
        report.worst_ball_distance, report.worst_ball_index = worst

    if index_box is not None and h is not None and N is not None:
        covered = np.zeros(len(nodes), dtype=bool)
        min_det = np.inf
        failures = []
        for j in box_indices(index_box):
            center = h * np.asarray(j, dtype=float)
            owner = nodes.nearest(center, k=1)[0]
            covered[owner] = True
            try:
                star = build_star(
                    nodes, owner, N, h, kappa2=kappa2, det_threshold=det_threshold
                )
            except StarNotFound as exc:
                failures.append(tuple(j))
                if exc.best_det is not None:
                    min_det = min(min_det, exc.best_det)
                continue
            min_det = min(min_det, abs(star.det))
            for k in star.members:
                covered[k] = True
        report.stars_ok = not failures
        report.min_star_det = None if np.isinf(min_det) else float(min_det)
        report.star_failures = failures
        report.coverage_ok = bool(covered.all())
        report.uncovered_nodes = [int(i) for i in np.flatnonzero(~covered)]

    if per_node and N is not None:
        min_det = np.inf
        failures = []
        for j in range(len(nodes)):
            try:
                star = build_star(
                    nodes, j, N, float(nodes.scales[j]), kappa2=kappa2, det_threshold=det_threshold
                )
                min_det = min(min_det, abs(star.det))
            except StarNotFound:
                failures.append(j)
        report.per_node_stars_ok = not failures
        report.min_per_node_det = None if np.isinf(min_det) else float(min_det)
        report.per_node_failures = failures

    if fine_centers is not None and fine_scale is not None and kappa1 is not None:
        fine_nodes = np.flatnonzero(np.isclose(nodes.scales, fine_scale))
        worst = 0.0
        for i in fine_nodes:
            d = float(np.min(np.linalg.norm(fine_centers - nodes.points[i], axis=1)))
            worst = max(worst, d)
        report.refinement_ok = worst < kappa1 * fine_scale if len(fine_nodes) else True
        report.worst_refinement_distance = worst if len(fine_nodes) else None

    return report
