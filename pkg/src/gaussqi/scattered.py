"""Quasi-interpolation of scattered data through the approximate partition.

Each partition entry carries a polynomial P_j in the scaled offset
s = (x - x_j)/(h_j sqrt(D)).  Attaching a derivative-recovery star to
node j splits P_j across the star members,

    P_{j,k} = P_j * w_k(sqrt(D) s),      w_k(t) = sum_alpha b_{alpha,k} t^alpha,
    P_{j,j} = P_j - sum_k P_{j,k},

so the column sums telescope back to P_j exactly.  The quasi-interpolant

    Mu(x) = (pi D)^{-n/2} sum_j [sum_k u(x_k) P_{j,k}(s_j)] exp(-|s_j|^2)

then reproduces constants up to the partition defect, reproduces
polynomials of degree below the star order N up to that same defect, and
converges like h^N for smooth data.  Feeding u = 1 collapses Mu to the
partition sum itself.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from itertools import combinations, islice

import numpy as np

from .errors import StarNotFound
from .nodes import NodeSet, Star, build_star, star_size
from .partition import ThetaFunction
from .polynomials import MultiIndex, Polynomial, enumerate_multiindices

log = logging.getLogger(__name__)


@dataclass
class ScatteredEntry:
    """Weight polynomials of one node: (data index, P_{j,k}) pairs, owner first."""

    node: int
    point: np.ndarray
    scale: float
    terms: list[tuple[int, Polynomial]]

    def __post_init__(self):
        self.point = np.atleast_1d(np.asarray(self.point, dtype=float))
        self.scale = float(self.scale)
        if self.scale <= 0:
            raise ValueError(f"node {self.node}: scale must be positive, got {self.scale}")
        if not self.terms:
            raise ValueError(f"node {self.node}: entry has no weight polynomials")
        for k, poly in self.terms:
            if poly.dim != self.point.size:
                raise ValueError(
                    f"node {self.node}: weight for {k} has dimension {poly.dim}, "
                    f"expected {self.point.size}"
                )

    def column_sum(self) -> Polynomial:
        """Sum of the weight polynomials; equals the partition polynomial P_j."""
        total = Polynomial.zero(self.point.size)
        for _, poly in self.terms:
            total = total + poly
        return total


@dataclass
class ScatteredQI:
    """Weight table of the scattered quasi-interpolant."""

    dim: int
    D: float
    order: int
    entries: list[ScatteredEntry]

    def __post_init__(self):
        if self.D <= 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        for e in self.entries:
            if e.point.size != self.dim:
                raise ValueError(
                    f"node {e.node} lives in dimension {e.point.size}, expected {self.dim}"
                )

    def data_indices(self) -> set[int]:
        """All node indices referenced by some weight polynomial."""
        out: set[int] = set()
        for e in self.entries:
            out.update(k for k, _ in e.terms)
        return out

    # -- serialization -----------------------------------------------------

    def to_csv(self, path) -> None:
        """One row per weight polynomial: node, neighbor, node coordinates,
        scale, D, N, then coefficients over graded-lex multi-indices padded
        to the largest degree present."""
        top = max((poly.degree for e in self.entries for _, poly in e.terms), default=0)
        alphas = enumerate_multiindices(self.dim, 0, max(top, 0))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["node", "neighbor"]
                + [f"x{i + 1}" for i in range(self.dim)]
                + ["h", "D", "N"]
                + ["c" + "".join(f"_{a}" for a in alpha) for alpha in alphas]
            )
            for e in self.entries:
                for k, poly in e.terms:
                    row = [str(e.node), str(k)]
                    row.extend(repr(float(v)) for v in e.point)
                    row.append(repr(float(e.scale)))
                    row.append(repr(float(self.D)))
                    row.append(str(self.order))
                    row.extend(repr(float(v)) for v in poly.coeff_vector(alphas))
                    writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ScatteredQI":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[:2] != ["node", "neighbor"]:
            raise ValueError(f"unrecognized weight-table CSV header: {header}")
        dim = 0
        while 2 + dim < len(header) and header[2 + dim] == f"x{dim + 1}":
            dim += 1
        base = 2 + dim
        if dim == 0 or header[base : base + 3] != ["h", "D", "N"]:
            raise ValueError(f"unrecognized weight-table CSV header: {header}")
        alphas = []
        for name in header[base + 3 :]:
            parts = name.split("_")
            if parts[0] != "c" or len(parts) != dim + 1:
                raise ValueError(f"unrecognized coefficient column: {name}")
            alphas.append(tuple(int(p) for p in parts[1:]))
        groups: dict[int, ScatteredEntry] = {}
        dval = nval = None
        for row in (r for r in rows[1:] if r):
            node, k = int(row[0]), int(row[1])
            point = np.array([float(v) for v in row[2 : 2 + dim]])
            h = float(row[base])
            if dval is None:
                dval, nval = float(row[base + 1]), int(row[base + 2])
            elif float(row[base + 1]) != dval or int(row[base + 2]) != nval:
                raise ValueError("rows disagree on D or N")
            poly = Polynomial(dim, dict(zip(alphas, (float(v) for v in row[base + 3 :]))))
            if node in groups:
                e = groups[node]
                if not np.array_equal(e.point, point) or e.scale != h:
                    raise ValueError(f"node {node}: rows disagree on point or scale")
                e.terms.append((k, poly))
            else:
                groups[node] = ScatteredEntry(node, point, h, [(k, poly)])
        if dval is None:
            raise ValueError("weight-table CSV has no entries")
        return cls(dim=dim, D=dval, order=nval, entries=[groups[j] for j in sorted(groups)])


def build_pjk(theta: ThetaFunction, stars, N: int) -> ScatteredQI:
    """Split every partition polynomial across its star of neighbours.

    stars maps node index to a Star of order N built at the node's scale
    (ignored for N = 1, where no derivative correction exists and each
    node keeps its own P_j).  The owner weight is defined as P_j minus
    the accumulated neighbour weights, so the column-sum identity holds
    by construction; degrees grow by at most N - 1.
    """
    if N < 1:
        raise ValueError(f"order must be >= 1, got {N}")
    root = math.sqrt(theta.D)
    entries = []
    for e in theta.entries:
        if N == 1:
            entries.append(ScatteredEntry(e.node, e.point.copy(), e.scale, [(e.node, e.poly)]))
            continue
        star = stars.get(e.node)
        if star is None:
            raise ValueError(f"no star supplied for node {e.node}")
        if star.order != N:
            raise ValueError(f"star at node {e.node} has order {star.order}, expected {N}")
        if star.owner != e.node:
            raise ValueError(f"star owned by node {star.owner} supplied for node {e.node}")
        if not math.isclose(star.h, e.scale, rel_tol=1e-9):
            raise ValueError(
                f"star at node {e.node} was built at scale {star.h}, node scale is {e.scale}"
            )
        terms: list[tuple[int, Polynomial]] = []
        total = Polynomial.zero(theta.dim)
        for ki, k in enumerate(star.members):
            pjk = e.poly * star.member_weight_poly(ki, theta.dim).compose_affine(root)
            total = total + pjk
            terms.append((int(k), pjk))
        entries.append(
            ScatteredEntry(e.node, e.point.copy(), e.scale, [(e.node, e.poly - total)] + terms)
        )
    return ScatteredQI(dim=theta.dim, D=theta.D, order=N, entries=entries)


def select_star_members(
    nodes: NodeSet,
    j: int,
    N: int,
    h: float,
    *,
    kappa2: float = 3.0,
    det_threshold: float = 1e-3,
    max_combos: int = 60,
) -> tuple[int, ...]:
    """Distance-ranked member search minimizing the inverse Vandermonde norm.

    Taking the first combination whose determinant clears the threshold
    can still pair nearly collinear neighbours, and their recovery
    weights then grow without bound as the node set fills in.  Scanning a
    fixed budget of combinations and keeping the best-conditioned one
    bounds the weights uniformly in h, which is what the convergence rate
    of Mu rests on.
    """
    origin = nodes.points[j]
    dists = np.linalg.norm(nodes.points - origin, axis=1)
    ranked = np.argsort(dists, kind="stable")
    cand = [int(k) for k in ranked if k != j and dists[k] <= kappa2 * h]
    m = star_size(N, nodes.dim)
    if len(cand) < m:
        raise StarNotFound(j)
    alphas = enumerate_multiindices(nodes.dim, 1, N - 1)
    combos = list(islice(combinations(cand, m), max_combos))
    scaled = (nodes.points[np.asarray(combos)] - origin) / h
    V = np.stack([np.prod(scaled ** np.array(a), axis=-1) for a in alphas], axis=-1)
    dets = np.linalg.det(V)
    ok = np.flatnonzero(np.abs(dets) >= det_threshold)
    if ok.size == 0:
        raise StarNotFound(j, best_det=float(np.max(np.abs(dets))))
    norms = np.max(np.abs(np.linalg.inv(V[ok])), axis=(1, 2))
    return combos[int(ok[np.argmin(norms)])]


def build_scattered(
    nodes: NodeSet,
    theta: ThetaFunction,
    N: int,
    *,
    kappa2: float = 3.0,
    det_threshold: float = 1e-3,
    policy: str = "stable",
    max_combos: int = 60,
) -> ScatteredQI:
    """Build order-N stars for every partition node and split the weights.

    policy "stable" picks members through select_star_members; "greedy"
    delegates to the node-model search, which stops at the first
    acceptable determinant.  Star search failures (StarNotFound)
    propagate to the caller; widening kappa2 admits more distant
    candidates when shells are sparse.
    """
    if N == 1:
        return build_pjk(theta, {}, 1)
    if policy not in ("stable", "greedy"):
        raise ValueError(f"unknown star policy {policy!r}")
    stars: dict[int, Star] = {}
    for e in theta.entries:
        if policy == "stable":
            members = select_star_members(
                nodes, e.node, N, e.scale,
                kappa2=kappa2, det_threshold=det_threshold, max_combos=max_combos,
            )
            stars[e.node] = build_star(
                nodes, e.node, N, e.scale, members=members, det_threshold=det_threshold
            )
        else:
            stars[e.node] = build_star(
                nodes, e.node, N, e.scale, kappa2=kappa2, det_threshold=det_threshold
            )
    return build_pjk(theta, stars, N)


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    """Truncated evaluation with its dropped tail reported separately.

    values is the truncated sum, truncation the difference to the full
    sum, and active the per-point count of nodes inside the cutoff; a
    zero count marks a point beyond the reach of every node.
    """

    values: np.ndarray
    truncation: np.ndarray
    active: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return self.values + self.truncation


def _accumulate(qi: ScatteredQI, data: np.ndarray, flat: np.ndarray, lim: float | None):
    out = np.zeros(flat.shape[0])
    active = np.zeros(flat.shape[0], dtype=int)
    root = math.sqrt(qi.D)
    for e in qi.entries:
        merged: dict[MultiIndex, float] = {}
        for k, poly in e.terms:
            u = data[k]
            if u == 0.0:
                continue
            for alpha, c in poly.coeffs.items():
                merged[alpha] = merged.get(alpha, 0.0) + u * c
        s = (flat - e.point) / (e.scale * root)
        r2 = np.einsum("ij,ij->i", s, s)
        mask = slice(None) if lim is None else r2 <= lim
        active[mask] += 1
        if merged:
            arg = s[mask]
            combined = Polynomial(qi.dim, merged)
            out[mask] += combined(arg[:, 0] if qi.dim == 1 else arg) * np.exp(-r2[mask])
    out *= (math.pi * qi.D) ** (-qi.dim / 2)
    return out, active


def evaluate_scattered(qi: ScatteredQI, data, x, *, rho_cut: float | None = 6.0):
    """Evaluate Mu at one point or many.

    data holds node values indexed like the node set the weights were
    built from; rho_cut drops node atoms with |x - x_j| beyond
    rho_cut * scale * sqrt(D), None keeps every term.  Shape conventions
    follow the partition evaluator: dim 1 is elementwise, higher
    dimensions use the last axis for coordinates.
    """
    data = np.asarray(data, dtype=float).ravel()
    needed = max(qi.data_indices(), default=-1)
    if data.size <= needed:
        raise ValueError(f"data covers {data.size} nodes, weights reference index {needed}")
    pts = np.asarray(x, dtype=float)
    if qi.dim == 1:
        scalar = pts.ndim == 0
        flat = pts.reshape(-1, 1)
    else:
        if pts.shape[-1] != qi.dim:
            raise ValueError(f"points have last axis {pts.shape[-1]}, expected {qi.dim}")
        scalar = pts.ndim == 1
        flat = pts.reshape(-1, qi.dim)
    lim = None if rho_cut is None else float(rho_cut) ** 2
    out, active = _accumulate(qi, data, flat, lim)
    if lim is not None and not np.all(active):
        log.debug(
            "%d of %d evaluation points lie beyond the cutoff of every node",
            int(np.sum(active == 0)), flat.shape[0],
        )
    if scalar:
        return float(out[0])
    return out.reshape(pts.shape if qi.dim == 1 else pts.shape[:-1])


def evaluation_report(qi: ScatteredQI, data, x, *, rho_cut: float = 6.0) -> EvalReport:
    """Truncated evaluation plus the tail the cutoff discarded.

    Runs the sum once with and once without the cutoff; the difference
    is exactly the truncation contribution at each point.
    """
    data = np.asarray(data, dtype=float).ravel()
    pts = np.asarray(x, dtype=float)
    flat = pts.reshape(-1, 1) if qi.dim == 1 else pts.reshape(-1, qi.dim)
    cut, active = _accumulate(qi, data, flat, float(rho_cut) ** 2)
    full, _ = _accumulate(qi, data, flat, None)
    return EvalReport(values=cut, truncation=full - cut, active=active)
