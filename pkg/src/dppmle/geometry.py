"""Local geometry of the population log-likelihood.

For a reference kernel L* with subset probabilities p*, the expected
log-likelihood of a candidate kernel L is

    Phi(L) = sum_J p*_J log det(L_J) - log det(I+L).

Every directional derivative of Phi has a closed form built from the
trace statistics a_{J,k} = Tr((L_J^{-1} H_J)^k) and their global
counterpart a_k = Tr(((I+L)^{-1} H)^k):

    d^k Phi(H,..,H) = (-1)^(k-1) (k-1)! (sum_J p*_J a_{J,k} - a_k).

At L = L* the gradient vanishes and the Hessian is minus the variance
of the linear statistic Tr((L*_Z)^{-1} H_Z), hence negative
semidefinite; its null space consists of the symmetric directions
supported on cross-block index pairs of L*.  Along those directions the
third derivative vanishes and the fourth is minus three times the
variance of the quadratic trace statistic, strictly negative for any
nonzero null direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import minors
from .errors import NotNullDirection
from .kernels import (DeterminantalGraph, Kernel, determinantal_graph,
                      stack_to_coords, symmetric_dim)
from .model import DppTable, build_table

#: Relative eigenvalue threshold used to identify the numerical null space.
NULL_EIG_TOL = 1e-9


class TraceCache:
    """Per-subset inverse minors of a kernel, zero-padded, built once.

    Immutable after construction; all geometry operations against the
    same kernel share it.
    """

    __slots__ = ("kernel", "padded_inv", "global_inv")

    def __init__(self, kernel: Kernel):
        minors.check_enum_budget(kernel.n)
        self.kernel = kernel
        self.padded_inv = minors.padded_inverses(kernel.matrix)
        self.global_inv = np.linalg.inv(np.eye(kernel.n) + kernel.matrix)


def trace_cache(obj) -> TraceCache:
    kernel = obj.kernel if isinstance(obj, DppTable) else obj
    cache = kernel._trace_cache
    if cache is None:
        cache = TraceCache(kernel)
        kernel._trace_cache = cache
    return cache


@dataclass
class TraceStatistics:
    """a_{J,k} over all subsets plus the global a_k, for one (L, H, k)."""

    kernel: Kernel
    direction: np.ndarray
    order: int
    per_subset: np.ndarray
    global_value: float


def _stats_upto(kernel: Kernel, direction: np.ndarray, kmax: int):
    """per[:, k-1] = a_{J,k} and glob[k-1] = a_k for k = 1..kmax."""
    cache = trace_cache(kernel)
    h = np.asarray(direction, dtype=float)
    m = cache.padded_inv @ h
    g = cache.global_inv @ h
    per = np.empty((m.shape[0], kmax))
    glob = np.empty(kmax)
    mp, gp = m, g
    for k in range(1, kmax + 1):
        if k > 1:
            mp = mp @ m
            gp = gp @ g
        per[:, k - 1] = np.einsum("jii->j", mp)
        glob[k - 1] = np.trace(gp)
    return per, glob


def trace_statistics(kernel: Kernel, direction: np.ndarray, k: int) -> TraceStatistics:
    if k < 1:
        raise ValueError("order k must be >= 1")
    per, glob = _stats_upto(kernel, direction, k)
    return TraceStatistics(kernel=kernel, direction=np.asarray(direction, dtype=float),
                           order=k, per_subset=per[:, k - 1],
                           global_value=float(glob[k - 1]))


def expected_log_likelihood(table_star: DppTable, kernel: Kernel) -> float:
    """Phi(L) under the reference table; maximal exactly on the sign
    orbit of the reference kernel."""
    if kernel.n != table_star.n:
        raise ValueError("ground-set sizes differ")
    log_dets = minors.principal_logdets(kernel.matrix)
    log_z = np.linalg.slogdet(np.eye(kernel.n) + kernel.matrix)[1]
    return float(table_star.probs @ log_dets - log_z)


def directional_derivative(table_star: DppTable, kernel: Kernel,
                           direction: np.ndarray, k: int) -> float:
    """k-th derivative of t -> Phi(L + tH) at t = 0, in closed form."""
    if not 1 <= k:
        raise ValueError("order k must be >= 1")
    per, glob = _stats_upto(kernel, direction, k)
    diff = float(table_star.probs @ per[:, k - 1] - glob[k - 1])
    return (-1.0) ** (k - 1) * math.factorial(k - 1) * diff


def hessian_quadratic_form(table_star: DppTable, direction: np.ndarray) -> float:
    """-Var[Tr((L*_Z)^{-1} H_Z)] over the table; always <= 0."""
    cache = trace_cache(table_star)
    h = np.asarray(direction, dtype=float)
    t = np.einsum("jab,ab->j", cache.padded_inv, h)
    p = table_star.probs
    mean = p @ t
    return -float(p @ t ** 2 - mean ** 2)


@dataclass
class HessianForm:
    """Hessian of Phi at the reference kernel, in symmetric coordinates.

    matrix[p, q] is the polarized form -Cov(T_p, T_q) of the subset
    trace statistics of the p-th and q-th orthonormal basis directions.
    """

    kernel: Kernel
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def null_tolerance(self) -> float:
        return NULL_EIG_TOL * max(1.0, float(np.abs(self.eigenvalues).max()))

    def null_vectors(self) -> np.ndarray:
        """Eigenvector columns whose eigenvalue is numerically zero."""
        keep = np.abs(self.eigenvalues) <= self.null_tolerance
        return self.eigenvectors[:, keep]

    def eigenvalues_csv(self) -> str:
        lines = ["index,eigenvalue"]
        lines += [f"{i},{repr(float(v))}" for i, v in enumerate(self.eigenvalues)]
        return "\n".join(lines) + "\n"

    def matrix_csv(self) -> str:
        lines = [",".join(repr(float(x)) for x in row) for row in self.matrix]
        return "\n".join(lines) + "\n"


def hessian_matrix(table_star: DppTable) -> HessianForm:
    cache = trace_cache(table_star)
    t = stack_to_coords(cache.padded_inv)          # (2^n, m)
    p = table_star.probs
    mean = p @ t
    cov = (t * p[:, None]).T @ t - np.outer(mean, mean)
    mat = -(cov + cov.T) / 2.0
    w, v = np.linalg.eigh(mat)
    return HessianForm(kernel=table_star.kernel, matrix=mat, eigenvalues=w, eigenvectors=v)


@dataclass
class NullSpaceBasis:
    """Orthonormal basis of the Hessian null space: one direction per
    unordered cross-component pair."""

    n: int
    pairs: list
    basis: list
    kernel: Kernel | None = None

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def coordinate_matrix(self) -> np.ndarray:
        """Basis directions as columns in symmetric coordinates."""
        if not self.basis:
            return np.zeros((symmetric_dim(self.n), 0))
        return stack_to_coords(np.stack(self.basis)).T


def null_space_basis(graph: DeterminantalGraph, kernel: Kernel | None = None) -> NullSpaceBasis:
    n = graph.n
    pairs = graph.cross_pairs()
    r = 1.0 / np.sqrt(2.0)
    basis = []
    for i, j in pairs:
        b = np.zeros((n, n))
        b[i, j] = b[j, i] = r
        basis.append(b)
    return NullSpaceBasis(n=n, pairs=pairs, basis=basis, kernel=kernel)


def fourth_order_form(table_star: DppTable, direction: np.ndarray,
                      null_tol: float = 1e-8) -> float:
    """Fourth derivative of Phi at the reference kernel along a null
    direction: -3 Var[Tr(((L*_Z)^{-1} H_Z)^2)].

    Zero exactly when the direction is zero, strictly negative
    otherwise.  Rejects directions outside the Hessian null space.
    """
    h = np.asarray(direction, dtype=float)
    q = hessian_quadratic_form(table_star, h)
    scale = max(1.0, float((h * h).sum()))
    if abs(q) > null_tol * scale:
        raise NotNullDirection(
            f"direction has Hessian value {q:.3e}, not a null direction")
    cache = trace_cache(table_star)
    m = cache.padded_inv @ h
    t2 = np.einsum("jab,jba->j", m, m)
    p = table_star.probs
    mean = p @ t2
    return -3.0 * float(p @ t2 ** 2 - mean ** 2)


def decompose_null_direction(direction: np.ndarray, graph: DeterminantalGraph):
    """Split a null direction into per-component-pair pieces.

    Each piece H^(a,b) keeps the entries between components a and b and
    comes with the sign vector that fixes the kernel while flipping the
    piece: +1 on component a, -1 elsewhere.  Pieces sum to the input
    exactly.  Directions with support inside a component are rejected.
    """
    h = np.asarray(direction, dtype=float)
    n = graph.n
    if h.shape != (n, n):
        raise ValueError(f"direction must be {n}x{n}")
    label = np.empty(n, dtype=int)
    for a, comp in enumerate(graph.components):
        for i in comp:
            label[i] = a
    same = label[:, None] == label[None, :]
    if np.any(h[same] != 0.0):
        raise NotNullDirection("direction has support inside a component")
    pieces = []
    k = len(graph.components)
    for a in range(k):
        chi_a = np.zeros(n)
        chi_a[list(graph.components[a])] = 1.0
        for b in range(a + 1, k):
            chi_b = np.zeros(n)
            chi_b[list(graph.components[b])] = 1.0
            piece = np.outer(chi_a, chi_b) * h + np.outer(chi_b, chi_a) * h
            if not piece.any():
                continue
            signs = 2.0 * chi_a - 1.0
            pieces.append((piece, signs))
    return pieces


@dataclass
class IdentityResiduals:
    """Residuals of the differentiation cascade of the normalization
    identity det(I+L) = sum_J det(L_J).

    r1..r4 are left-minus-right of the order 1..4 identities in the
    trace statistics, weighted by the subset probabilities of L; the
    matrix-form residual is the Frobenius gap between the probability-
    weighted padded inverse minors and (I+L)^{-1}.  Scales record the
    largest term magnitude of each identity for relative comparison.
    """

    r1: float
    r2: float
    r3: float
    r4: float
    matrix_form_residual: float
    scales: tuple

    def max_relative(self) -> float:
        rel = [abs(r) / max(s, 1e-300) for r, s in
               zip((self.r1, self.r2, self.r3, self.r4), self.scales)]
        return max(rel)

    def to_json(self) -> str:
        return json.dumps({
            "r1": self.r1, "r2": self.r2, "r3": self.r3, "r4": self.r4,
            "matrix_form_residual": self.matrix_form_residual,
        })


def identity_residuals(kernel: Kernel, direction: np.ndarray) -> IdentityResiduals:
    table = build_table(kernel)
    p = table.probs
    per, glob = _stats_upto(kernel, direction, 4)
    a1, a2, a3, a4 = (per[:, i] for i in range(4))
    g1, g2, g3, g4 = glob

    def delta(per_vals, glob_val):
        return float(p @ per_vals - glob_val)

    # order 1: expectation of the linear statistic equals its global value
    lhs1 = float(p @ a1)
    r1 = lhs1 - g1
    s1 = max(abs(lhs1), abs(g1))

    # order 2: centered second statistic equals centered square
    left2 = delta(a2, g2)
    right2 = delta(a1 ** 2, g1 ** 2)
    r2 = left2 - right2
    s2 = max(abs(left2), abs(right2))

    # order 3: third statistic from cubes and mixed first/second products
    left3 = delta(a3, g3)
    t3a = delta(a1 ** 3, g1 ** 3)
    t3b = delta(a1 * a2, g1 * g2)
    r3 = left3 - (-0.5 * t3a + 1.5 * t3b)
    s3 = max(abs(left3), abs(0.5 * t3a), abs(1.5 * t3b))

    # order 4: fourth statistic from quartic and mixed lower-order products
    left4 = delta(a4, g4)
    t4a = delta(a1 ** 4, g1 ** 4)
    t4b = delta(a1 ** 2 * a2, g1 ** 2 * g2)
    t4c = delta(a1 * a3, g1 * g3)
    t4d = delta(a2 ** 2, g2 ** 2)
    r4 = left4 - (t4a / 6.0 - t4b + 4.0 * t4c / 3.0 + t4d / 2.0)
    s4 = max(abs(left4), abs(t4a / 6.0), abs(t4b), abs(4.0 * t4c / 3.0), abs(t4d / 2.0))

    cache = trace_cache(kernel)
    weighted = np.einsum("j,jab->ab", p, cache.padded_inv)
    mf = float(np.linalg.norm(weighted - cache.global_inv))

    return IdentityResiduals(r1=r1, r2=r2, r3=r3, r4=r4, matrix_form_residual=mf,
                             scales=(max(s1, 1.0e-300), max(s2, 1e-300),
                                     max(s3, 1e-300), max(s4, 1e-300)))


def min_curvature(kernel_or_table) -> float:
    """Smallest eigenvalue of minus the Hessian coordinate matrix.

    Strictly positive exactly when the kernel is irreducible; reducible
    kernels return a value at numerical zero rather than erroring so
    parameter sweeps stay total.
    """
    table = kernel_or_table if isinstance(kernel_or_table, DppTable) else build_table(kernel_or_table)
    form = hessian_matrix(table)
    return float(-form.eigenvalues[-1])


def is_reducible(kernel: Kernel, zero_tol: float = 0.0) -> bool:
    return not determinantal_graph(kernel, zero_tol).irreducible
