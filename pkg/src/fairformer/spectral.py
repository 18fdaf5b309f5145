"""Structure encoding from adjacency eigenvectors.

The production eigensolver is a full-reorthogonalization Lanczos iteration
driven purely by mat-vec products, so it never forms a dense factorization of
the operator; the Krylov dimension grows until the requested pairs hit the
residual tolerance. Dense n x n eigendecompositions are reserved for the
alignment certificate below, which is restricted to n <= 500 by contract.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .data import Graph
from .errors import (ConvergenceError, FairformerError, SpectralGapError,
                     TieWarning, DegenerateSpectrumWarning, UndefinedCosineError)


@dataclass(frozen=True)
class SpectralBasis:
    """Selected eigenpairs: column i of structure_matrix pairs with eigenvalues[i]."""

    eigenvalues: np.ndarray
    structure_matrix: np.ndarray
    source: str  # "adjacency" (largest magnitude) or "laplacian" (smallest nontrivial)
    tol: float
    residuals: np.ndarray
    tie_warning: bool = False
    degenerate_warning: bool = False

    @property
    def n(self) -> int:
        return self.structure_matrix.shape[0]

    @property
    def t(self) -> int:
        return self.structure_matrix.shape[1]


@dataclass(frozen=True)
class FusedFeatures:
    """Node features with structure columns appended: matrix = [H | B]."""

    matrix: np.ndarray
    d_original: int
    sensitive_index: int

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_fused(self) -> int:
        return self.matrix.shape[1]


def _as_matvec(a):
    """Return (matvec over column blocks, n) for Graph, sparse or dense input."""
    if isinstance(a, Graph):
        mat = a.adjacency
        return (lambda x: mat @ x), a.n
    if sp.issparse(a):
        return (lambda x: a @ x), a.shape[0]
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise FairformerError(f"expected a square operator, got shape {arr.shape}")
    return (lambda x: arr @ x), arr.shape[0]


def _canonicalize_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for i in range(out.shape[1]):
        col = out[:, i]
        cutoff = 1e-12 * max(np.max(np.abs(col)), 1e-300)
        nz = np.nonzero(np.abs(col) > cutoff)[0]
        if nz.size and col[nz[0]] < 0:
            out[:, i] = -col
    return out


def _lanczos_select(matvec, n, wanted, required, tol, max_iters, seed, which,
                    deflate=None):
    """Lanczos with full reorthogonalization; returns `wanted` Ritz pairs.

    `which` selects by largest magnitude or smallest value. Convergence is
    demanded only for the first `required` pairs; extra pairs (used for tie
    detection) are best-effort estimates. `deflate` columns are projected out
    of every basis vector.
    """
    defl = None
    n_eff = n
    if deflate is not None:
        defl = np.atleast_2d(np.asarray(deflate, dtype=np.float64))
        if defl.shape[0] != n:
            defl = defl.T
        n_eff = n - defl.shape[1]
    if required > n_eff:
        raise FairformerError(
            f"requested {required} eigenpairs but the deflated operator has rank at most {n_eff}")
    if required == 0 and wanted == 0:
        return np.empty(0), np.empty((n, 0)), np.empty(0), None

    m_max = min(n_eff, max_iters)
    rng = np.random.default_rng(seed)

    def orthogonalize(vec, basis_cols):
        if defl is not None:
            vec = vec - defl @ (defl.T @ vec)
        for _ in range(2):
            for q in basis_cols:
                vec = vec - q * (q @ vec)
        return vec

    def fresh_vector(basis_cols):
        for _ in range(20):
            v = orthogonalize(rng.standard_normal(n), basis_cols)
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                return v / norm
        return None

    qs, alphas, betas = [], [], []
    q = fresh_vector([])
    if q is None:
        raise ConvergenceError("could not build a start vector orthogonal to the deflation space")
    beta_prev = 0.0
    q_prev = np.zeros(n)

    def ritz(order_only=False):
        m = len(alphas)
        tmat = np.diag(alphas)
        if m > 1:
            off = np.asarray(betas[:m - 1])
            tmat += np.diag(off, 1) + np.diag(off, -1)
        theta, svec = np.linalg.eigh(tmat)
        if which == "largest_magnitude":
            order = np.argsort(-np.abs(theta), kind="stable")
        else:
            order = np.argsort(theta, kind="stable")
        theta = theta[order]
        svec = svec[:, order]
        take = min(wanted, m)
        resid_est = np.abs(betas[-1] * svec[-1, :take]) if betas else np.zeros(take)
        if order_only:
            return theta[:take], None, resid_est
        qmat = np.column_stack(qs)
        return theta[:take], qmat @ svec[:, :take], resid_est

    while True:
        u = matvec(q)
        alpha = float(q @ u)
        r = u - alpha * q - beta_prev * q_prev
        qs.append(q)
        alphas.append(alpha)
        r = orthogonalize(r, qs)
        beta = float(np.linalg.norm(r))

        m = len(alphas)
        done = m >= m_max
        if not done and beta <= 1e-12 * max(1.0, abs(alpha)):
            # invariant subspace found; restart in a fresh direction
            nxt = fresh_vector(qs)
            if nxt is None:
                done = True
            else:
                q_prev, beta_prev, q = q, 0.0, nxt
                betas.append(0.0)
        elif not done:
            q_prev, beta_prev = q, beta
            q = r / beta
            betas.append(beta)

        if done or (m >= max(required + 2, 3) and m % 5 == 0):
            theta, _, resid_est = ritz(order_only=True)
            need = min(required, len(theta))
            if need and np.all(resid_est[:need] <= tol * np.maximum(1.0, np.abs(theta[:need]))):
                done = True
            elif len(theta) >= required and required == 0:
                done = True
        if done:
            break

    theta, vectors, _ = ritz()
    # true residuals for the pairs we must guarantee
    resid = np.zeros(len(theta))
    for i in range(min(required, len(theta))):
        v = vectors[:, i]
        nv = np.linalg.norm(v)
        if nv > 0:
            vectors[:, i] = v / nv
        resid[i] = np.linalg.norm(matvec(vectors[:, i]) - theta[i] * vectors[:, i])
    bad = [i for i in range(min(required, len(theta)))
           if resid[i] > tol * max(1.0, abs(theta[i]))]
    if bad:
        raise ConvergenceError(
            f"eigensolver did not converge within {max_iters} iterations; "
            f"worst residual {resid[bad[-1]]:.3e}",
            achieved_residual=float(np.max(resid[bad])))
    return theta, vectors, resid, len(alphas)


def top_magnitude_eigenpairs(a, t: int, tol: float = 1e-10, max_iters: int = 1000,
                             seed: int = 0) -> SpectralBasis:
    """The t eigenpairs of largest |eigenvalue| of a symmetric operator.

    Accepts a Graph (its adjacency), a scipy sparse matrix or a dense symmetric
    array; only mat-vec products are applied. A magnitude tie at the cut index
    (|lambda_t| matching |lambda_{t+1}| within tol) sets tie_warning: the basis
    stays valid but which eigenvector fills the last slot is seed-dependent.
    """
    matvec, n = _as_matvec(a)
    if t < 0 or t > n:
        raise FairformerError(f"t={t} out of range for n={n}")
    if t == 0:
        return SpectralBasis(np.empty(0), np.empty((n, 0)), "adjacency", tol, np.empty(0))

    wanted = min(t + 1, n)
    theta, vectors, resid, _ = _lanczos_select(
        matvec, n, wanted=wanted, required=t, tol=tol, max_iters=max_iters,
        seed=seed, which="largest_magnitude")

    tie = False
    if len(theta) > t and abs(abs(theta[t - 1]) - abs(theta[t])) <= tol * max(1.0, abs(theta[t - 1])):
        tie = True
        warnings.warn("magnitude tie at the selection cut; last eigenvector is seed-dependent",
                      TieWarning, stacklevel=2)

    basis = SpectralBasis(
        eigenvalues=theta[:t].copy(),
        structure_matrix=_canonicalize_signs(vectors[:, :t]),
        source="adjacency",
        tol=tol,
        residuals=resid[:t].copy(),
        tie_warning=tie,
    )
    return basis


def laplacian_small_eigenpairs(g: Graph, t: int, tol: float = 1e-10,
                               max_iters: int = 1000, seed: int = 0) -> SpectralBasis:
    """The t smallest nontrivial eigenpairs of L = D - A.

    The constant eigenvector is deflated away. Graphs with more than t + 1
    connected components cannot avoid the remaining kernel, so the result
    carries degenerate_warning and may include (near-)zero eigenvalues.
    """
    if t < 0 or t > g.n - 1:
        raise FairformerError(f"t={t} out of range for the deflated Laplacian of n={g.n}")
    degrees = np.asarray(g.adjacency.sum(axis=1)).ravel()
    adj = g.adjacency

    def matvec(x):
        return degrees * x - adj @ x

    if t == 0:
        return SpectralBasis(np.empty(0), np.empty((g.n, 0)), "laplacian", tol, np.empty(0))

    ones = np.full((g.n, 1), 1.0 / np.sqrt(g.n))
    theta, vectors, resid, _ = _lanczos_select(
        matvec, g.n, wanted=t, required=t, tol=tol, max_iters=max_iters,
        seed=seed, which="smallest", deflate=ones)
    theta = np.where(np.abs(theta) <= tol, 0.0, theta)

    n_components = connected_components(adj, directed=False)[0]
    degenerate = n_components > t + 1
    if degenerate:
        warnings.warn(
            f"laplacian kernel has dimension {n_components}; selection includes degenerate pairs",
            DegenerateSpectrumWarning, stacklevel=2)

    return SpectralBasis(
        eigenvalues=theta.copy(),
        structure_matrix=_canonicalize_signs(vectors),
        source="laplacian",
        tol=tol,
        residuals=resid.copy(),
        degenerate_warning=degenerate,
    )


def fuse(g: Graph, basis: SpectralBasis, scale_structure: bool = False) -> FusedFeatures:
    """Concatenate node features with the structure matrix, features first.

    scale_structure min-max rescales each structure column to [-1, 1] before
    concatenation (off by default; unit-norm eigenvector columns are used raw).
    """
    if basis.n != g.n:
        raise FairformerError(f"basis has {basis.n} rows but graph has {g.n} nodes")
    b = basis.structure_matrix
    if scale_structure and b.shape[1]:
        b = b.copy()
        for i in range(b.shape[1]):
            lo, hi = b[:, i].min(), b[:, i].max()
            if hi > lo:
                b[:, i] = -1.0 + 2.0 * (b[:, i] - lo) / (hi - lo)
    return FusedFeatures(matrix=np.concatenate([g.features, b], axis=1),
                         d_original=g.d, sensitive_index=g.sensitive_index)


@dataclass(frozen=True)
class AlignmentReport:
    """Cosine alignment of hop-aggregated features with the dominant eigenvector.

    For each hop count k the report carries the directly computed cosine
    between the k-hop aggregate of the reference column and the column itself,
    the same number evaluated through the eigendecomposition identity, the
    k -> infinity limit cos(p1, column), and the gap to that limit. The decay
    constant is fit from hop-1 quantities: with beta_i the normalized squared
    alignment coefficients, U_1 the aggregate non-dominant correlation mass
    and rho the eigenvalue ratio, gap_k <= C rho^k holds for every k >= 1
    whenever U_1 < beta_1.
    """

    k_values: np.ndarray
    direct: np.ndarray
    spectral_formula: np.ndarray
    limit: float
    gaps: np.ndarray
    alphas: np.ndarray
    eigenvalues: np.ndarray
    eigenvalue_ratio: float
    dominant_mass: float
    nondominant_correlation: np.ndarray
    decay_constant: float | None
    decay_constant_naive: float
    decay_applicable: bool
    identity_max_error: float
    decay_ok: bool

    def lines(self):
        yield f"eigenvalue_ratio={self.eigenvalue_ratio!r}"
        yield f"limit_cosine={self.limit!r}"
        yield f"identity_max_error={self.identity_max_error!r}"
        yield f"decay_applicable={int(self.decay_applicable)}"
        if self.decay_constant is not None:
            yield f"decay_constant={self.decay_constant!r}"
        yield f"decay_ok={int(self.decay_ok)}"
        for i, k in enumerate(self.k_values):
            yield (f"k={int(k)} direct={self.direct[i]!r} formula={self.spectral_formula[i]!r} "
                   f"gap={self.gaps[i]!r}")


_DECAY_FLOAT_SLACK = 1e-12


def spectral_alignment_report(g: Graph, k_max: int, column: np.ndarray | None = None,
                              gap_rtol: float = 1e-8) -> AlignmentReport:
    """Certify the dominant-eigenvector alignment identity on a small graph.

    Dense route: full symmetric eigendecomposition (n <= 500 enforced).
    Direct route: repeated sparse mat-vec application. The two cosine series
    must agree to machine precision; their gap to the limit cosine is bounded
    by decay_constant * ratio^k when the hop-1 fit is applicable.
    """
    if g.n > 500:
        raise FairformerError(f"alignment certificate requires n <= 500, got {g.n}")
    if k_max < 1:
        raise FairformerError("k_max must be >= 1")
    h = g.sensitive if column is None else np.asarray(column, dtype=np.float64)
    if h.shape != (g.n,):
        raise FairformerError(f"reference column must have shape ({g.n},)")
    norm_h = np.linalg.norm(h)
    if norm_h == 0:
        raise UndefinedCosineError("reference column is identically zero")

    dense = g.adjacency.toarray().astype(np.float64)
    lam, pvecs = np.linalg.eigh(dense)
    order = np.argsort(-np.abs(lam), kind="stable")
    lam = lam[order]
    pvecs = _canonicalize_signs(pvecs[:, order])
    if g.n < 2 or abs(lam[0]) - abs(lam[1]) <= gap_rtol * max(1.0, abs(lam[0])):
        raise SpectralGapError(
            f"|lambda_1|={abs(lam[0]):.6g} and |lambda_2|={abs(lam[1]) if g.n > 1 else 0:.6g} "
            "violate the strict-gap precondition")

    alphas = pvecs.T @ h
    total = float(np.sum(alphas ** 2))
    limit = float(alphas[0] / np.sqrt(total))
    beta = alphas ** 2 / total
    r_signed = lam / lam[0]
    r_abs = np.abs(r_signed)
    ratio = float(r_abs[1])

    ks = np.arange(1, k_max + 1)
    direct = np.zeros(k_max)
    formula = np.zeros(k_max)
    nondom = np.zeros(k_max)
    x = h.copy()
    for i, k in enumerate(ks):
        x = g.adjacency @ x
        nx = np.linalg.norm(x)
        if nx == 0:
            raise UndefinedCosineError(f"hop-{k} aggregate vanished; cosine undefined")
        direct[i] = float((x @ h) / (nx * norm_h))
        num = alphas[0] ** 2 + np.sum(alphas[1:] ** 2 * r_signed[1:] ** k)
        den = np.sqrt(alphas[0] ** 2 + np.sum(alphas[1:] ** 2 * r_signed[1:] ** (2 * k)))
        formula[i] = float(num / (den * np.sqrt(total)))
        nondom[i] = float(np.sum(beta[1:] * r_abs[1:] ** k))

    gaps = np.abs(direct - limit)
    b1 = float(beta[0])
    u1 = float(nondom[0])
    applicable = u1 < b1
    constant = None
    if applicable and ratio > 0:
        constant = u1 * (2 * b1 + u1 + b1 * ratio) / (np.sqrt(b1) * (2 * b1 - u1) * ratio)
    naive = float(gaps[0] / ratio) if ratio > 0 else float("inf")

    decay_ok = False
    if constant is not None:
        decay_ok = bool(np.all(gaps <= constant * ratio ** ks + _DECAY_FLOAT_SLACK))

    return AlignmentReport(
        k_values=ks,
        direct=direct,
        spectral_formula=formula,
        limit=limit,
        gaps=gaps,
        alphas=alphas,
        eigenvalues=lam,
        eigenvalue_ratio=ratio,
        dominant_mass=b1,
        nondominant_correlation=nondom,
        decay_constant=None if constant is None else float(constant),
        decay_constant_naive=naive,
        decay_applicable=applicable,
        identity_max_error=float(np.max(np.abs(direct - formula))),
        decay_ok=decay_ok,
    )


_CACHE_MAGIC = b"FFSB"
_CACHE_VERSION = 1
_SOURCE_CODES = {"adjacency": 0, "laplacian": 1}
_SOURCE_NAMES = {v: k for k, v in _SOURCE_CODES.items()}


def adjacency_content_hash(g: Graph) -> bytes:
    m = g.adjacency.tocsr().sorted_indices()
    h = hashlib.sha256()
    h.update(struct.pack("<Q", g.n))
    h.update(m.indptr.astype("<i8").tobytes())
    h.update(m.indices.astype("<i8").tobytes())
    return h.digest()


def save_basis_cache(path, g: Graph, basis: SpectralBasis) -> None:
    """Write the basis with a header and the adjacency content hash (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<B", _CACHE_VERSION))
        fh.write(struct.pack("<B", _SOURCE_CODES[basis.source]))
        fh.write(struct.pack("<BB", int(basis.tie_warning), int(basis.degenerate_warning)))
        fh.write(struct.pack("<QQ", basis.n, basis.t))
        fh.write(struct.pack("<d", basis.tol))
        fh.write(adjacency_content_hash(g))
        fh.write(np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.residuals, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.structure_matrix, dtype="<f8").tobytes())


def load_basis_cache(path, g: Graph) -> SpectralBasis | None:
    """Read a cached basis; returns None when the adjacency hash does not match."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CACHE_MAGIC:
            raise FairformerError(f"{path}: not a basis cache file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != _CACHE_VERSION:
            raise FairformerError(f"{path}: unsupported cache version {version}")
        (source_code,) = struct.unpack("<B", fh.read(1))
        tie, degenerate = struct.unpack("<BB", fh.read(2))
        n, t = struct.unpack("<QQ", fh.read(16))
        (tol,) = struct.unpack("<d", fh.read(8))
        digest = fh.read(32)
        if digest != adjacency_content_hash(g):
            return None
        eigenvalues = np.frombuffer(fh.read(8 * t), dtype="<f8").copy()
        residuals = np.frombuffer(fh.read(8 * t), dtype="<f8").copy()
        matrix = np.frombuffer(fh.read(8 * n * t), dtype="<f8").reshape(n, t).copy()
    return SpectralBasis(eigenvalues=eigenvalues, structure_matrix=matrix,
                         source=_SOURCE_NAMES[source_code], tol=tol, residuals=residuals,
                         tie_warning=bool(tie), degenerate_warning=bool(degenerate))
