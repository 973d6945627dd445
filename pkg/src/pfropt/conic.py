"""First-order solver for quadratic-objective programs over free/box/PSD blocks.

    minimize   1/2 x' diag(p) x + q' x
    subject to A x = b,  x in C = Free x Box x PSD x ...

PSD blocks are stored in scaled-vector form (svec: upper triangle, off-diagonal
entries times sqrt(2)) so Frobenius inner products become dot products.

The method is ADMM on the splitting x in {Ax=b} (with the quadratic), z in C:
the x-update solves a cached sparse KKT factorization, the z-update projects
onto the cone, and the scaled dual u accumulates the gap. Diagonal Ruiz
equilibration with power-of-two factors makes unscaling exact. Everything is
deterministic: fixed iteration order, no randomized steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# ---- svec helpers ----------------------------------------------------------

_SQRT2 = float(np.sqrt(2.0))
_svec_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def svec_size(d: int) -> int:
    return d * (d + 1) // 2


def _svec_plan(d: int):
    if d not in _svec_cache:
        iu = np.triu_indices(d)
        w = np.where(iu[0] == iu[1], 1.0, _SQRT2)
        _svec_cache[d] = (iu[0], iu[1], w)
    return _svec_cache[d]


def svec(M: np.ndarray) -> np.ndarray:
    d = M.shape[0]
    r, c, w = _svec_plan(d)
    return M[r, c] * w


def smat(v: np.ndarray, d: int) -> np.ndarray:
    r, c, w = _svec_plan(d)
    M = np.zeros((d, d))
    M[r, c] = v / w
    M = M + M.T
    M[np.arange(d), np.arange(d)] *= 0.5
    return M


def svec_index(i: int, j: int, d: int) -> int:
    """Position of entry (i, j), i <= j, in the row-major upper triangle."""
    if i > j:
        i, j = j, i
    return i * d - i * (i - 1) // 2 + (j - i)


def svec_coeff(i: int, j: int, coeff: float) -> float:
    """svec coordinate weight so that the functional equals coeff * X_ij
    (the unordered pair counted once)."""
    return coeff if i == j else coeff / _SQRT2


def project_psd(M: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: eigen-clip of the symmetrized input."""
    S = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, 0.0)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


# ---- program description ----------------------------------------------------


@dataclass(frozen=True)
class FreeBlock:
    n: int

    @property
    def size(self) -> int:
        return self.n


@dataclass(frozen=True)
class BoxBlock:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be equal-length vectors")
        if np.any(lo > hi):
            raise ValueError("inverted box bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> int:
        return self.lo.shape[0]


@dataclass(frozen=True)
class PsdBlock:
    dim: int

    @property
    def size(self) -> int:
        return svec_size(self.dim)


Block = FreeBlock | BoxBlock | PsdBlock


@dataclass(frozen=True)
class ConeProgram:
    blocks: tuple[Block, ...]
    p_diag: np.ndarray  # (N,) nonnegative; diagonal quadratic objective
    q: np.ndarray       # (N,)
    A: sp.spmatrix      # (M, N)
    b: np.ndarray       # (M,)

    def __post_init__(self):
        n = sum(blk.size for blk in self.blocks)
        p = np.asarray(self.p_diag, dtype=float)
        q = np.asarray(self.q, dtype=float)
        A = sp.csc_matrix(self.A)
        b = np.asarray(self.b, dtype=float)
        if p.shape != (n,) or q.shape != (n,):
            raise ValueError("objective size mismatch")
        if np.any(p < 0):
            raise ValueError("quadratic diagonal must be nonnegative")
        if A.shape[1] != n or b.shape != (A.shape[0],):
            raise ValueError("constraint size mismatch")
        object.__setattr__(self, "p_diag", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_var(self) -> int:
        return int(self.p_diag.shape[0])

    @property
    def n_con(self) -> int:
        return int(self.b.shape[0])

    def offsets(self) -> list[int]:
        off = [0]
        for blk in self.blocks:
            off.append(off[-1] + blk.size)
        return off

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * np.dot(x * self.p_diag, x) + np.dot(self.q, x))


def project_cone(prog: ConeProgram, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    off = 0
    for blk in prog.blocks:
        s = blk.size
        seg = v[off: off + s]
        if isinstance(blk, FreeBlock):
            out[off: off + s] = seg
        elif isinstance(blk, BoxBlock):
            out[off: off + s] = np.clip(seg, blk.lo, blk.hi)
        else:
            out[off: off + s] = svec(project_psd(smat(seg, blk.dim)))
        off += s
    return out


def cone_distance(prog: ConeProgram, v: np.ndarray) -> float:
    return float(np.linalg.norm(v - project_cone(prog, v)))


# ---- scaling ----------------------------------------------------------------


@dataclass(frozen=True)
class Scaling:
    d_col: np.ndarray
    d_row: np.ndarray


def _pow2(v: np.ndarray) -> np.ndarray:
    out = np.exp2(np.round(np.log2(np.where(v > 0, v, 1.0))))
    return np.where(np.isfinite(out) & (out > 0), out, 1.0)


def scale_problem(prog: ConeProgram, passes: int = 8) -> tuple[ConeProgram, Scaling]:
    """Ruiz equilibration of A with per-block column factors for PSD blocks
    (the cone is invariant only under a uniform positive scalar per block).
    Factors are rounded to powers of two, so unscaling is bit-exact."""
    A = sp.csc_matrix(prog.A, copy=True).astype(float)
    m, n = A.shape
    d_col = np.ones(n)
    d_row = np.ones(m)
    off = prog.offsets()
    if m == 0:  # nothing to equilibrate against
        return prog, Scaling(d_col=d_col, d_row=d_row)

    for _ in range(passes):
        Aabs = sp.csc_matrix(abs(A))
        col_max = np.asarray(Aabs.max(axis=0).todense()).ravel()
        # one factor per PSD block: the block's overall max
        for blk, o in zip(prog.blocks, off):
            if isinstance(blk, PsdBlock):
                s = blk.size
                col_max[o: o + s] = col_max[o: o + s].max()
        row_max = np.asarray(Aabs.max(axis=1).todense()).ravel()
        dc = _pow2(1.0 / np.sqrt(np.where(col_max > 0, col_max, 1.0)))
        dr = _pow2(1.0 / np.sqrt(np.where(row_max > 0, row_max, 1.0)))
        A = sp.diags(dr) @ A @ sp.diags(dc)
        d_col *= dc
        d_row *= dr

    # x = D_c x_hat: objective and bounds transform accordingly
    p_hat = prog.p_diag * d_col * d_col
    q_hat = prog.q * d_col
    b_hat = prog.b * d_row
    blocks = []
    for blk, o in zip(prog.blocks, off):
        if isinstance(blk, BoxBlock):
            blocks.append(BoxBlock(lo=blk.lo / d_col[o: o + blk.size],
                                   hi=blk.hi / d_col[o: o + blk.size]))
        else:
            blocks.append(blk)
    scaled = ConeProgram(tuple(blocks), p_hat, q_hat, A, b_hat)
    return scaled, Scaling(d_col=d_col, d_row=d_row)


def unscale_solution(scaling: Scaling, x: np.ndarray, nu: np.ndarray, y: np.ndarray):
    return x * scaling.d_col, nu * scaling.d_row, y / scaling.d_col


# ---- solver ------------------------------------------------------------------


@dataclass(frozen=True)
class SolverStatus:
    state: str  # optimal | inaccurate | infeasible | unbounded | iteration-limit
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time: float


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    nu: np.ndarray   # equality multipliers
    y: np.ndarray    # cone multipliers (Px + q + A'nu + y = 0)
    status: SolverStatus

    @property
    def optimal(self) -> bool:
        return self.status.state == "optimal"


def _kkt_factor(prog: ConeProgram, rho: float, delta: float):
    n, m = prog.n_var, prog.n_con
    K = sp.bmat(
        [
            [sp.diags(prog.p_diag + rho), prog.A.T],
            [prog.A, -delta * sp.identity(m)],
        ],
        format="csc",
    )
    return spla.splu(K)


def solve_admm(
    prog: ConeProgram,
    tol: float = 1e-6,
    max_iter: int = 50_000,
    rho: float = 1.0,
    scale: bool = True,
    adapt_rho: bool = True,
    trace_path=None,
) -> Solution:
    """Operator-splitting solve; never raises for solvable/unsolvable inputs,
    the status carries the outcome."""
    t_start = time.perf_counter()
    work, scaling = scale_problem(prog) if scale else (prog, None)
    n, m = work.n_var, work.n_con
    delta = max(1e-12, tol * 1e-3)

    lu = _kkt_factor(work, rho, delta)
    x = np.zeros(n)
    z = np.zeros(n)
    u = np.zeros(n)
    rhs = np.empty(n + m)
    rhs[n:] = work.b

    r_prim = np.inf
    r_dual = np.inf
    state = "iteration-limit"
    trace = [] if trace_path is not None else None
    window = 400
    prev_u = u.copy()
    prev_z = z.copy()
    prev_drift = None
    rho_changed = True
    adaptations = 0
    it = 0

    for it in range(1, max_iter + 1):
        rhs[:n] = rho * (z - u) - work.q
        sol = lu.solve(rhs)
        x = sol[:n]
        z_old = z
        z = project_cone(work, x + u)
        u = u + x - z

        nx = np.linalg.norm(x)
        nz = np.linalg.norm(z)
        r_prim = np.linalg.norm(x - z) / max(nx, nz, 1.0)
        r_dual = rho * np.linalg.norm(z - z_old) / max(rho * np.linalg.norm(u), 1.0)
        if trace is not None and (it % 50 == 0 or it == 1):
            trace.append((it, r_prim, r_dual, rho))

        if r_prim < tol and r_dual < tol:
            state = "optimal"
            break
        if nx > 1e10:
            state = "unbounded"
            break

        if it % window == 0:
            # per-iteration drifts over the last window
            du = (u - prev_u) / window
            dz = (z - prev_z) / window
            du_n = float(np.linalg.norm(du))
            dz_n = float(np.linalg.norm(dz))
            if not rho_changed and r_prim > 1e3 * tol and prev_drift is not None:
                pu, pz = prev_drift
                # u escapes along a settled direction while z stalls:
                # no feasible point exists
                if (
                    du_n > 1e-9
                    and abs(du_n - pu) < 0.01 * du_n
                    and dz_n < 1e-3 * du_n
                ):
                    state = "infeasible"
                    break
            if not rho_changed and dz_n > 1e-9 and prev_drift is not None:
                # z escapes along a feasible descent ray: objective unbounded
                pu, pz = prev_drift
                ray_ok = (
                    abs(dz_n - pz) < 0.01 * dz_n
                    and float(np.linalg.norm(work.A @ dz)) < 1e-6 * dz_n
                    and float(np.dot(work.q, dz)) < -1e-12
                    and float(np.dot(work.p_diag * dz, dz)) < 1e-12 * dz_n
                )
                if ray_ok:
                    state = "unbounded"
                    break
            prev_drift = (du_n, dz_n)
            prev_u = u.copy()
            prev_z = z.copy()
            rho_changed = False
            if adapt_rho and adaptations < 40:
                new_rho = rho
                if r_prim > 10 * r_dual:
                    new_rho = rho * 2.0
                elif r_dual > 10 * r_prim:
                    new_rho = rho / 2.0
                if new_rho != rho and 1e-6 <= new_rho <= 1e6:
                    u *= rho / new_rho
                    rho = new_rho
                    lu = _kkt_factor(work, rho, delta)
                    adaptations += 1
                    rho_changed = True

    if state == "iteration-limit" and r_prim < 100 * tol and r_dual < 100 * tol:
        state = "inaccurate"

    nu_scaled = sol[n:] if it else np.zeros(m)
    y_scaled = rho * u
    x_out, nu_out, y_out = (x, nu_scaled, y_scaled)
    if scaling is not None:
        x_out, nu_out, y_out = unscale_solution(scaling, z if state == "optimal" else x, nu_scaled, y_scaled)
    elif state == "optimal":
        x_out = z

    rp, rd, gap = residuals(prog, x_out, nu_out, y_out)
    status = SolverStatus(
        state=state,
        primal_residual=rp,
        dual_residual=rd,
        gap=gap,
        iterations=it,
        wall_time=time.perf_counter() - t_start,
    )
    if trace is not None:
        lines = ["# iter r_prim r_dual rho"] + [
            f"{a} {float(b)!r} {float(c)!r} {float(d)!r}" for a, b, c, d in trace
        ]
        from pathlib import Path

        Path(trace_path).write_text("\n".join(lines) + "\n")
    return Solution(x=x_out, nu=nu_out, y=y_out, status=status)


# ---- independent residual verification --------------------------------------


def residuals(
    prog: ConeProgram, x: np.ndarray, nu: np.ndarray, y: np.ndarray
) -> tuple[float, float, float]:
    """Scale-normalized KKT residuals and duality gap at a candidate point.

    Stationarity convention: p*x + q + A'nu + y = 0 with y in the normal cone
    of C at x. The dual bound uses the support function of C; cone-infeasible
    parts of y fold into the dual residual.
    """
    eq = np.linalg.norm(prog.A @ x - prog.b) / max(1.0, np.linalg.norm(prog.b))
    cone = cone_distance(prog, x) / max(1.0, float(np.linalg.norm(x)))
    r_prim = max(eq, cone)

    stat = prog.p_diag * x + prog.q + prog.A.T @ nu + y
    r_dual = float(np.linalg.norm(stat)) / max(1.0, float(np.linalg.norm(prog.q)))

    # support function of C at y, with infeasible parts measured
    sigma = 0.0
    dual_infeas = 0.0
    off = 0
    for blk in prog.blocks:
        s = blk.size
        seg = y[off: off + s]
        if isinstance(blk, FreeBlock):
            dual_infeas += float(np.linalg.norm(seg))
        elif isinstance(blk, BoxBlock):
            pos = np.maximum(seg, 0.0)
            neg = np.minimum(seg, 0.0)
            with np.errstate(invalid="ignore"):
                up = np.where(pos > 0, blk.hi * pos, 0.0)
                dn = np.where(neg < 0, blk.lo * neg, 0.0)
            bad_up = ~np.isfinite(up)
            bad_dn = ~np.isfinite(dn)
            dual_infeas += float(np.linalg.norm(pos[bad_up])) + float(
                np.linalg.norm(neg[bad_dn])
            )
            sigma += float(up[~bad_up].sum() + dn[~bad_dn].sum())
        else:
            w = np.linalg.eigvalsh(smat(seg, blk.dim))
            dual_infeas += float(np.linalg.norm(np.maximum(w, 0.0)))
        off += s
    r_dual = max(r_dual, dual_infeas / max(1.0, float(np.linalg.norm(y))))

    pobj = prog.objective(x)
    quad = 0.0
    mask = prog.p_diag > 0
    if np.any(mask):
        # linear pressure c = q + A'nu + y; inf_x of 1/2 p x^2 + c x = -c^2/(2p)
        c = (stat - prog.p_diag * x)[mask]
        quad = float(-0.5 * np.sum(c * c / prog.p_diag[mask]))
    dobj = quad - float(np.dot(prog.b, nu)) - sigma
    gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
    return float(r_prim), float(r_dual), float(gap)
