"""Convex quadratic programming via ADMM operator splitting.

Solves

    minimize    0.5 x' H x + c' x
    subject to  A_eq x  = b_eq
                A_in x <= b_in

with Ruiz equilibration, a factorized quasi-definite KKT system, optional
warm starting, divergence-based infeasibility certificates, and an
active-set polish pass that refines converged solutions to near machine
precision.  Small problems run on dense LAPACK factorizations where sparse
bookkeeping overhead would dominate; larger ones use sparse LU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

# below this many variables plus rows the dense KKT path is faster
_DENSE_LIMIT = 512


class QpError(ValueError):
    """Raised for malformed problem data."""


def _as_csc(mat, n_cols):
    if mat is None:
        return sp.csc_matrix((0, n_cols))
    out = sp.csc_matrix(mat, dtype=float)
    if out.shape[1] != n_cols:
        raise QpError(f"constraint matrix has {out.shape[1]} columns, "
                      f"expected {n_cols}")
    return out


def _as_vec(vec, m, name):
    if vec is None:
        vec = np.zeros(0)
    out = np.asarray(vec, dtype=float).ravel()
    if out.size != m:
        raise QpError(f"{name} has length {out.size}, expected {m}")
    return out


@dataclass
class QpProblem:
    """min 0.5 x'Hx + c'x  s.t.  A_eq x = b_eq,  A_in x <= b_in."""

    H: object
    c: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray = None
    A_in: object = None
    b_in: np.ndarray = None
    n: int = field(init=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.n = self.c.size
        self.H = sp.csc_matrix(self.H, dtype=float)
        if self.H.shape != (self.n, self.n):
            raise QpError(f"H shape {self.H.shape} does not match n={self.n}")
        self.A_eq = _as_csc(self.A_eq, self.n)
        self.A_in = _as_csc(self.A_in, self.n)
        self.b_eq = _as_vec(self.b_eq, self.A_eq.shape[0], "b_eq")
        self.b_in = _as_vec(self.b_in, self.A_in.shape[0], "b_in")
        gap = abs(self.H - self.H.T)
        scale = max(1.0, abs(self.H).max() if self.H.nnz else 0.0)
        if gap.nnz and gap.max() > 1e-8 * scale:
            raise QpError("H is not symmetric")
        # PSD check: Cholesky of H + eps*I must succeed
        eps = 1e-9 * scale
        try:
            np.linalg.cholesky(self.H.toarray() + eps * np.eye(self.n))
        except np.linalg.LinAlgError:
            raise QpError("H is not positive semidefinite") from None

    @property
    def m_eq(self):
        return self.A_eq.shape[0]

    @property
    def m_in(self):
        return self.A_in.shape[0]


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_infeasible: float = 1e-6
    adaptive_rho: bool = True
    adaptive_interval: int = 50
    check_interval: int = 5
    scaling_iters: int = 10
    equality_rho_scale: float = 1e3
    polish: bool = True
    dump_path: str = None


@dataclass
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    status: str           # solved | max_iter | infeasible
    iterations: int
    primal_res: float
    dual_res: float


def dump_qp_problem(problem, path):
    """Write the problem as plain-text coordinate triplets for offline debugging."""
    with open(path, "w") as fh:
        for name, mat in (("H", problem.H), ("A_eq", problem.A_eq),
                          ("A_in", problem.A_in)):
            coo = mat.tocoo()
            fh.write(f"matrix {name} {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
        for name, vec in (("c", problem.c), ("b_eq", problem.b_eq),
                          ("b_in", problem.b_in)):
            fh.write(f"vector {name} {vec.size}\n")
            for v in vec:
                fh.write(f"{float(v)!r}\n")


def load_qp_problem(path):
    """Read back a problem written by dump_qp_problem."""
    mats, vecs = {}, {}
    with open(path) as fh:
        lines = fh.read().split("\n")
    pos = 0
    while pos < len(lines):
        line = lines[pos].strip()
        pos += 1
        if not line:
            continue
        kind, name, *rest = line.split()
        if kind == "matrix":
            rows, cols, nnz = map(int, rest)
            ii, jj, vv = [], [], []
            for _ in range(nnz):
                i, j, v = lines[pos].split()
                pos += 1
                ii.append(int(i))
                jj.append(int(j))
                vv.append(float(v))
            mats[name] = sp.coo_matrix((vv, (ii, jj)), shape=(rows, cols)).tocsc()
        elif kind == "vector":
            size = int(rest[0])
            vecs[name] = np.array([float(lines[pos + k]) for k in range(size)])
            pos += size
        else:
            raise QpError(f"bad dump line: {line}")
    return QpProblem(mats["H"], vecs["c"], mats["A_eq"], vecs["b_eq"],
                     mats["A_in"], vecs["b_in"])


def kkt_residuals(problem, x, y_eq, y_in):
    """Unscaled KKT residuals: stationarity, feasibility, complementary slackness."""
    return _residuals_ops(problem.H, problem.c, problem.A_eq, problem.b_eq,
                          problem.A_in, problem.b_in, x, y_eq, y_in)


def _residuals_ops(H, c, A_eq, b_eq, A_in, b_in, x, y_eq, y_in):
    stat = H @ x + c
    if b_eq.size:
        stat = stat + A_eq.T @ y_eq
    if b_in.size:
        stat = stat + A_in.T @ y_in
    r_stat = np.abs(stat).max() if stat.size else 0.0
    r_eq = np.abs(A_eq @ x - b_eq).max() if b_eq.size else 0.0
    if b_in.size:
        slack = b_in - A_in @ x
        r_in = max(0.0, -slack.min())
        r_comp = np.abs(y_in * slack).max()
        r_sign = max(0.0, -y_in.min())
    else:
        r_in = r_comp = r_sign = 0.0
    return {"stationarity": r_stat, "primal_eq": r_eq, "primal_in": r_in,
            "comp_slack": r_comp, "dual_sign": r_sign}


def _col_max(M):
    if sp.issparse(M):
        return np.asarray(abs(M).max(axis=0).todense()).ravel() if M.nnz \
            else np.zeros(M.shape[1])
    return np.abs(M).max(axis=0) if M.size else np.zeros(M.shape[1])


def _row_max(M):
    if sp.issparse(M):
        return np.asarray(abs(M).max(axis=1).todense()).ravel() if M.nnz \
            else np.zeros(M.shape[0])
    return np.abs(M).max(axis=1) if M.size else np.zeros(M.shape[0])


def _ruiz_equilibrate(P, q, A, l, u, iters):
    """Symmetric diagonal scaling of the KKT-structure matrix plus cost scaling."""
    m = A.shape[0]
    D = np.ones(P.shape[0])
    E = np.ones(m)
    gamma = 1.0
    P = P.copy()
    A = A.copy()
    q = q.copy()
    l = l.copy()
    u = u.copy()
    for _ in range(iters):
        cp = _col_max(P)
        ca = _col_max(A)
        ra = _row_max(A)
        dx = np.maximum(cp, ca)
        dx = np.where(dx > 1e-12, 1.0 / np.sqrt(dx), 1.0)
        dz = np.where(ra > 1e-12, 1.0 / np.sqrt(ra), 1.0)
        dx = np.clip(dx, 1e-4, 1e4)
        dz = np.clip(dz, 1e-4, 1e4)
        if sp.issparse(P):
            Dx = sp.diags(dx)
            P = (Dx @ P @ Dx).tocsc()
        else:
            P = (dx[:, None] * P) * dx[None, :]
        q = dx * q
        if m:
            if sp.issparse(A):
                A = (sp.diags(dz) @ A @ sp.diags(dx)).tocsc()
            else:
                A = (dz[:, None] * A) * dx[None, :]
            l = dz * l
            u = dz * u
        D *= dx
        E *= dz
        # normalize the cost so the objective scale does not dwarf eps_abs
        g_den = max(np.mean(_col_max(P)), np.abs(q).max() if q.size else 0.0)
        if g_den > 1e-12:
            g = 1.0 / g_den
            g = min(max(g, 1e-6), 1e6)
            P = P * g
            q = q * g
            gamma *= g
    return P, q, A, l, u, D, E, gamma


class _DenseLU:
    """LAPACK LU with the same solve interface as splu."""

    def __init__(self, mat):
        self._lu = lu_factor(mat, check_finite=False)

    def solve(self, rhs):
        return lu_solve(self._lu, rhs, check_finite=False)


def _factor_kkt(P, A, sigma, rho_vec):
    n = P.shape[0]
    m = A.shape[0]
    if not sp.issparse(P):
        if m:
            kkt = np.block([[P + sigma * np.eye(n), A.T],
                            [A, np.diag(-1.0 / rho_vec)]])
        else:
            kkt = P + sigma * np.eye(n)
        return _DenseLU(kkt)
    if m:
        kkt = sp.bmat([[P + sigma * sp.eye(n), A.T],
                       [A, sp.diags(-1.0 / rho_vec)]], format="csc")
    else:
        kkt = (P + sigma * sp.eye(n)).tocsc()
    return splu(kkt)


def _polish(problem, x, y_eq, y_in, base_res):
    """Solve the KKT system restricted to the active set; keep it if it improves."""
    n = problem.n
    dense = n + problem.m_eq + problem.m_in <= _DENSE_LIMIT
    if dense:
        H = problem.H.toarray()
        A_eq = problem.A_eq.toarray()
        A_in = problem.A_in.toarray()
    else:
        H, A_eq, A_in = problem.H, problem.A_eq, problem.A_in
    dual_scale = max(1.0, float(y_in.max(initial=0.0)))
    act = np.flatnonzero(y_in > 1e-12 * dual_scale)
    feas_scale = max(1.0, float(np.abs(problem.b_in).max(initial=0.0)))
    delta = 1e-7
    xp = yp_eq = y_act = None
    for _ in range(8):
        m_red = problem.m_eq + act.size
        rhs = np.concatenate([-problem.c, problem.b_eq, problem.b_in[act]])
        if dense:
            if m_red:
                A_red = np.vstack([A_eq, A_in[act]])
                k_reg = np.block([[H + delta * np.eye(n), A_red.T],
                                  [A_red, -delta * np.eye(m_red)]])
                k_exact = np.block([[H, A_red.T],
                                    [A_red, np.zeros((m_red, m_red))]])
            else:
                k_reg = H + delta * np.eye(n)
                k_exact = H
            lu = _DenseLU(k_reg)
        else:
            if m_red:
                A_red = sp.vstack([A_eq, A_in[act]]).tocsc()
                k_reg = sp.bmat([[H + delta * sp.eye(n), A_red.T],
                                 [A_red, -delta * sp.eye(m_red)]], format="csc")
                k_exact = sp.bmat([[H, A_red.T],
                                   [A_red, None]], format="csc")
            else:
                k_reg = (H + delta * sp.eye(n)).tocsc()
                k_exact = H.tocsc()
            try:
                lu = splu(k_reg)
            except RuntimeError:
                return x, y_eq, y_in
        sol = lu.solve(rhs)
        for _ in range(3):  # refinement against the unregularized system
            resid = rhs - k_exact @ sol
            sol = sol + lu.solve(resid)
        xp = sol[:n]
        yp_eq = sol[n:n + problem.m_eq]
        y_act = sol[n + problem.m_eq:]
        neg = y_act < -1e-9
        if np.any(neg):
            act = act[~neg]  # drop rows the reduced KKT says are not active
            continue
        if problem.m_in:
            slack = A_in @ xp - problem.b_in
            violated = np.flatnonzero(slack > 1e-9 * feas_scale)
            violated = np.setdiff1d(violated, act)
            if violated.size:  # bind rows the candidate walked through
                act = np.union1d(act, violated)
                continue
        break
    else:
        return x, y_eq, y_in
    yp_in = np.zeros(problem.m_in)
    yp_in[act] = np.maximum(y_act, 0.0)
    res = _residuals_ops(H, problem.c, A_eq, problem.b_eq, A_in,
                         problem.b_in, xp, yp_eq, yp_in)
    worst = max(res["stationarity"], res["primal_eq"], res["primal_in"],
                res["dual_sign"])
    if worst < base_res and np.all(np.isfinite(xp)):
        return xp, yp_eq, yp_in
    return x, y_eq, y_in


def solve_qp(problem, settings=None, x0=None, y0=None):
    """Solve a QpProblem; x0/y0 warm start the primal and stacked dual iterates."""
    st = settings if settings is not None else QpSettings()
    if st.dump_path:
        dump_qp_problem(problem, st.dump_path)

    n = problem.n
    m_eq, m_in = problem.m_eq, problem.m_in
    m = m_eq + m_in
    if n + m <= _DENSE_LIMIT:
        H_full = problem.H.toarray()
        A_full = np.vstack([problem.A_eq.toarray(), problem.A_in.toarray()]) \
            if m else np.zeros((0, n))
    else:
        H_full = problem.H.tocsc()
        A_full = sp.vstack([problem.A_eq, problem.A_in]).tocsc() if m \
            else sp.csc_matrix((0, n))
    l_full = np.concatenate([problem.b_eq, np.full(m_in, -np.inf)])
    u_full = np.concatenate([problem.b_eq, problem.b_in])

    Ps, qs, As, ls, us, D, E, gamma = _ruiz_equilibrate(
        H_full, problem.c, A_full, l_full, u_full, st.scaling_iters)

    rho_bar = st.rho
    eq_mask = np.zeros(m, dtype=bool)
    eq_mask[:m_eq] = True

    def rho_vector(base):
        r = np.full(m, base)
        r[eq_mask] *= st.equality_rho_scale
        return r

    rho = rho_vector(rho_bar)
    lu = _factor_kkt(Ps, As, st.sigma, rho) if m else _factor_kkt(
        Ps, As, st.sigma, np.ones(0))

    xb = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    if y0 is None:
        yb = np.zeros(m)
    else:
        yb = gamma * np.asarray(y0, dtype=float) / E
    zb = As @ xb if m else np.zeros(0)
    zb = np.clip(zb, ls, us)

    def unscale():
        x = D * xb
        y = E * yb / gamma if m else np.zeros(0)
        return x, y[:m_eq], np.maximum(y[m_eq:], 0.0)

    def residuals():
        if m:
            ax = As @ xb
            r_prim_vec = (ax - zb) / E
            r_prim = np.abs(r_prim_vec).max()
            eps_prim = st.eps_abs + st.eps_rel * max(
                np.abs(ax / E).max(), np.abs(zb / E).max())
            aty = As.T @ yb
        else:
            r_prim, eps_prim = 0.0, st.eps_abs
            aty = np.zeros(n)
        px = Ps @ xb
        r_dual_vec = (px + qs + aty) / (gamma * D)
        r_dual = np.abs(r_dual_vec).max() if n else 0.0
        eps_dual = st.eps_abs + st.eps_rel * max(
            np.abs(px / (gamma * D)).max() if n else 0.0,
            np.abs(qs / (gamma * D)).max() if n else 0.0,
            np.abs(aty / (gamma * D)).max() if n else 0.0)
        return r_prim, eps_prim, r_dual, eps_dual

    r_prim = r_dual = np.inf
    status = "max_iter"
    it = 0
    check_every = max(1, st.check_interval)
    last_adapt = 0
    xb_chk, yb_chk = xb, yb
    for it in range(1, st.max_iter + 1):
        if m:
            rhs = np.concatenate([st.sigma * xb - qs, zb - yb / rho])
            sol = lu.solve(rhs)
            x_t = sol[:n]
            nu = sol[n:]
            z_t = zb + (nu - yb) / rho
            xb = st.alpha * x_t + (1 - st.alpha) * xb
            z_relax = st.alpha * z_t + (1 - st.alpha) * zb
            zb_new = np.clip(z_relax + yb / rho, ls, us)
            yb = yb + rho * (z_relax - zb_new)
            zb = zb_new
        else:
            xb = lu.solve(st.sigma * xb - qs)

        if it % check_every and it != st.max_iter:
            continue

        r_prim, eps_prim, r_dual, eps_dual = residuals()
        if r_prim <= eps_prim and r_dual <= eps_dual:
            status = "solved"
            break

        # divergence directions accumulated since the last check certify
        # infeasibility just as single-iteration deltas do
        if m:
            dy = E * (yb - yb_chk)
            ndy = np.abs(dy).max() if m else 0.0
            if ndy > 1e-12:
                neg = (dy < 0) & np.isfinite(l_full)
                sup = float(u_full @ np.maximum(dy, 0.0)) + \
                    float(l_full[neg] @ dy[neg])
                cert_dir = np.all((dy >= 0) | np.isfinite(l_full))
                if (cert_dir
                        and np.abs(A_full.T @ dy).max()
                        <= st.eps_infeasible * ndy
                        and sup <= -st.eps_infeasible * ndy):
                    status = "infeasible"
                    break
        dx = D * (xb - xb_chk)
        ndx = np.abs(dx).max()
        if ndx > 1e-12:
            adx = A_full @ dx if m else np.zeros(0)
            ok_rows = np.all(adx <= st.eps_infeasible * ndx) and np.all(
                adx[np.isfinite(l_full)] >= -st.eps_infeasible * ndx)
            if (ok_rows
                    and np.abs(H_full @ dx).max() <= st.eps_infeasible * ndx
                    and problem.c @ dx <= -st.eps_infeasible * ndx):
                status = "infeasible"
                break
        xb_chk, yb_chk = xb, yb

        if (st.adaptive_rho and m and it - last_adapt >= st.adaptive_interval
                and eps_prim > 0 and eps_dual > 0):
            last_adapt = it
            ratio = np.sqrt((r_prim / eps_prim) / max(r_dual / eps_dual,
                                                      1e-12))
            if ratio > 5.0 or ratio < 0.2:
                rho_bar = float(np.clip(rho_bar * ratio, 1e-6, 1e6))
                rho = rho_vector(rho_bar)
                lu = _factor_kkt(Ps, As, st.sigma, rho)

    x, y_eq, y_in = unscale()
    if status == "solved" and st.polish:
        base = max(r_prim, r_dual)
        x, y_eq, y_in = _polish(problem, x, y_eq, y_in, base)
        if sp.issparse(H_full):
            res = kkt_residuals(problem, x, y_eq, y_in)
        else:
            res = _residuals_ops(H_full, problem.c, A_full[:m_eq],
                                 problem.b_eq, A_full[m_eq:],
                                 problem.b_in, x, y_eq, y_in)
        r_prim = max(res["primal_eq"], res["primal_in"])
        r_dual = res["stationarity"]
    return QpSolution(x=x, y_eq=y_eq, y_in=y_in, status=status,
                      iterations=it, primal_res=float(r_prim),
                      dual_res=float(r_dual))
