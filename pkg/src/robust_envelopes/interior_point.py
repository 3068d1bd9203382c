"""Dense homogeneous self-dual interior-point method for LP/SOCP.

Internally the program is written as

    minimize  c'x   s.t.  A x = b,   G x + s = h,   s in K

with ``G = -I`` restricted to the cone variables and ``h = 0``. Iterates follow a
Mehrotra predictor-corrector path on the self-dual embedding with Nesterov-Todd
scaling; the KKT system is reduced to the (x, y) block and factorized with a
dense LU plus iterative refinement.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .conic import ConeKind, ConicData, SolverOptions, SolverReport, SolverStatus


logger = logging.getLogger(__name__)

# a stalled run is still accepted when it got this close to the requested tolerances
REDUCED_ACCURACY_FACTOR = 100.0


@dataclass(frozen=True)
class _Block:
    kind: ConeKind
    start: int
    size: int

    @property
    def sl(self) -> slice:
        return slice(self.start, self.start + self.size)


class _Cones:
    """Cone bookkeeping in the stacked (s, z) space."""

    def __init__(self, data: ConicData):
        order: List[int] = []
        blocks: List[_Block] = []
        nonneg = [i for cone in data.cones if cone.kind == ConeKind.NONNEG for i in cone.indices]
        if nonneg:
            blocks.append(_Block(ConeKind.NONNEG, 0, len(nonneg)))
            order.extend(nonneg)
        for cone in data.cones:
            if cone.kind == ConeKind.SOC:
                blocks.append(_Block(ConeKind.SOC, len(order), len(cone.indices)))
                order.extend(cone.indices)
        self.index = np.asarray(order, dtype=np.int64)
        self.blocks = blocks
        self.m = len(order)
        self.degree = sum(b.size if b.kind == ConeKind.NONNEG else 1 for b in blocks)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        for blk in self.blocks:
            if blk.kind == ConeKind.NONNEG:
                e[blk.sl] = 1.0
            else:
                e[blk.start] = 1.0
        return e

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        for blk in self.blocks:
            a, b = u[blk.sl], v[blk.sl]
            if blk.kind == ConeKind.NONNEG:
                out[blk.sl] = a * b
            else:
                out[blk.start] = a @ b
                out[blk.start + 1:blk.start + blk.size] = a[0] * b[1:] + b[0] * a[1:]
        return out

    def divide(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Solve lam o x = r."""
        out = np.empty(self.m)
        for blk in self.blocks:
            lb, rb = lam[blk.sl], r[blk.sl]
            if blk.kind == ConeKind.NONNEG:
                out[blk.sl] = rb / lb
            else:
                det = _soc_det(lb)
                x0 = (lb[0] * rb[0] - lb[1:] @ rb[1:]) / det
                out[blk.start] = x0
                out[blk.start + 1:blk.start + blk.size] = (rb[1:] - x0 * lb[1:]) / lb[0]
        return out

    def scaling(self, s: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nesterov-Todd scaling: returns (W, W^-1, lambda) with W z = W^-1 s = lambda.

        lambda is built from the normalized pair rather than as ``W @ z`` because W
        is badly conditioned once both iterates approach the cone boundary.
        """
        W = np.zeros((self.m, self.m))
        Winv = np.zeros((self.m, self.m))
        lam = np.empty(self.m)
        for blk in self.blocks:
            sb, zb = s[blk.sl], z[blk.sl]
            if blk.kind == ConeKind.NONNEG:
                w = np.sqrt(sb / zb)
                W[blk.sl, blk.sl] = np.diag(w)
                Winv[blk.sl, blk.sl] = np.diag(1.0 / w)
                lam[blk.sl] = np.sqrt(sb * zb)
                continue
            s_det = _soc_det(sb)
            z_det = _soc_det(zb)
            s_bar = sb / np.sqrt(s_det)
            z_bar = zb / np.sqrt(z_det)
            gamma = np.sqrt(max((1.0 + float(sb @ zb) / np.sqrt(s_det * z_det)) / 2.0, 1.0))
            w1 = (s_bar[1:] - z_bar[1:]) / (2.0 * gamma)
            # keep w on the unit hyperboloid so the closed-form inverse stays exact
            w0 = np.sqrt(1.0 + w1 @ w1)
            eta = (s_det / z_det) ** 0.25
            k = blk.size
            block = np.empty((k, k))
            block[0, 0] = w0
            block[0, 1:] = w1
            block[1:, 0] = w1
            block[1:, 1:] = np.eye(k - 1) + np.outer(w1, w1) / (1.0 + w0)
            inv = block.copy()
            inv[0, 1:] *= -1.0
            inv[1:, 0] *= -1.0
            W[blk.sl, blk.sl] = eta * block
            Winv[blk.sl, blk.sl] = inv / eta
            lam_bar = np.empty(k)
            lam_bar[0] = gamma
            lam_bar[1:] = ((gamma + z_bar[0]) * s_bar[1:] + (gamma + s_bar[0]) * z_bar[1:]) / (
                s_bar[0] + z_bar[0] + 2.0 * gamma)
            lam[blk.sl] = (s_det * z_det) ** 0.25 * lam_bar
        return W, Winv, lam

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        step = np.inf
        for blk in self.blocks:
            a, d = u[blk.sl], du[blk.sl]
            if blk.kind == ConeKind.NONNEG:
                neg = d < 0
                if np.any(neg):
                    step = min(step, float(np.min(-a[neg] / d[neg])))
            else:
                step = min(step, _soc_step(a, d))
        return step

    def violation(self, u: np.ndarray) -> float:
        """Smallest shift t such that u + t e lies in the cone."""
        worst = -np.inf
        for blk in self.blocks:
            a = u[blk.sl]
            if blk.kind == ConeKind.NONNEG:
                worst = max(worst, float(-np.min(a)))
            else:
                worst = max(worst, float(np.linalg.norm(a[1:]) - a[0]))
        return worst


def _soc_det(u: np.ndarray) -> float:
    norm = float(np.linalg.norm(u[1:]))
    return max((u[0] - norm) * (u[0] + norm), 1e-300)


def _soc_step(u: np.ndarray, d: np.ndarray) -> float:
    qa = d[0] ** 2 - d[1:] @ d[1:]
    qb = 2.0 * (u[0] * d[0] - u[1:] @ d[1:])
    qc = max(u[0] ** 2 - u[1:] @ u[1:], 0.0)
    candidates = []
    if d[0] < 0:
        candidates.append(-u[0] / d[0])
    if abs(qa) <= 1e-14 * max(1.0, d @ d):
        if qb < 0:
            candidates.append(-qc / qb)
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0:
            q = -0.5 * (qb + np.copysign(np.sqrt(disc), qb))
            roots = [q / qa] + ([qc / q] if q != 0 else [])
            candidates.extend(r for r in roots if r > 0)
    return min(candidates) if candidates else np.inf


class _Kkt:
    """Reduced KKT operator [[Hx, A'], [A, 0]] for a fixed scaling."""

    def __init__(self, A: np.ndarray, cones: _Cones, Winv: np.ndarray, n: int,
                 options: SolverOptions):
        self.A = A
        self.cones = cones
        self.n = n
        self.p = A.shape[0]
        self.Winv2 = Winv @ Winv
        self.refinement_steps = options.refinement_steps
        K = np.zeros((n + self.p, n + self.p))
        idx = cones.index
        if idx.size:
            K[np.ix_(idx, idx)] = self.Winv2
        K[:n, n:] = A.T
        K[n:, :n] = A
        self.K = K
        reg = np.concatenate([np.full(n, options.regularization),
                              np.full(self.p, -options.regularization)])
        self.lu = scipy.linalg.lu_factor(K + np.diag(reg), check_finite=True)

    def solve(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray
              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        rhs = np.concatenate([bx, by])
        idx = self.cones.index
        if idx.size:
            rhs[idx] -= self.Winv2 @ bz
        sol = scipy.linalg.lu_solve(self.lu, rhs)
        for _ in range(self.refinement_steps):
            resid = rhs - self.K @ sol
            if np.linalg.norm(resid) <= 1e-14 * (1.0 + np.linalg.norm(rhs)):
                break
            sol = sol + scipy.linalg.lu_solve(self.lu, resid)
        dx, dy = sol[:self.n], sol[self.n:]
        dz = -self.Winv2 @ (bz + dx[idx]) if idx.size else np.zeros(0)
        return dx, dy, dz


def _initial_point(A: np.ndarray, b: np.ndarray, c: np.ndarray, cones: _Cones,
                   options: SolverOptions) -> Tuple[np.ndarray, ...]:
    n = c.size
    kkt = _Kkt(A, cones, np.eye(cones.m), n, options)
    x, _, dz = kkt.solve(np.zeros(n), b, np.zeros(cones.m))
    s = -dz
    _, y, z = kkt.solve(-c, np.zeros(A.shape[0]), np.zeros(cones.m))
    e = cones.identity()
    for vec in (s, z):
        if cones.m:
            shift = cones.violation(vec)
            if shift >= -1e-8 * max(1.0, np.linalg.norm(vec)):
                vec += (1.0 + shift) * e
    return x, y, s, z


@dataclass(frozen=True)
class _Iterate:
    iteration: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    tau: float
    pres: float
    dres: float
    gap: float
    rgap: float

    def score(self, options: SolverOptions) -> float:
        return max(self.pres / options.feas_tol, self.dres / options.feas_tol,
                   self.rgap / options.gap_tol)

    def close(self, options: SolverOptions) -> bool:
        return self.score(options) <= REDUCED_ACCURACY_FACTOR


def hsde_solve(data: ConicData, options: SolverOptions) -> SolverReport:
    started = time.perf_counter()
    c = -data.c
    A, b = data.A, data.b
    n = c.size
    cones = _Cones(data)
    idx = cones.index
    e = cones.identity()

    def G(vec: np.ndarray) -> np.ndarray:
        return -vec[idx]

    def Gt(vec: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        np.add.at(out, idx, -vec)
        return out

    res_x0 = max(1.0, float(np.linalg.norm(c)))
    res_y0 = max(1.0, float(np.linalg.norm(b)))
    trace: List[Dict[str, float]] = []

    def report(status: SolverStatus, x, y, z, tau, iterations, pres, dres, gap, rgap, msg):
        scale = tau if status == SolverStatus.OPTIMAL else 1.0
        xs = x / scale
        return SolverReport(
            status=status, x=xs, y=y / scale, z=z / scale,
            objective=float(data.c @ xs) if status == SolverStatus.OPTIMAL else float("nan"),
            primal_residual=pres, dual_residual=dres, gap=gap, relative_gap=rgap,
            iterations=iterations, wall_time=time.perf_counter() - started,
            message=msg, trace=trace,
        )

    try:
        x, y, s, z = _initial_point(A, b, c, cones, options)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return report(SolverStatus.NUMERICAL_FAILURE, np.full(n, np.nan), np.zeros(A.shape[0]),
                      np.zeros(cones.m), 1.0, 0, np.nan, np.nan, np.nan, np.nan,
                      f"initial factorization failed: {exc}")
    tau, kappa = 1.0, 1.0
    pres = dres = gap = rgap = float("nan")
    best: Optional[_Iterate] = None

    def fallback(it: int, reason: str) -> SolverReport:
        if best is not None and best.close(options):
            logger.debug("%s; returning iterate %d at reduced accuracy", reason, best.iteration)
            return report(SolverStatus.OPTIMAL, best.x, best.y, best.z, best.tau, it, best.pres,
                          best.dres, best.gap, best.rgap,
                          f"converged to reduced accuracy ({reason})")
        return report(SolverStatus.NUMERICAL_FAILURE, x, y, z, tau, it, pres, dres, gap, rgap,
                      reason)

    for it in range(options.max_iter + 1):
        rx = A.T @ y + Gt(z) + c * tau
        ry = A @ x - b * tau
        rz = s + G(x)
        rtau = kappa + c @ x + b @ y

        pres = float(np.sqrt(ry @ ry + rz @ rz)) / tau / res_y0
        dres = float(np.linalg.norm(rx)) / tau / res_x0
        pcost = float(c @ x) / tau
        dcost = float(-(b @ y)) / tau
        gap = float(s @ z) / tau ** 2
        rgap = max(gap, abs(pcost - dcost)) / max(1.0, abs(pcost))
        mu = (float(s @ z) + tau * kappa) / (cones.degree + 1)
        trace.append({"iteration": it, "pcost": pcost, "dcost": dcost, "pres": pres,
                      "dres": dres, "gap": gap, "mu": mu, "tau": tau, "kappa": kappa})
        logger.debug("it=%3d pcost=% .9e dcost=% .9e pres=%.2e dres=%.2e gap=%.2e",
                     it, pcost, dcost, pres, dres, gap)

        if not np.all(np.isfinite([pres, dres, gap, tau, kappa])):
            return fallback(it, "non-finite iterate")
        if pres <= options.feas_tol and dres <= options.feas_tol and rgap <= options.gap_tol:
            return report(SolverStatus.OPTIMAL, x, y, z, tau, it, pres, dres, gap, rgap,
                          "converged")
        current = _Iterate(it, x, y, z, tau, pres, dres, gap, rgap)
        if best is None or current.score(options) < best.score(options):
            best = current

        by = float(b @ y)
        if by < 0:
            pinf = float(np.linalg.norm(A.T @ y + Gt(z))) / res_x0 / (-by)
            if pinf <= options.feas_tol:
                return report(SolverStatus.INFEASIBLE, x, y / -by, z / -by, 1.0, it, pres,
                              dres, gap, rgap, "primal infeasibility certificate")
        cx = float(c @ x)
        if cx < 0:
            ax = A @ x
            gx = G(x) + s
            dinf = float(np.sqrt(ax @ ax + gx @ gx)) / res_y0 / (-cx)
            if dinf <= options.feas_tol:
                return report(SolverStatus.UNBOUNDED, x / -cx, y, z, 1.0, it, pres, dres,
                              gap, rgap, "unboundedness certificate")
        if it == options.max_iter:
            break

        try:
            W, Winv, lam = cones.scaling(s, z)
            kkt = _Kkt(A, cones, Winv, n, options)
            x1, y1, z1 = kkt.solve(-c, b, np.zeros(cones.m))
        except (np.linalg.LinAlgError, ValueError) as exc:
            return fallback(it, f"KKT factorization failed: {exc}")
        denom = float(c @ x1 + b @ y1) - kappa / tau

        def direction(eta: float, rs: np.ndarray, rk: float):
            lam_rs = cones.divide(lam, rs) if cones.m else np.zeros(0)
            bz = -eta * rz - W @ lam_rs
            x2, y2, z2 = kkt.solve(-eta * rx, -eta * ry, bz)
            dtau = (-eta * rtau - rk / tau - float(c @ x2 + b @ y2)) / denom
            dx = x2 + dtau * x1
            dy = y2 + dtau * y1
            dz = z2 + dtau * z1
            # taken from the linearized equality so the primal residual keeps shrinking
            ds = dx[idx] - eta * rz
            dkappa = (rk - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def step_to_boundary(ds, dz, dtau, dkappa) -> float:
            alpha = min(cones.max_step(s, ds), cones.max_step(z, dz)) if cones.m else np.inf
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        lam_sq = cones.product(lam, lam) if cones.m else np.zeros(0)
        dx, dy, dz, ds, dtau, dkappa = direction(1.0, -lam_sq, -tau * kappa)
        alpha_aff = min(1.0, step_to_boundary(ds, dz, dtau, dkappa))
        sigma = (1.0 - alpha_aff) ** 3

        rs = sigma * mu * e - lam_sq
        if cones.m:
            rs -= cones.product(Winv @ ds, W @ dz)
        rk = sigma * mu - tau * kappa - dtau * dkappa
        dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, rs, rk)
        alpha = min(1.0, options.step_fraction * step_to_boundary(ds, dz, dtau, dkappa))
        if alpha < 1e-12:
            return fallback(it, "step length collapsed")
        trace[-1]["alpha"] = alpha

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    return fallback(options.max_iter, f"iteration limit ({options.max_iter}) reached")
