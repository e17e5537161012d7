"""Non-iterative two-level precoding with per-cell MSE objectives.

Each transmitter designs its users' precoders alone: a block-
diagonalization basis removes intra-cell interference, an interference
whitener and SVD diagonalize the per-user objective, a two-constraint
linear program splits power across the whitened modes, and the precoder
is rebuilt from the resulting Gram matrix.  No iteration and no exchange
of user data or CSI between cells.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .channel import LinkSet
from .sum_mse import NumericalError, PrecoderSet, ReceiverSet

log = logging.getLogger(__name__)


class BdInfeasibleError(RuntimeError):
    """The complement channel leaves no null space for a user's precoder."""


@dataclass
class BdDecomposition:
    """SVD split of the aggregated other-user gain matrix."""

    gbar: np.ndarray
    v0: np.ndarray   # orthonormal null-space basis, n_tx x (n_tx - rank)
    v1: np.ndarray
    z: np.ndarray    # nonzero singular values
    u: np.ndarray


@dataclass
class WhitenedSvd:
    """Whitener B and SVD factors of g_direct^H B^{-1} = P diag(sigma) T^H."""

    b: np.ndarray
    b_inv: np.ndarray
    p: np.ndarray
    sigma: np.ndarray
    t: np.ndarray


@dataclass
class LpProblem:
    """min c^T lam  s.t.  sum(lam) <= gamma,  x^T lam <= alpha,  lam >= 0."""

    c: np.ndarray
    x: np.ndarray
    gamma: float
    alpha: float

    def __post_init__(self):
        if self.gamma <= 0 or self.alpha <= 0:
            raise ValueError("budgets must be > 0")

    def to_json(self) -> str:
        """Dump the instance for offline inspection."""
        return json.dumps({
            "c": list(map(float, self.c)),
            "x": list(map(float, self.x)),
            "gamma": float(self.gamma),
            "alpha": float(self.alpha),
        })

    @classmethod
    def from_json(cls, text: str) -> "LpProblem":
        data = json.loads(text)
        return cls(np.asarray(data["c"], dtype=float),
                   np.asarray(data["x"], dtype=float),
                   data["gamma"], data["alpha"])


def bd_null_basis(gbar: np.ndarray, n_tx: int | None = None) -> BdDecomposition:
    """Orthonormal basis of the null space of gbar^H.

    Numerical rank uses the max(m, n) * eps * sigma_max cutoff.  An empty
    gbar (no other users) yields the full identity basis.
    """
    if gbar.size == 0:
        n = n_tx if n_tx is not None else gbar.shape[0]
        eye = np.eye(n, dtype=complex)
        return BdDecomposition(gbar, eye, np.zeros((n, 0), dtype=complex),
                               np.zeros(0), np.zeros((n, 0), dtype=complex))
    u, z, vh = np.linalg.svd(gbar.conj().T, full_matrices=True)
    tol = max(gbar.shape) * np.finfo(float).eps * (z[0] if len(z) else 0.0)
    rank = int(np.sum(z > tol))
    if rank >= gbar.shape[0]:
        raise BdInfeasibleError(
            f"complement matrix of rank {rank} leaves no null space in "
            f"dimension {gbar.shape[0]}"
        )
    v = vh.conj().T
    return BdDecomposition(gbar, v[:, rank:], v[:, :rank], z[:rank], u)


def _psd_sqrt_and_inv(gram: np.ndarray, direct_scale: float):
    """Hermitian square root and inverse of a PSD Gram, diagonal-loaded
    when rank-deficient so the whitener stays invertible."""
    m = gram.shape[0]
    gram = 0.5 * (gram + gram.conj().T)
    d, u = np.linalg.eigh(gram)
    d = np.maximum(d, 0.0)
    dmax = d.max(initial=0.0)
    if d.min(initial=0.0) <= 1e-14 * max(dmax, 1e-300):
        base = np.trace(gram).real / m
        if base <= 0:
            base = direct_scale
        if base <= 0:
            raise NumericalError("whitener Gram is zero and no scale is available")
        load = 1e-10 * base
        d = d + load
    sq = np.sqrt(d)
    b = (u * sq) @ u.conj().T
    b_inv = (u / sq) @ u.conj().T
    return b, b_inv


def whiten_and_svd(g_tilde_direct: np.ndarray,
                   g_tilde_cross: np.ndarray) -> WhitenedSvd:
    """Whiten by B = (cross Gram)^{1/2} and SVD the whitened direct link."""
    m = g_tilde_direct.shape[0]
    gram = (g_tilde_cross @ g_tilde_cross.conj().T if g_tilde_cross.size
            else np.zeros((m, m), dtype=complex))
    scale = float(np.sum(np.abs(g_tilde_direct) ** 2)) / max(m, 1)
    b, b_inv = _psd_sqrt_and_inv(gram, scale)
    p, sigma, th = np.linalg.svd(g_tilde_direct.conj().T @ b_inv,
                                 full_matrices=False)
    return WhitenedSvd(b, b_inv, p, sigma, th.conj().T)


def build_lp(svd: WhitenedSvd, gamma: float, alpha: float) -> LpProblem:
    """Cost and power-weight vectors of the per-user mode allocation LP."""
    c = -svd.sigma ** 2
    x = np.einsum("ij,ij->j", svd.t.conj(),
                  svd.b_inv @ svd.b_inv @ svd.t).real
    x = np.maximum(x, 0.0)
    return LpProblem(c, x, float(gamma), float(alpha))


def solve_lp(lp: LpProblem) -> np.ndarray:
    """Exact solution by vertex enumeration.

    With two budget rows plus sign constraints the optimum sits at a
    vertex with at most two nonzero coordinates.  Every candidate is
    checked against both budgets with relative tolerance before it
    competes; ties break toward the lexicographically smallest support.
    """
    n = len(lp.c)
    c, x, gamma, alpha = lp.c, lp.x, lp.gamma, lp.alpha
    rel = 1e-9

    best = (0.0, (), np.zeros(n))

    def consider(support, lam):
        nonlocal best
        if lam.sum() > gamma * (1 + rel) or float(x @ lam) > alpha * (1 + rel):
            return
        val = float(c @ lam)
        if val < best[0] - 1e-14 * max(1.0, abs(best[0])):
            best = (val, support, lam)
        elif abs(val - best[0]) <= 1e-14 * max(1.0, abs(best[0])):
            if support < best[1]:
                best = (val, support, lam)

    for i in range(n):
        for v in (gamma, alpha / x[i] if x[i] > 0 else None):
            if v is None or not np.isfinite(v) or v < 0:
                continue
            lam = np.zeros(n)
            lam[i] = min(v, gamma)
            consider((i,), lam)

    for i in range(n):
        for j in range(i + 1, n):
            det = x[j] - x[i]
            if abs(det) <= 1e-14 * max(x[i], x[j], 1e-300):
                continue
            li = (x[j] * gamma - alpha) / det
            lj = gamma - li
            scale = abs(li) + abs(lj)
            if li < -rel * scale or lj < -rel * scale:
                continue
            lam = np.zeros(n)
            lam[i], lam[j] = max(li, 0.0), max(lj, 0.0)
            consider((i, j), lam)

    return best[2]


def reconstruct_precoder(bd: BdDecomposition, svd: WhitenedSvd,
                         lambda_star: np.ndarray, n_s: int) -> np.ndarray:
    """Rebuild the user's precoder from its optimal Gram matrix.

    The Gram is V0 B^{-1} T diag(lam) T^H B^{-1} V0^H; its top n_s
    eigen-directions form the returned precoder, and any allocated power
    beyond n_s modes is discarded with a warning.
    """
    lam = np.maximum(np.asarray(lambda_star, dtype=float), 0.0)
    factor = bd.v0 @ (svd.b_inv @ (svd.t * np.sqrt(lam)))
    if not np.any(lam > 0):
        return np.zeros((bd.v0.shape[0], n_s), dtype=complex)
    e, s, _ = np.linalg.svd(factor, full_matrices=False)
    kept = s[:n_s]
    discarded = float(np.sum(s[n_s:] ** 2))
    if discarded > 1e-12 * float(np.sum(s ** 2)):
        log.warning("rank truncation: %.3e of %.3e precoder power dropped "
                    "beyond %d streams", discarded, float(np.sum(s ** 2)), n_s)
    w = e[:, :n_s] * kept
    if w.shape[1] < n_s:
        w = np.pad(w, ((0, 0), (0, n_s - w.shape[1])))
    return w


def _design_user(g_direct, gbar, g_cross, gamma, alpha, n_s):
    """BD -> whiten -> SVD -> LP -> reconstruction for one user."""
    bd = bd_null_basis(gbar, n_tx=g_direct.shape[0])
    v0h = bd.v0.conj().T
    svd = whiten_and_svd(v0h @ g_direct,
                         v0h @ g_cross if g_cross.size else
                         np.zeros((bd.v0.shape[1], 0), dtype=complex))
    lp = build_lp(svd, gamma, alpha)
    lam = solve_lp(lp)
    return reconstruct_precoder(bd, svd, lam, n_s)


def design_bs_precoders(g: LinkSet, gamma_bs: float, n_s: int,
                        alpha_total: float = 1.0) -> np.ndarray:
    """Per-MUE two-level precoders at the BS with uniform budget splits
    gamma_bs / K and alpha_total / K."""
    d = g.dims
    k = d.k_mue
    cross = (np.hstack([g.bs_cat(s) for s in range(d.s_cells)])
             if d.s_cells else np.zeros((d.n_bs, 0), dtype=complex))
    blocks = []
    for i in range(k):
        gbar = (np.hstack([g.bm[m] for m in range(k) if m != i])
                if k > 1 else np.zeros((d.n_bs, 0), dtype=complex))
        try:
            blocks.append(_design_user(g.bm[i], gbar, cross,
                                       gamma_bs / k, alpha_total / k, n_s))
        except BdInfeasibleError as exc:
            raise BdInfeasibleError(f"MUE {i}: {exc}") from exc
    return np.hstack(blocks)


def design_sc_precoders(g: LinkSet, gamma_sc: float, n_s: int,
                        alpha_total: float = 1.0) -> list[np.ndarray]:
    """Per-SUE two-level precoders at each SC; the interference budget
    covers every user the cell does not serve."""
    d = g.dims
    out = []
    for s in range(d.s_cells):
        l = d.l_sue[s]
        cross_parts = [g.sm_cat(s)] if d.k_mue else []
        cross_parts += [g.ss_cat(s, t) for t in range(d.s_cells) if t != s]
        cross = (np.hstack(cross_parts) if cross_parts
                 else np.zeros((d.n_sc, 0), dtype=complex))
        blocks = []
        for j in range(l):
            gbar = (np.hstack([g.ss[s][s][m] for m in range(l) if m != j])
                    if l > 1 else np.zeros((d.n_sc, 0), dtype=complex))
            try:
                blocks.append(_design_user(g.ss[s][s][j], gbar, cross,
                                           gamma_sc / l, alpha_total / l, n_s))
            except BdInfeasibleError as exc:
                raise BdInfeasibleError(f"SUE ({s},{j}): {exc}") from exc
        out.append(np.hstack(blocks))
    return out


def separate_receiver(g_direct: np.ndarray, w_blk: np.ndarray,
                      sigma0_sq: float,
                      extra_noise: float = 0.0) -> np.ndarray:
    """Interference-free MMSE receiver R = W^H G (G^H W W^H G + nu I)^{-1}."""
    n_ue = g_direct.shape[1]
    gw = g_direct.conj().T @ w_blk
    lhs = gw @ gw.conj().T + (sigma0_sq + extra_noise) * np.eye(n_ue)
    return np.linalg.solve(lhs, gw).conj().T


def default_gamma(sigma0_sq: float, n_users: int) -> float:
    """Interference budget of ten noise floors per served stream block."""
    return 10.0 * sigma0_sq * n_users


def design_separate(g: LinkSet, sigma0_sq: float, n_s: int,
                    gamma_bs: float | None = None,
                    gamma_sc: float | None = None):
    """Full non-iterative design: precoders for both tiers and their
    interference-free per-user receivers."""
    d = g.dims
    if gamma_bs is None:
        gamma_bs = default_gamma(sigma0_sq, d.total_users)
    if gamma_sc is None:
        gamma_sc = default_gamma(sigma0_sq, d.total_users)
    w = PrecoderSet(
        design_bs_precoders(g, gamma_bs, n_s),
        design_sc_precoders(g, gamma_sc, n_s),
        n_s,
    )
    r_bs = [separate_receiver(g.bm[i], w.bs_block(i), sigma0_sq)
            for i in range(d.k_mue)]
    r_sc = [
        [separate_receiver(g.ss[s][s][j], w.sc_block(s, j), sigma0_sq)
         for j in range(d.l_sue[s])]
        for s in range(d.s_cells)
    ]
    return w, ReceiverSet(r_bs, r_sc)
