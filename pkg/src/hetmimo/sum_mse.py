"""Joint sum-MSE transceiver design by alternating convex optimization.

Two drivers are provided.  run_rao alternates an exactly constrained
precoder update (per-cell power multipliers found by bisection on the KKT
root function) with closed-form MMSE receivers; its objective is
nonincreasing.  run_uaon alternates the unconstrained stationary-point
precoder with a Frobenius-norm normalization to unit trace, trading the
monotone guarantee for speed.

The objective is the total mean square error over all macro and
small-cell user streams,

    f = sum_i E||xhat_i - x_i||^2,

evaluated exactly through its trace expansion (never by sampling).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkSet

log = logging.getLogger(__name__)


class DegenerateDesignError(RuntimeError):
    """A precoder block collapsed to zero norm and cannot be normalized."""


class NumericalError(RuntimeError):
    """A linear-algebra kernel failed; message carries diagnostics."""


@dataclass
class PrecoderSet:
    """BS precoder (N_BS x K*N_S) and per-cell SC precoders (N_SC x L_s*N_S)."""

    w_bs: np.ndarray
    w_sc: list[np.ndarray]
    n_s: int

    def bs_block(self, i: int) -> np.ndarray:
        return self.w_bs[:, i * self.n_s:(i + 1) * self.n_s]

    def sc_block(self, s: int, j: int) -> np.ndarray:
        return self.w_sc[s][:, j * self.n_s:(j + 1) * self.n_s]

    def traces(self) -> np.ndarray:
        """tr{W^H W} for the BS and each SC, in that order."""
        vals = [np.sum(np.abs(self.w_bs) ** 2)]
        vals += [np.sum(np.abs(w) ** 2) for w in self.w_sc]
        return np.array(vals)

    def copy(self) -> "PrecoderSet":
        return PrecoderSet(self.w_bs.copy(), [w.copy() for w in self.w_sc],
                           self.n_s)


@dataclass
class ReceiverSet:
    """Per-user linear receivers, each N_S x N_UE."""

    r_bs: list[np.ndarray]
    r_sc: list[list[np.ndarray]]

    def copy(self) -> "ReceiverSet":
        return ReceiverSet([r.copy() for r in self.r_bs],
                           [[r.copy() for r in row] for row in self.r_sc])

    def bs_bd(self) -> np.ndarray:
        return _block_diag(self.r_bs)

    def sc_bd(self, s: int) -> np.ndarray:
        return _block_diag(self.r_sc[s])


def _block_diag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass
class SumMseBreakdown:
    mse_bs: float
    mse_sc: float
    per_mue: np.ndarray            # (K,)
    per_sue: list[np.ndarray]      # [s] -> (L_s,)

    @property
    def total(self) -> float:
        return self.mse_bs + self.mse_sc


@dataclass
class AlgoConfig:
    max_iters: int = 100
    rel_tol: float = 1e-6
    bisect_tol: float = 1e-8
    ridge: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if min(self.rel_tol, self.bisect_tol, self.ridge) <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass
class IterTrace:
    """Objective and multipliers per iteration of a solver run."""

    objective: list[float] = field(default_factory=list)
    multipliers: list[np.ndarray] = field(default_factory=list)
    correction: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    def to_csv(self) -> str:
        n_lam = max((len(l) for l in self.multipliers), default=0)
        header = ["iteration", "objective"] + [f"lambda_{i}" for i in range(n_lam)]
        if self.correction:
            header.append("correction")
        lines = [",".join(header)]
        for k, obj in enumerate(self.objective):
            row = [str(k), repr(obj)]
            lams = self.multipliers[k] if k < len(self.multipliers) else []
            row += [repr(float(v)) for v in lams]
            row += [""] * (n_lam - len(lams))
            if self.correction:
                row.append(repr(self.correction[k]) if k < len(self.correction) else "")
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# objective and receiver update
# ---------------------------------------------------------------------------

def _tx_grams(w: PrecoderSet):
    """W W^H for the BS and each SC (reused across users)."""
    ww_bs = w.w_bs @ w.w_bs.conj().T
    ww_sc = [ws @ ws.conj().T for ws in w.w_sc]
    return ww_bs, ww_sc


def _psi_mue(g: LinkSet, ww_bs, ww_sc, i: int) -> np.ndarray:
    """Received-signal Gram at MUE i (the N_UE x N_UE quadratic term)."""
    G = g.bm[i]
    psi = G.conj().T @ ww_bs @ G
    for s in range(g.dims.s_cells):
        Gs = g.sm[s, i]
        psi = psi + Gs.conj().T @ ww_sc[s] @ Gs
    return psi


def _psi_sue(g: LinkSet, ww_bs, ww_sc, s: int, j: int) -> np.ndarray:
    G = g.bs[s][j]
    psi = G.conj().T @ ww_bs @ G
    for t in range(g.dims.s_cells):
        Gt = g.ss[t][s][j]
        psi = psi + Gt.conj().T @ ww_sc[t] @ Gt
    return psi


def _user_mse(psi, r, g_dir, w_blk, sigma0_sq, n_s) -> float:
    quad = np.trace(r @ psi @ r.conj().T).real
    cross = 2.0 * np.trace(r @ g_dir.conj().T @ w_blk).real
    noise = sigma0_sq * np.sum(np.abs(r) ** 2)
    return quad - cross + n_s + noise


def eval_sum_mse(g: LinkSet, w: PrecoderSet, r: ReceiverSet,
                 sigma0_sq: float) -> SumMseBreakdown:
    """Exact sum MSE via the trace expansion of E||xhat - x||^2."""
    d = g.dims
    ww_bs, ww_sc = _tx_grams(w)
    per_mue = np.array([
        _user_mse(_psi_mue(g, ww_bs, ww_sc, i), r.r_bs[i], g.bm[i],
                  w.bs_block(i), sigma0_sq, d.n_s)
        for i in range(d.k_mue)
    ])
    per_sue = [
        np.array([
            _user_mse(_psi_sue(g, ww_bs, ww_sc, s, j), r.r_sc[s][j],
                      g.ss[s][s][j], w.sc_block(s, j), sigma0_sq, d.n_s)
            for j in range(d.l_sue[s])
        ])
        for s in range(d.s_cells)
    ]
    mse_sc = float(sum(a.sum() for a in per_sue))
    return SumMseBreakdown(float(per_mue.sum()), mse_sc, per_mue, per_sue)


def _mmse_receiver(psi, g_dir, w_blk, nu, ridge) -> np.ndarray:
    """R = W^H G (Psi + nu I)^{-1}, ridge-loading a singular system."""
    n = psi.shape[0]
    lhs = psi + nu * np.eye(n)
    rhs = (w_blk.conj().T @ g_dir).conj().T
    try:
        sol = np.linalg.solve(lhs, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite solve")
    except np.linalg.LinAlgError:
        load = ridge * max(np.trace(psi).real / n, 1.0)
        log.warning("receiver solve singular at nu=%g; ridge %g applied", nu, load)
        sol = np.linalg.solve(lhs + load * np.eye(n), rhs)
    return sol.conj().T


def update_receivers(g: LinkSet, w: PrecoderSet, sigma0_sq: float,
                     extra_noise: float = 0.0,
                     ridge: float = 1e-12) -> ReceiverSet:
    """Per-user MMSE receivers for fixed precoders; the global minimizer
    of the sum MSE over the block-diagonal receiver set."""
    d = g.dims
    nu = sigma0_sq + extra_noise
    ww_bs, ww_sc = _tx_grams(w)
    r_bs = [
        _mmse_receiver(_psi_mue(g, ww_bs, ww_sc, i), g.bm[i], w.bs_block(i),
                       nu, ridge)
        for i in range(d.k_mue)
    ]
    r_sc = [
        [
            _mmse_receiver(_psi_sue(g, ww_bs, ww_sc, s, j), g.ss[s][s][j],
                           w.sc_block(s, j), nu, ridge)
            for j in range(d.l_sue[s])
        ]
        for s in range(d.s_cells)
    ]
    return ReceiverSet(r_bs, r_sc)


# ---------------------------------------------------------------------------
# precoder updates and the power multiplier
# ---------------------------------------------------------------------------

@dataclass
class MultiplierProblem:
    """Eigen-reduced data of one cell's power-multiplier equation.

    chi(lam) = sum_n a_n / (d_n + offset + lam)^2 - 1 equals
    tr{W(lam)^H W(lam)} - 1 and is strictly decreasing for lam >= 0.
    """

    d: np.ndarray
    a: np.ndarray
    offset: float = 0.0


def chi(problem: MultiplierProblem, lam: float) -> float:
    if lam < 0:
        raise ValueError("lam must be >= 0")
    den = problem.d + problem.offset + lam
    bad = den <= 0
    if np.any(bad):
        if np.any(problem.a[bad] > 1e-30):
            return np.inf
        den = np.where(bad, 1.0, den)
        return float(np.sum(problem.a[~bad] / den[~bad] ** 2) - 1.0)
    return float(np.sum(problem.a / den ** 2) - 1.0)


def _eig_reduce(phi: np.ndarray, numerator: np.ndarray, offset: float):
    """Eigendecompose the symmetrized phi and rotate the numerator."""
    phi_h = 0.5 * (phi + phi.conj().T)
    try:
        d, u = np.linalg.eigh(phi_h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition failed: {exc}; "
            f"trace={np.trace(phi_h).real:.3e}, "
            f"fro={np.linalg.norm(phi_h):.3e}"
        ) from exc
    d = np.maximum(d, 0.0)
    un = u.conj().T @ numerator
    a = np.sum(np.abs(un) ** 2, axis=1)
    return MultiplierProblem(d, a, offset), u, un


def build_multiplier_problem(phi: np.ndarray, gdir: np.ndarray,
                             r_bd: np.ndarray,
                             offset: float = 0.0) -> MultiplierProblem:
    """Reduce one cell's KKT root equation to (d, a, offset) form.

    d holds the eigenvalues of the symmetrized phi and a the diagonal of
    the similarity-transformed numerator Gram G R^H R G^H.
    """
    problem, _, _ = _eig_reduce(phi, gdir @ r_bd.conj().T, offset)
    return problem


def bisect_multiplier(problem: MultiplierProblem, eps: float) -> float:
    """Root of chi on [0, sqrt(sum a)]; returns 0 when chi(0) <= 0.

    The analytic upper bracket satisfies chi(sqrt(sum a)) <= 0 because
    sum a / (d + offset + lam)^2 <= sum(a) / lam^2.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if chi(problem, 0.0) <= 0.0:
        return 0.0
    # tiny inflation keeps chi(hi) <= 0 under floating-point rounding
    hi = float(np.sqrt(problem.a.sum())) * (1.0 + 1e-9)
    lo = 0.0
    lam = hi
    for _ in range(500):
        lam = 0.5 * (lo + hi)
        val = chi(problem, lam)
        # accept from the feasible side only, so tr{W^H W} <= 1 holds
        if -eps <= val <= 0.0:
            return lam
        if val > 0:
            lo = lam
        else:
            hi = lam
        if lam == lo and lam == hi:
            break
    log.warning("bisection stopped at |chi|=%g (eps=%g)", abs(chi(problem, lam)), eps)
    return hi


def _phi_bs(g: LinkSet, r: ReceiverSet) -> np.ndarray:
    d = g.dims
    phi = np.zeros((d.n_bs, d.n_bs), dtype=complex)
    for i in range(d.k_mue):
        gr = g.bm[i] @ r.r_bs[i].conj().T
        phi += gr @ gr.conj().T
    for s in range(d.s_cells):
        for j in range(d.l_sue[s]):
            gr = g.bs[s][j] @ r.r_sc[s][j].conj().T
            phi += gr @ gr.conj().T
    return phi


def _phi_sc(g: LinkSet, r: ReceiverSet, s: int) -> np.ndarray:
    d = g.dims
    phi = np.zeros((d.n_sc, d.n_sc), dtype=complex)
    for i in range(d.k_mue):
        gr = g.sm[s, i] @ r.r_bs[i].conj().T
        phi += gr @ gr.conj().T
    for t in range(d.s_cells):
        for j in range(d.l_sue[t]):
            gr = g.ss[s][t][j] @ r.r_sc[t][j].conj().T
            phi += gr @ gr.conj().T
    return phi


def _numer_bs(g: LinkSet, r: ReceiverSet) -> np.ndarray:
    return np.hstack([g.bm[i] @ r.r_bs[i].conj().T
                      for i in range(g.dims.k_mue)])


def _numer_sc(g: LinkSet, r: ReceiverSet, s: int) -> np.ndarray:
    return np.hstack([g.ss[s][s][j] @ r.r_sc[s][j].conj().T
                      for j in range(g.dims.l_sue[s])])


def _apply_shifted_inverse(problem: MultiplierProblem, u, un, lam,
                           ridge) -> np.ndarray:
    """(phi + (lam + offset) I)^{-1} numerator through the eigenbasis.

    Modes whose shifted eigenvalue is numerically zero get pseudo-inverse
    treatment: they are dropped when they carry no numerator mass (the
    structural case when phi is rank deficient but the numerator lies in
    its range) and ridge-loaded with a warning otherwise.
    """
    den = problem.d + problem.offset + lam
    dmax = problem.d.max(initial=0.0)
    tol = 1e-14 * max(dmax, problem.offset + lam)
    weak = den <= tol
    if not np.any(weak):
        return u @ (un / den[:, None])
    total = float(np.sum(np.abs(un) ** 2))
    if total == 0.0:
        log.warning("zero quadratic and linear terms; precoder set to zero")
        return np.zeros((u.shape[0], un.shape[1]), dtype=complex)
    mass = float(np.sum(np.abs(un[weak]) ** 2))
    if mass <= 1e-20 * total:
        coef = np.zeros_like(un)
        nz = ~weak
        coef[nz] = un[nz] / den[nz, None]
        return u @ coef
    load = ridge * max(problem.d.sum() / len(den), 1e-300)
    log.warning("singular precoder solve with numerator mass %.2e outside "
                "the range; ridge %g applied", mass / total, load)
    return u @ (un / (den + load)[:, None])


def _constrained_cell(phi, numerator, cfg: AlgoConfig, offset: float):
    problem, u, un = _eig_reduce(phi, numerator, offset)
    lam = bisect_multiplier(problem, cfg.bisect_tol)
    return _apply_shifted_inverse(problem, u, un, lam, cfg.ridge), lam


def update_precoders_constrained(g: LinkSet, r: ReceiverSet, cfg: AlgoConfig,
                                 lam_offset: float = 0.0):
    """Power-feasible precoders W = (Phi + (lam + offset) I)^{-1} G R^H with
    per-cell multipliers from bisection; KKT complementarity holds, so
    tr{W^H W} = 1 whenever lam > 0 and <= 1 whenever lam = 0."""
    w_bs, lam0 = _constrained_cell(_phi_bs(g, r), _numer_bs(g, r), cfg, lam_offset)
    w_sc = []
    lams = [lam0]
    for s in range(g.dims.s_cells):
        w, lam = _constrained_cell(_phi_sc(g, r, s), _numer_sc(g, r, s),
                                   cfg, lam_offset)
        w_sc.append(w)
        lams.append(lam)
    return PrecoderSet(w_bs, w_sc, g.dims.n_s), np.array(lams)


def _unconstrained_cell(phi, numerator, cfg: AlgoConfig, offset: float):
    problem, u, un = _eig_reduce(phi, numerator, offset)
    return _apply_shifted_inverse(problem, u, un, 0.0, cfg.ridge)


def update_precoders_unconstrained(g: LinkSet, r: ReceiverSet,
                                   cfg: AlgoConfig | None = None,
                                   reg: float = 0.0) -> PrecoderSet:
    """Unconstrained stationary point W = (Phi + reg I)^{-1} G R^H, the
    minimum-norm one when Phi is rank deficient."""
    cfg = cfg or AlgoConfig()
    w_bs = _unconstrained_cell(_phi_bs(g, r), _numer_bs(g, r), cfg, reg)
    w_sc = [
        _unconstrained_cell(_phi_sc(g, r, s), _numer_sc(g, r, s), cfg, reg)
        for s in range(g.dims.s_cells)
    ]
    return PrecoderSet(w_bs, w_sc, g.dims.n_s)


def normalize_precoders(raw: PrecoderSet) -> PrecoderSet:
    """Divide the BS block and every SC block by its Frobenius norm."""
    def _unit(w):
        n = np.linalg.norm(w)
        if n <= 0 or not np.isfinite(n):
            raise DegenerateDesignError("zero-norm precoder block")
        return w / n

    return PrecoderSet(_unit(raw.w_bs), [_unit(w) for w in raw.w_sc], raw.n_s)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def init_transceivers(g: LinkSet, sigma0_sq: float, seed):
    """Unit-trace Gaussian precoders and their MMSE receivers."""
    rng = np.random.default_rng(seed)
    d = g.dims

    def _draw(rows, cols):
        w = (rng.standard_normal((rows, cols))
             + 1j * rng.standard_normal((rows, cols)))
        return w / np.linalg.norm(w)

    w = PrecoderSet(
        _draw(d.n_bs, d.k_mue * d.n_s),
        [_draw(d.n_sc, d.l_sue[s] * d.n_s) for s in range(d.s_cells)],
        d.n_s,
    )
    return w, update_receivers(g, w, sigma0_sq)


def run_rao(g: LinkSet, sigma0_sq: float, cfg: AlgoConfig,
            init: ReceiverSet, init_precoders: PrecoderSet | None = None):
    """Alternate constrained precoder and MMSE receiver updates.

    The recorded objective is nonincreasing: each half step minimizes the
    same function over its own variable block.
    """
    t0 = time.perf_counter()
    r = init
    w = init_precoders
    trace = IterTrace()
    if w is not None:
        trace.objective.append(eval_sum_mse(g, w, r, sigma0_sq).total)
        trace.multipliers.append(np.zeros(g.dims.s_cells + 1))
    for _ in range(cfg.max_iters):
        w, lams = update_precoders_constrained(g, r, cfg)
        r = update_receivers(g, w, sigma0_sq)
        obj = eval_sum_mse(g, w, r, sigma0_sq).total
        trace.objective.append(obj)
        trace.multipliers.append(lams)
        if len(trace.objective) > 1:
            prev = trace.objective[-2]
            if abs(prev - obj) <= cfg.rel_tol * max(abs(prev), 1e-300):
                break
    trace.wall_time = time.perf_counter() - t0
    return w, r, trace


def run_uaon(g: LinkSet, sigma0_sq: float, cfg: AlgoConfig,
             init: ReceiverSet, init_precoders: PrecoderSet | None = None):
    """Alternate the unconstrained stationary point, unit-trace
    normalization, and MMSE receivers; every iterate is exactly feasible."""
    t0 = time.perf_counter()
    r = init
    w = init_precoders
    trace = IterTrace()
    if w is not None:
        trace.objective.append(eval_sum_mse(g, w, r, sigma0_sq).total)
    for k in range(cfg.max_iters):
        raw = update_precoders_unconstrained(g, r, cfg)
        try:
            w = normalize_precoders(raw)
        except DegenerateDesignError as exc:
            raise DegenerateDesignError(f"iteration {k + 1}: {exc}") from exc
        r = update_receivers(g, w, sigma0_sq)
        obj = eval_sum_mse(g, w, r, sigma0_sq).total
        trace.objective.append(obj)
        if len(trace.objective) > 1:
            prev = trace.objective[-2]
            if abs(prev - obj) <= cfg.rel_tol * max(abs(prev), 1e-300):
                break
    trace.wall_time = time.perf_counter() - t0
    return w, r, trace
