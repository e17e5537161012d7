"""Transceiver design from estimated gains with stochastic CSI errors.

With g_hat = g + error and i.i.d. CN(0, sigma_h2) error entries, the
expected sum MSE given the estimate equals the exact-CSI trace expansion
evaluated at g_hat plus a correction sigma_h2 * omega_bar * tr{R^H R} per
tier, where omega_bar is the total transmit power of all precoders.  The
alternating updates keep their closed forms: receivers see the noise
sigma_0^2 + sigma_h2 * omega_bar, precoder regularizers gain the shift
sigma_h2 * r_bar, and the multiplier root function carries that shift as
an offset.  Every routine reduces to its exact-CSI counterpart at
sigma_h2 = 0.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .channel import CsiView, LinkSet
from . import separate_mse
from .sum_mse import (
    AlgoConfig,
    IterTrace,
    PrecoderSet,
    ReceiverSet,
    SumMseBreakdown,
    eval_sum_mse,
    normalize_precoders,
    update_precoders_constrained,
    update_precoders_unconstrained,
    update_receivers,
)

log = logging.getLogger(__name__)


def omega_bar(w: PrecoderSet) -> float:
    """Total transmit power tr{W_BS^H W_BS} + sum_s tr{W_SC^(s)H W_SC^(s)}."""
    return float(w.traces().sum())


def r_bar(r: ReceiverSet) -> float:
    """Total receiver energy tr{R_BS^H R_BS} + sum_s tr{R_SC^(s)H R_SC^(s)}."""
    total = sum(np.sum(np.abs(x) ** 2) for x in r.r_bs)
    total += sum(np.sum(np.abs(x) ** 2) for row in r.r_sc for x in row)
    return float(total)


@dataclass(frozen=True)
class RobustContext:
    """Trace bookkeeping coupling the robust half-steps."""

    sigma_h2: float
    omega_bar: float = 0.0
    r_bar: float = 0.0
    omega_user: tuple[float, ...] = ()

    @classmethod
    def from_design(cls, sigma_h2: float, w: PrecoderSet | None = None,
                    r: ReceiverSet | None = None) -> "RobustContext":
        omegas = ()
        if w is not None:
            blocks = [w.bs_block(i) for i in range(w.w_bs.shape[1] // w.n_s)]
            for s, ws in enumerate(w.w_sc):
                blocks += [w.sc_block(s, j) for j in range(ws.shape[1] // w.n_s)]
            omegas = tuple(float(np.sum(np.abs(b) ** 2)) for b in blocks)
        return cls(
            sigma_h2,
            omega_bar(w) if w is not None else 0.0,
            r_bar(r) if r is not None else 0.0,
            omegas,
        )


def robust_eval_sum_mse(gh: LinkSet, w: PrecoderSet, r: ReceiverSet,
                        sigma0_sq: float, ctx: RobustContext) -> SumMseBreakdown:
    """Expected sum MSE given the estimate: exact traces at g_hat plus the
    per-user correction sigma_h2 * omega_bar * tr{r_i^H r_i}."""
    base = eval_sum_mse(gh, w, r, sigma0_sq)
    coef = ctx.sigma_h2 * ctx.omega_bar
    corr_mue = coef * np.array([np.sum(np.abs(x) ** 2) for x in r.r_bs])
    corr_sue = [coef * np.array([np.sum(np.abs(x) ** 2) for x in row])
                for row in r.r_sc]
    per_sue = [base.per_sue[s] + corr_sue[s] for s in range(len(corr_sue))]
    mse_sc = float(sum(a.sum() for a in per_sue))
    return SumMseBreakdown(float((base.per_mue + corr_mue).sum()), mse_sc,
                           base.per_mue + corr_mue, per_sue)


def robust_update_receivers(gh: LinkSet, w: PrecoderSet, sigma0_sq: float,
                            ctx: RobustContext) -> ReceiverSet:
    """MMSE receivers with the effective noise sigma_0^2 + sigma_h2 * omega_bar."""
    return update_receivers(gh, w, sigma0_sq,
                            extra_noise=ctx.sigma_h2 * ctx.omega_bar)


def robust_update_precoders_constrained(gh: LinkSet, r: ReceiverSet,
                                        cfg: AlgoConfig, ctx: RobustContext):
    """Constrained precoders with the regularizer shift sigma_h2 * r_bar."""
    return update_precoders_constrained(gh, r, cfg,
                                        lam_offset=ctx.sigma_h2 * ctx.r_bar)


def robust_update_precoders_unconstrained(gh: LinkSet, r: ReceiverSet,
                                          cfg: AlgoConfig,
                                          ctx: RobustContext) -> PrecoderSet:
    return update_precoders_unconstrained(gh, r, cfg,
                                          reg=ctx.sigma_h2 * ctx.r_bar)


def run_robust_rao(gh: LinkSet, sigma0_sq: float, cfg: AlgoConfig,
                   init: ReceiverSet, sigma_h2: float,
                   init_precoders: PrecoderSet | None = None):
    """Robust counterpart of the constrained alternating driver; the robust
    objective is nonincreasing because both half-steps minimize it."""
    t0 = time.perf_counter()
    r = init
    w = init_precoders
    trace = IterTrace()
    if w is not None:
        ctx = RobustContext.from_design(sigma_h2, w, r)
        trace.objective.append(robust_eval_sum_mse(gh, w, r, sigma0_sq, ctx).total)
        trace.multipliers.append(np.zeros(gh.dims.s_cells + 1))
        trace.correction.append(sigma_h2 * ctx.omega_bar * ctx.r_bar)
    for _ in range(cfg.max_iters):
        ctx = RobustContext.from_design(sigma_h2, r=r)
        w, lams = robust_update_precoders_constrained(gh, r, cfg, ctx)
        ctx = RobustContext.from_design(sigma_h2, w=w)
        r = update_receivers(gh, w, sigma0_sq,
                             extra_noise=sigma_h2 * ctx.omega_bar)
        ctx = RobustContext.from_design(sigma_h2, w, r)
        obj = robust_eval_sum_mse(gh, w, r, sigma0_sq, ctx).total
        trace.objective.append(obj)
        trace.multipliers.append(lams)
        trace.correction.append(sigma_h2 * ctx.omega_bar * ctx.r_bar)
        if len(trace.objective) > 1:
            prev = trace.objective[-2]
            if abs(prev - obj) <= cfg.rel_tol * max(abs(prev), 1e-300):
                break
    trace.wall_time = time.perf_counter() - t0
    return w, r, trace


def run_robust_uaon(gh: LinkSet, sigma0_sq: float, cfg: AlgoConfig,
                    init: ReceiverSet, sigma_h2: float,
                    init_precoders: PrecoderSet | None = None):
    """Robust unconstrained updates with unit-trace normalization."""
    t0 = time.perf_counter()
    r = init
    w = init_precoders
    trace = IterTrace()
    if w is not None:
        ctx = RobustContext.from_design(sigma_h2, w, r)
        trace.objective.append(robust_eval_sum_mse(gh, w, r, sigma0_sq, ctx).total)
        trace.correction.append(sigma_h2 * ctx.omega_bar * ctx.r_bar)
    for k in range(cfg.max_iters):
        ctx = RobustContext.from_design(sigma_h2, r=r)
        raw = robust_update_precoders_unconstrained(gh, r, cfg, ctx)
        try:
            w = normalize_precoders(raw)
        except Exception as exc:
            raise type(exc)(f"iteration {k + 1}: {exc}") from exc
        ctx = RobustContext.from_design(sigma_h2, w=w)
        r = update_receivers(gh, w, sigma0_sq,
                             extra_noise=sigma_h2 * ctx.omega_bar)
        ctx = RobustContext.from_design(sigma_h2, w, r)
        obj = robust_eval_sum_mse(gh, w, r, sigma0_sq, ctx).total
        trace.objective.append(obj)
        trace.correction.append(sigma_h2 * ctx.omega_bar * ctx.r_bar)
        if len(trace.objective) > 1:
            prev = trace.objective[-2]
            if abs(prev - obj) <= cfg.rel_tol * max(abs(prev), 1e-300):
                break
    trace.wall_time = time.perf_counter() - t0
    return w, r, trace


def robust_separate_design(csi: CsiView, sigma0_sq: float, n_s: int,
                           gamma_bs: float | None = None,
                           gamma_sc: float | None = None):
    """Two-level pipeline on the estimated gains; each user's receiver sees
    the noise sigma_0^2 + sigma_h2 * tr{W_i W_i^H}."""
    gh = csi.g_hat
    d = gh.dims
    if gamma_bs is None:
        gamma_bs = separate_mse.default_gamma(sigma0_sq, d.total_users)
    if gamma_sc is None:
        gamma_sc = separate_mse.default_gamma(sigma0_sq, d.total_users)
    w = PrecoderSet(
        separate_mse.design_bs_precoders(gh, gamma_bs, n_s),
        separate_mse.design_sc_precoders(gh, gamma_sc, n_s),
        n_s,
    )
    s2 = csi.sigma_h2
    r_bs = [
        separate_mse.separate_receiver(
            gh.bm[i], w.bs_block(i), sigma0_sq,
            extra_noise=s2 * float(np.sum(np.abs(w.bs_block(i)) ** 2)))
        for i in range(d.k_mue)
    ]
    r_sc = [
        [
            separate_mse.separate_receiver(
                gh.ss[s][s][j], w.sc_block(s, j), sigma0_sq,
                extra_noise=s2 * float(np.sum(np.abs(w.sc_block(s, j)) ** 2)))
            for j in range(d.l_sue[s])
        ]
        for s in range(d.s_cells)
    ]
    return w, ReceiverSet(r_bs, r_sc)
