"""Link-level Monte Carlo evaluation and parameter sweeps.

A sweep regenerates topology and channels per realization, designs the
requested schemes, and records per-user-class statistics: the MSE column
is the exact trace-formula value of each design on the true gains (the
conditional expectation over symbols and noise), while BER comes from
transporting QPSK symbols through the full two-tier link.  Realizations
use counter-derived seeds so results are independent of worker count.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import robust as robust_mod
from . import separate_mse
from .channel import (
    CsiView,
    ChannelSet,
    Geometry,
    LinkSet,
    PowerConfig,
    SystemDims,
    apply_csi_error,
    build_topology,
    canonical_assignment,
    compute_beta_table,
    effective_gains,
    large_scale_map,
    noise_variance,
    sample_channels,
)
from .sum_mse import (
    AlgoConfig,
    PrecoderSet,
    ReceiverSet,
    SumMseBreakdown,
    eval_sum_mse,
    init_transceivers,
    run_rao,
    run_uaon,
)

log = logging.getLogger(__name__)

SCHEMES = ("RAO", "UAON", "SEPARATE",
           "ROBUST_RAO", "ROBUST_UAON", "ROBUST_SEPARATE")
SWEEP_AXES = ("p_bs_dbm", "k_mue", "sigma_h2_norm")

CSV_COLUMNS = ("scheme", "axis", "axis_value", "user_class", "mean_mse",
               "se_mse", "mean_ber", "se_ber", "n_channels", "n_symbols",
               "failures")


@dataclass(frozen=True)
class ScenarioConfig:
    """Static description of one simulated network."""

    dims: SystemDims
    powers: PowerConfig
    geometry: Geometry = Geometry()
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    sigma_h2_norm: float = 1.0
    gamma_bs: float | None = None
    gamma_sc: float | None = None


def desk_scenario(**overrides) -> ScenarioConfig:
    """Small configuration that keeps CI runs fast."""
    base = dict(
        dims=SystemDims(n_bs=12, n_sc=4, n_ue=2, n_s=1, k_mue=4, s_cells=2,
                        l_sue=(2, 2)),
        powers=PowerConfig(p_bs_dbm=46.0, p_sc_dbm=24.0,
                           noise_density_dbm_hz=-174.0, bandwidth_hz=20e6),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def paper_scenario(**overrides) -> ScenarioConfig:
    """Full-size configuration for long runs."""
    base = dict(
        dims=SystemDims(n_bs=36, n_sc=8, n_ue=2, n_s=1, k_mue=8, s_cells=2,
                        l_sue=(4, 4)),
        powers=PowerConfig(p_bs_dbm=46.0, p_sc_dbm=24.0,
                           noise_density_dbm_hz=-174.0, bandwidth_hz=20e6),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    schemes: tuple[str, ...]
    n_channels: int
    n_symbols: int
    seed: int

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ValueError("sweep grid is empty")
        if self.n_channels < 1 or self.n_symbols < 1:
            raise ValueError("counts must be >= 1")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")


@dataclass
class SweepReport:
    rows: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            out = dict(row)
            for key in ("mean_mse", "se_mse", "mean_ber", "se_ber"):
                out[key] = repr(float(out[key]))
            writer.writerow(out)
        return buf.getvalue()

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows
                if all(r[k] == v for k, v in match.items())]


# ---------------------------------------------------------------------------
# symbol transport
# ---------------------------------------------------------------------------

def gen_qpsk(n_streams: int, n_symbols: int, seed):
    """Unit-energy Gray-mapped QPSK block and its bit labels.

    Returns (symbols, bits) with symbols (n_streams, n_symbols) complex and
    bits (n_streams, 2, n_symbols); bit 0 selects the in-phase sign.
    """
    if n_streams < 1 or n_symbols < 1:
        raise ValueError("counts must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n_streams, 2, n_symbols))
    sym = ((1 - 2 * bits[:, 0, :]) + 1j * (1 - 2 * bits[:, 1, :])) / math.sqrt(2)
    return sym, bits


def detect_qpsk(xhat: np.ndarray) -> np.ndarray:
    """Minimum-distance (sign) detection back to bit labels."""
    bits = np.empty((xhat.shape[0], 2, xhat.shape[1]), dtype=np.int64)
    bits[:, 0, :] = xhat.real < 0
    bits[:, 1, :] = xhat.imag < 0
    return bits


def simulate_link(g: LinkSet, w: PrecoderSet, r: ReceiverSet,
                  sigma0_sq: float, x_bs: np.ndarray, x_sc: list[np.ndarray],
                  seed):
    """Transport symbol blocks through the two-tier downlink.

    Every cross-tier and intra-tier term is included; the per-user noise is
    fresh CN(0, sigma_0^2).  Returns per-user stream estimates.
    """
    d = g.dims
    n_sym = x_bs.shape[1]
    if x_bs.shape[0] != d.k_mue * d.n_s:
        raise ValueError("BS symbol block does not match K * N_S")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tx_bs = w.w_bs @ x_bs                      # (N_BS, n_sym)
    tx_sc = [w.w_sc[s] @ x_sc[s] for s in range(d.s_cells)]

    sd = math.sqrt(sigma0_sq / 2.0) if sigma0_sq > 0 else 0.0

    def _noise(shape):
        if sd == 0.0:
            return 0.0
        return sd * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    xhat_mue = []
    for i in range(d.k_mue):
        y = g.bm[i].conj().T @ tx_bs
        for s in range(d.s_cells):
            y = y + g.sm[s, i].conj().T @ tx_sc[s]
        y = y + _noise((d.n_ue, n_sym))
        xhat_mue.append(r.r_bs[i] @ y)
    xhat_sue = []
    for s in range(d.s_cells):
        row = []
        for j in range(d.l_sue[s]):
            y = g.bs[s][j].conj().T @ tx_bs
            for t in range(d.s_cells):
                y = y + g.ss[t][s][j].conj().T @ tx_sc[t]
            y = y + _noise((d.n_ue, n_sym))
            row.append(r.r_sc[s][j] @ y)
        xhat_sue.append(row)
    return xhat_mue, xhat_sue


def estimate_ber(xhat_mue, bits_mue, xhat_sue, bits_sue) -> dict:
    """Bit error rates per user class from hard QPSK detection."""
    def _errors(xhat, bits):
        det = detect_qpsk(xhat)
        return int(np.sum(det != bits)), bits.size

    e_mue = n_mue = 0
    for xh, b in zip(xhat_mue, bits_mue):
        e, n = _errors(xh, b)
        e_mue += e
        n_mue += n
    e_sue = n_sue = 0
    for row_x, row_b in zip(xhat_sue, bits_sue):
        for xh, b in zip(row_x, row_b):
            e, n = _errors(xh, b)
            e_sue += e
            n_sue += n
    out = {
        "mue": e_mue / n_mue if n_mue else 0.0,
        "sue": e_sue / n_sue if n_sue else 0.0,
        "all": (e_mue + e_sue) / (n_mue + n_sue) if (n_mue + n_sue) else 0.0,
    }
    return out


# ---------------------------------------------------------------------------
# realizations and designs
# ---------------------------------------------------------------------------

def _child_seeds(master: int, realization: int, n: int = 5):
    ss = np.random.SeedSequence(entropy=master, spawn_key=(realization,))
    return ss.spawn(n)


def realize_gains(cfg: ScenarioConfig, seed) -> ChannelSet:
    """Topology, large-scale map, fading draw, and effective gains for one
    realization, with users pinned to their configured cells."""
    topo = build_topology(cfg.dims, cfg.geometry, seed, placement="clustered")
    table = compute_beta_table(topo)
    ls = large_scale_map(table, canonical_assignment(cfg.dims))
    ch = sample_channels(cfg.dims, ls, seed)
    return effective_gains(ch, cfg.powers)


def design_for_scheme(scheme: str, ch: ChannelSet, csi: CsiView | None,
                      cfg: ScenarioConfig, sigma0_sq: float, init_seed):
    """Dispatch one scheme; returns (PrecoderSet, ReceiverSet, IterTrace | None)."""
    g = ch.g
    d = cfg.dims
    if scheme in ("RAO", "UAON"):
        w0, r0 = init_transceivers(g, sigma0_sq, init_seed)
        runner = run_rao if scheme == "RAO" else run_uaon
        w, r, trace = runner(g, sigma0_sq, cfg.algo, r0, init_precoders=w0)
        return w, r, trace
    if scheme == "SEPARATE":
        w, r = separate_mse.design_separate(g, sigma0_sq, d.n_s,
                                            cfg.gamma_bs, cfg.gamma_sc)
        return w, r, None
    if csi is None:
        raise ValueError(f"scheme {scheme} needs a CSI view")
    gh = csi.g_hat
    if scheme in ("ROBUST_RAO", "ROBUST_UAON"):
        w0, r0 = init_transceivers(gh, sigma0_sq, init_seed)
        runner = (robust_mod.run_robust_rao if scheme == "ROBUST_RAO"
                  else robust_mod.run_robust_uaon)
        w, r, trace = runner(gh, sigma0_sq, cfg.algo, r0, csi.sigma_h2,
                             init_precoders=w0)
        return w, r, trace
    if scheme == "ROBUST_SEPARATE":
        w, r = robust_mod.robust_separate_design(csi, sigma0_sq, d.n_s,
                                                 cfg.gamma_bs, cfg.gamma_sc)
        return w, r, None
    raise ValueError(f"unknown scheme {scheme!r}")


def _apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "p_bs_dbm":
        return replace(cfg, powers=replace(cfg.powers, p_bs_dbm=float(value)))
    if axis == "k_mue":
        return replace(cfg, dims=replace(cfg.dims, k_mue=int(value)))
    if axis == "sigma_h2_norm":
        return replace(cfg, sigma_h2_norm=float(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _class_means(br: SumMseBreakdown, n_s: int):
    mue = float(br.per_mue.mean()) / n_s
    sue_vals = np.concatenate([a for a in br.per_sue]) if br.per_sue else np.array([])
    sue = float(sue_vals.mean()) / n_s if sue_vals.size else 0.0
    allv = float(np.concatenate([br.per_mue, sue_vals]).mean()) / n_s
    return {"mue": mue, "sue": sue, "all": allv}


def _one_realization(cfg: ScenarioConfig, schemes, n_symbols: int,
                     master_seed: int, idx: int):
    """Design and evaluate every scheme on one channel realization."""
    ch_seed, csi_seed, init_seed, sym_seed, noise_seed = _child_seeds(
        master_seed, idx)
    ch = realize_gains(cfg, ch_seed)
    sigma0_sq = noise_variance(cfg.powers)
    needs_csi = any(s.startswith("ROBUST") for s in schemes)
    csi = None
    if needs_csi:
        csi = apply_csi_error(ch, cfg.sigma_h2_norm * sigma0_sq, csi_seed,
                              sigma0_sq)
    d = cfg.dims
    sym_rng = np.random.default_rng(sym_seed)
    x_bs, bits_bs = gen_qpsk(d.k_mue * d.n_s, n_symbols, sym_rng)
    x_sc, bits_sc = [], []
    for s in range(d.s_cells):
        xs, bs = gen_qpsk(d.l_sue[s] * d.n_s, n_symbols, sym_rng)
        x_sc.append(xs)
        bits_sc.append(bs)
    bits_mue = [bits_bs[i * d.n_s:(i + 1) * d.n_s] for i in range(d.k_mue)]
    bits_sue = [
        [bits_sc[s][j * d.n_s:(j + 1) * d.n_s] for j in range(d.l_sue[s])]
        for s in range(d.s_cells)
    ]

    out = {}
    for scheme in schemes:
        try:
            w, r, _ = design_for_scheme(scheme, ch, csi, cfg, sigma0_sq,
                                        init_seed)
            mse = _class_means(eval_sum_mse(ch.g, w, r, sigma0_sq), d.n_s)
            xhat_mue, xhat_sue = simulate_link(
                ch.g, w, r, sigma0_sq, x_bs, x_sc,
                np.random.default_rng(noise_seed))
            ber = estimate_ber(xhat_mue, bits_mue, xhat_sue, bits_sue)
            out[scheme] = {"mse": mse, "ber": ber}
        except Exception as exc:  # failed realization: excluded and counted
            log.warning("realization %d scheme %s failed: %s", idx, scheme, exc)
            out[scheme] = None
    return out


def _sweep_point(args):
    cfg, schemes, n_symbols, master_seed, indices = args
    return [_one_realization(cfg, schemes, n_symbols, master_seed, i)
            for i in indices]


def run_sweep(spec: SweepSpec, base: ScenarioConfig,
              workers: int = 1) -> SweepReport:
    """Run every (axis value, realization, scheme) cell and aggregate.

    Deterministic for a fixed spec seed regardless of worker count: each
    realization derives its own seed from (seed, index) and the reduction
    runs in index order.
    """
    rows: list[dict] = []
    for value in spec.values:
        cfg = _apply_axis(base, spec.axis, value)
        indices = list(range(spec.n_channels))
        if workers > 1:
            chunks = [indices[i::workers] for i in range(workers)]
            jobs = [(cfg, spec.schemes, spec.n_symbols, spec.seed, chunk)
                    for chunk in chunks if chunk]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_sweep_point, jobs))
            results: dict[int, dict] = {}
            for chunk, part in zip([c for c in chunks if c], parts):
                results.update(dict(zip(chunk, part)))
            ordered = [results[i] for i in indices]
        else:
            ordered = [_one_realization(cfg, spec.schemes, spec.n_symbols,
                                        spec.seed, i) for i in indices]

        for scheme in spec.schemes:
            ok = [res[scheme] for res in ordered if res[scheme] is not None]
            failures = spec.n_channels - len(ok)
            for cls in ("MUE", "SUE"):
                key = cls.lower()
                mses = np.array([r["mse"][key] for r in ok])
                bers = np.array([r["ber"][key] for r in ok])
                rows.append({
                    "scheme": scheme,
                    "axis": spec.axis,
                    "axis_value": value,
                    "user_class": cls,
                    "mean_mse": mses.mean() if mses.size else math.nan,
                    "se_mse": _sem(mses),
                    "mean_ber": bers.mean() if bers.size else math.nan,
                    "se_ber": _sem(bers),
                    "n_channels": len(ok),
                    "n_symbols": spec.n_symbols,
                    "failures": failures,
                })
    return SweepReport(rows)


def _sem(x: np.ndarray) -> float:
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(x.size))


def learning_curve(ch: ChannelSet, schemes, n_runs: int, n_iters: int,
                   sigma0_sq: float, seed: int,
                   csi: CsiView | None = None,
                   algo: AlgoConfig | None = None,
                   gamma_bs: float | None = None,
                   gamma_sc: float | None = None) -> list[dict]:
    """Per-iteration average objective over independent initializations.

    Iterative schemes contribute their recorded objective (padded with the
    final value after early exit); the non-iterative designs contribute a
    flat reference line.  Robust schemes report their own expected-MSE
    objective on the estimated gains.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    algo = algo or AlgoConfig(max_iters=n_iters)
    algo = replace(algo, max_iters=n_iters)
    d = ch.dims
    rows = []
    for scheme in schemes:
        per_run = []
        for run in range(n_runs):
            init_seed = np.random.SeedSequence(entropy=seed,
                                               spawn_key=(run,))
            if scheme in ("RAO", "UAON", "ROBUST_RAO", "ROBUST_UAON"):
                gains = ch.g if not scheme.startswith("ROBUST") else csi.g_hat
                w0, r0 = init_transceivers(gains, sigma0_sq, init_seed)
                if scheme == "RAO":
                    _, _, tr = run_rao(ch.g, sigma0_sq, algo, r0, w0)
                elif scheme == "UAON":
                    _, _, tr = run_uaon(ch.g, sigma0_sq, algo, r0, w0)
                elif scheme == "ROBUST_RAO":
                    _, _, tr = robust_mod.run_robust_rao(
                        csi.g_hat, sigma0_sq, algo, r0, csi.sigma_h2, w0)
                else:
                    _, _, tr = robust_mod.run_robust_uaon(
                        csi.g_hat, sigma0_sq, algo, r0, csi.sigma_h2, w0)
                obj = list(tr.objective[1:])  # drop the init point
                obj += [obj[-1]] * (n_iters - len(obj))
                per_run.append(obj[:n_iters])
            elif scheme == "SEPARATE":
                w, r = separate_mse.design_separate(ch.g, sigma0_sq, d.n_s,
                                                    gamma_bs, gamma_sc)
                val = eval_sum_mse(ch.g, w, r, sigma0_sq).total
                per_run.append([val] * n_iters)
            elif scheme == "ROBUST_SEPARATE":
                w, r = robust_mod.robust_separate_design(csi, sigma0_sq,
                                                         d.n_s, gamma_bs,
                                                         gamma_sc)
                ctx = robust_mod.RobustContext.from_design(csi.sigma_h2, w, r)
                val = robust_mod.robust_eval_sum_mse(csi.g_hat, w, r,
                                                     sigma0_sq, ctx).total
                per_run.append([val] * n_iters)
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
        arr = np.array(per_run)
        for k in range(n_iters):
            rows.append({
                "scheme": scheme,
                "iteration": k + 1,
                "mean_objective": float(arr[:, k].mean()),
                "se": _sem(arr[:, k]),
            })
    return rows


def curve_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=("scheme", "iteration",
                                             "mean_objective", "se"),
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["mean_objective"] = repr(float(out["mean_objective"]))
        out["se"] = repr(float(out["se"]))
        writer.writerow(out)
    return buf.getvalue()
