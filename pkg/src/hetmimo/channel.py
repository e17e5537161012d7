"""Two-tier network geometry, large-scale gains, and channel realizations.

Powers are converted from dBm to linear watts at ingestion; everything
downstream works in linear units.  Channel entries are sqrt(beta) times a
unit-variance circularly-symmetric complex Gaussian fast-fading factor,
where beta collects pathloss and penetration loss for the link.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_PENETRATION_DB = 20.0
DEFAULT_CLAMP_KM = 0.01  # 10 m floor before pathloss evaluation


class ConfigurationError(ValueError):
    """A configuration value violates a cross-field constraint."""


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _cn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """I.i.d. CN(0, var) samples."""
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class SystemDims:
    """Antenna and user counts for one macro cell overlaid with small cells."""

    n_bs: int
    n_sc: int
    n_ue: int
    n_s: int
    k_mue: int
    s_cells: int
    l_sue: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "l_sue", tuple(int(x) for x in self.l_sue))
        if min(self.n_bs, self.n_sc, self.n_ue, self.n_s, self.k_mue) < 1:
            raise ConfigurationError("antenna/user/stream counts must be >= 1")
        if self.s_cells < 0:
            raise ConfigurationError("s_cells must be >= 0")
        if len(self.l_sue) != self.s_cells:
            raise ConfigurationError(
                f"l_sue has {len(self.l_sue)} entries for {self.s_cells} small cells"
            )
        if any(l < 1 for l in self.l_sue):
            raise ConfigurationError("every small cell must serve >= 1 user")
        if self.k_mue > self.n_bs:
            raise ConfigurationError(
                f"K exceeds N_BS ({self.k_mue} > {self.n_bs})"
            )
        if any(l > self.n_sc for l in self.l_sue):
            raise ConfigurationError("L_s exceeds N_SC for some cell")
        if self.n_s > self.n_ue:
            raise ConfigurationError("N_S exceeds N_UE")

    @property
    def total_sues(self) -> int:
        return sum(self.l_sue)

    @property
    def total_users(self) -> int:
        return self.k_mue + self.total_sues

    @property
    def total_streams(self) -> int:
        return self.total_users * self.n_s


@dataclass(frozen=True)
class PowerConfig:
    """Transmit powers and noise description (dBm domain)."""

    p_bs_dbm: float
    p_sc_dbm: float
    noise_density_dbm_hz: float
    bandwidth_hz: float

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ConfigurationError("bandwidth_hz must be > 0")

    @property
    def p_bs_watts(self) -> float:
        return dbm_to_watts(self.p_bs_dbm)

    @property
    def p_sc_watts(self) -> float:
        return dbm_to_watts(self.p_sc_dbm)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def pathloss_db(model: str, d_km: float, clamp_km: float = DEFAULT_CLAMP_KM) -> float:
    """Distance-dependent pathloss in dB for the macro ("bs") or small-cell
    ("sc") model, with the distance clamped from below."""
    d = max(float(d_km), clamp_km)
    if d <= 0:
        raise ValueError("distance must be positive after clamping")
    if model == "bs":
        return 128.1 + 37.6 * math.log10(d)
    if model == "sc":
        return 140.7 + 36.7 * math.log10(d)
    raise ValueError(f"unknown pathloss model {model!r}")


def large_scale_beta(pathloss_db: float, penetration_db: float) -> float:
    """Linear power gain from pathloss and penetration loss in dB."""
    return 10.0 ** (-(pathloss_db + penetration_db) / 10.0)


def noise_variance(pw: PowerConfig) -> float:
    """Per-antenna-element noise power sigma_0^2 in watts."""
    total_dbm = pw.noise_density_dbm_hz + 10.0 * math.log10(pw.bandwidth_hz)
    return dbm_to_watts(total_dbm)


@dataclass(frozen=True)
class Geometry:
    mc_radius_m: float = 800.0
    sc_radius_m: float = 100.0
    inter_site_m: float = 700.0

    def __post_init__(self):
        if min(self.mc_radius_m, self.sc_radius_m, self.inter_site_m) <= 0:
            raise ConfigurationError("radii and inter-site distance must be > 0")
        if self.inter_site_m >= self.mc_radius_m:
            raise ConfigurationError("inter-site distance must be < macro radius")
        if self.inter_site_m + self.sc_radius_m > self.mc_radius_m * (1 + 1e-12):
            raise ConfigurationError(
                "small cells stick out of the macro disc "
                "(inter_site_m + sc_radius_m > mc_radius_m)"
            )


@dataclass(frozen=True)
class Topology:
    """Node and user coordinates in metres; BS at the origin."""

    bs_position: np.ndarray    # (2,)
    sc_positions: np.ndarray   # (S, 2)
    ue_positions: np.ndarray   # (n_users, 2)
    geometry: Geometry

    @property
    def mc_radius_m(self) -> float:
        return self.geometry.mc_radius_m

    @property
    def sc_radius_m(self) -> float:
        return self.geometry.sc_radius_m

    @property
    def inter_site_m(self) -> float:
        return self.geometry.inter_site_m


def _uniform_disc(rng: np.random.Generator, n: int, radius: float,
                  center=(0.0, 0.0)) -> np.ndarray:
    """Rejection-sample n points uniformly in a disc."""
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        cand = rng.uniform(-radius, radius, size=(2 * (n - filled) + 8, 2))
        keep = cand[np.hypot(cand[:, 0], cand[:, 1]) <= radius]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out + np.asarray(center)


def build_topology(dims: SystemDims, geometry: Geometry, rng_seed,
                   placement: str = "uniform") -> Topology:
    """Place the BS at the origin, small cells on a ring at the inter-site
    distance with uniform random angles, and users in the macro disc.

    placement "uniform" drops every user uniformly in the macro disc;
    "clustered" pins the K macro users to the macro disc and each group of
    L_s small-cell users uniformly inside its own cell disc, which keeps
    the configured user counts per cell.
    """
    rng = _rng(rng_seed)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=dims.s_cells)
    sc_pos = geometry.inter_site_m * np.stack(
        [np.cos(angles), np.sin(angles)], axis=-1
    ).reshape(dims.s_cells, 2)

    if placement == "uniform":
        ue_pos = _uniform_disc(rng, dims.total_users, geometry.mc_radius_m)
    elif placement == "clustered":
        chunks = [_uniform_disc(rng, dims.k_mue, geometry.mc_radius_m)]
        for s in range(dims.s_cells):
            chunks.append(
                _uniform_disc(rng, dims.l_sue[s], geometry.sc_radius_m,
                              center=sc_pos[s])
            )
        ue_pos = np.vstack(chunks)
    else:
        raise ConfigurationError(f"unknown placement {placement!r}")

    return Topology(np.zeros(2), sc_pos, ue_pos, geometry)


@dataclass(frozen=True)
class BetaTable:
    """Large-scale linear power gain from each node to every dropped user."""

    from_bs: np.ndarray   # (n_users,)
    from_sc: np.ndarray   # (S, n_users)


def compute_beta_table(topology: Topology,
                       penetration_bs_db: float = DEFAULT_PENETRATION_DB,
                       penetration_sc_db: float = DEFAULT_PENETRATION_DB,
                       clamp_km: float = DEFAULT_CLAMP_KM) -> BetaTable:
    ue = topology.ue_positions
    d_bs_km = np.hypot(*(ue - topology.bs_position).T) / 1000.0
    from_bs = np.array([
        large_scale_beta(pathloss_db("bs", d, clamp_km), penetration_bs_db)
        for d in d_bs_km
    ])
    from_sc = np.empty((len(topology.sc_positions), len(ue)))
    for s, pos in enumerate(topology.sc_positions):
        d_km = np.hypot(*(ue - pos).T) / 1000.0
        from_sc[s] = [
            large_scale_beta(pathloss_db("sc", d, clamp_km), penetration_sc_db)
            for d in d_km
        ]
    return BetaTable(from_bs, from_sc)


@dataclass(frozen=True)
class Assignment:
    """Partition of user indices into the MUE set and per-cell SUE sets."""

    mue: tuple[int, ...]
    sue: tuple[tuple[int, ...], ...]
    dropped: tuple[int, ...] = ()

    @property
    def counts(self) -> tuple[int, tuple[int, ...]]:
        return len(self.mue), tuple(len(j) for j in self.sue)


def assign_users(table: BetaTable, powers: PowerConfig,
                 dims: SystemDims) -> Assignment:
    """Assign each user to the node with maximum received power beta * P,
    shedding the weakest users of any overloaded cell."""
    n_users = len(table.from_bs)
    rx = np.vstack([
        table.from_bs * powers.p_bs_watts,
        table.from_sc * powers.p_sc_watts if dims.s_cells else
        np.empty((0, n_users)),
    ])
    best = np.argmax(rx, axis=0)

    dropped: list[int] = []

    def _cap(users: list[int], betas: np.ndarray, cap: int, name: str):
        if len(users) <= cap:
            return users
        order = sorted(users, key=lambda u: betas[u], reverse=True)
        shed = order[cap:]
        log.warning("%s overloaded: dropping %d weakest users %s",
                    name, len(shed), shed)
        dropped.extend(shed)
        return sorted(order[:cap])

    mue = _cap([u for u in range(n_users) if best[u] == 0],
               table.from_bs, dims.n_bs, "BS")
    sue = []
    for s in range(dims.s_cells):
        served = [u for u in range(n_users) if best[u] == s + 1]
        sue.append(tuple(_cap(served, table.from_sc[s], dims.n_sc, f"SC{s}")))
    return Assignment(tuple(mue), tuple(sue), tuple(sorted(dropped)))


def canonical_assignment(dims: SystemDims) -> Assignment:
    """Role-pinned assignment matching the "clustered" placement order:
    users 0..K-1 are MUEs, then L_1 SUEs of cell 1, and so on."""
    mue = tuple(range(dims.k_mue))
    sue = []
    start = dims.k_mue
    for l in dims.l_sue:
        sue.append(tuple(range(start, start + l)))
        start += l
    return Assignment(mue, tuple(sue))


@dataclass(frozen=True)
class LargeScaleMap:
    """Role-indexed large-scale gains for every link in the network."""

    beta_bm: np.ndarray                             # (K,)
    beta_bs: tuple[np.ndarray, ...]                 # [s] -> (L_s,)
    beta_sm: np.ndarray                             # (S, K)
    beta_ss: tuple[tuple[np.ndarray, ...], ...]     # [t][s] -> (L_s,)


def large_scale_map(table: BetaTable, assignment: Assignment) -> LargeScaleMap:
    mue = list(assignment.mue)
    sues = [list(j) for j in assignment.sue]
    s_cells = len(table.from_sc)
    beta_bm = table.from_bs[mue]
    beta_bs = tuple(table.from_bs[j] for j in sues)
    beta_sm = (table.from_sc[:, mue] if s_cells
               else np.empty((0, len(mue))))
    beta_ss = tuple(
        tuple(table.from_sc[t, j] for j in sues) for t in range(s_cells)
    )
    return LargeScaleMap(beta_bm, beta_bs, beta_sm, beta_ss)


@dataclass(frozen=True)
class LinkSet:
    """Per-link complex matrices from each transmitter to each user.

    bm[i] is N_BS x N_UE (BS to MUE i); bs[s][j] is N_BS x N_UE (BS to SUE
    j of cell s); sm[s][i] is N_SC x N_UE (SC s to MUE i); ss[t][s][j] is
    N_SC x N_UE (SC t to SUE j of cell s).
    """

    dims: SystemDims
    bm: np.ndarray                                # (K, N_BS, N_UE)
    bs: tuple[np.ndarray, ...]                    # [s] -> (L_s, N_BS, N_UE)
    sm: np.ndarray                                # (S, K, N_SC, N_UE)
    ss: tuple[tuple[np.ndarray, ...], ...]        # [t][s] -> (L_s, N_SC, N_UE)

    def __post_init__(self):
        d = self.dims
        assert self.bm.shape == (d.k_mue, d.n_bs, d.n_ue)
        assert len(self.bs) == d.s_cells and len(self.ss) == d.s_cells
        assert self.sm.shape == (d.s_cells, d.k_mue, d.n_sc, d.n_ue)
        for s in range(d.s_cells):
            assert self.bs[s].shape == (d.l_sue[s], d.n_bs, d.n_ue)
            for t in range(d.s_cells):
                assert self.ss[t][s].shape == (d.l_sue[s], d.n_sc, d.n_ue)

    def bm_cat(self) -> np.ndarray:
        """N_BS x K*N_UE aggregate of the BS-to-MUE links."""
        return np.hstack(list(self.bm))

    def bs_cat(self, s: int) -> np.ndarray:
        return np.hstack(list(self.bs[s]))

    def sm_cat(self, s: int) -> np.ndarray:
        return np.hstack(list(self.sm[s]))

    def ss_cat(self, t: int, s: int) -> np.ndarray:
        return np.hstack(list(self.ss[t][s]))

    def scale(self, bs_factor: float, sc_factor: float) -> "LinkSet":
        """Entrywise scaling of the BS-side and SC-side links."""
        return LinkSet(
            self.dims,
            bs_factor * self.bm,
            tuple(bs_factor * a for a in self.bs),
            sc_factor * self.sm,
            tuple(tuple(sc_factor * a for a in row) for row in self.ss),
        )


@dataclass(frozen=True)
class ChannelSet:
    """One channel realization: raw channels h and effective gains g."""

    dims: SystemDims
    seed: int
    ls: LargeScaleMap
    h: LinkSet
    g: LinkSet | None = None


def sample_channels(dims: SystemDims, ls: LargeScaleMap, rng_seed) -> ChannelSet:
    """Draw h = sqrt(beta) * CN(0, 1) for every link."""
    rng = _rng(rng_seed)
    S, K = dims.s_cells, dims.k_mue

    bm = np.stack([
        math.sqrt(ls.beta_bm[i]) * _cn(rng, (dims.n_bs, dims.n_ue))
        for i in range(K)
    ])
    bs = tuple(
        np.stack([
            math.sqrt(ls.beta_bs[s][j]) * _cn(rng, (dims.n_bs, dims.n_ue))
            for j in range(dims.l_sue[s])
        ])
        for s in range(S)
    )
    sm = (np.stack([
        np.stack([
            math.sqrt(ls.beta_sm[s, i]) * _cn(rng, (dims.n_sc, dims.n_ue))
            for i in range(K)
        ])
        for s in range(S)
    ]) if S else np.empty((0, K, dims.n_sc, dims.n_ue), dtype=complex))
    ss = tuple(
        tuple(
            np.stack([
                math.sqrt(ls.beta_ss[t][s][j]) * _cn(rng, (dims.n_sc, dims.n_ue))
                for j in range(dims.l_sue[s])
            ])
            for s in range(S)
        )
        for t in range(S)
    )
    seed = rng_seed if isinstance(rng_seed, int) else -1
    return ChannelSet(dims, seed, ls, LinkSet(dims, bm, bs, sm, ss))


def effective_gains(ch: ChannelSet, pw: PowerConfig) -> ChannelSet:
    """Populate g = sqrt(P) * h with per-tier transmit powers in watts."""
    g = ch.h.scale(math.sqrt(pw.p_bs_watts), math.sqrt(pw.p_sc_watts))
    return replace(ch, g=g)


@dataclass(frozen=True)
class CsiView:
    """Estimated effective gains g_hat = g + error, error i.i.d. CN(0, sigma_h2)."""

    dims: SystemDims
    sigma_h2: float
    g_hat: LinkSet
    sigma_h2_norm: float | None = None


def apply_csi_error(ch: ChannelSet, sigma_h2: float, rng_seed,
                    sigma0_sq: float | None = None) -> CsiView:
    """Perturb every effective gain with an i.i.d. CN(0, sigma_h2) error.

    The unit-variance error draw depends only on the seed, so two views
    with the same seed and different sigma_h2 share scaled errors.
    """
    if sigma_h2 < 0:
        raise ValueError("sigma_h2 must be >= 0")
    if ch.g is None:
        raise ValueError("effective gains not populated; call effective_gains first")
    norm = sigma_h2 / sigma0_sq if sigma0_sq else None
    if sigma_h2 == 0:
        return CsiView(ch.dims, 0.0, ch.g, norm)

    rng = _rng(rng_seed)
    sd = math.sqrt(sigma_h2)
    g = ch.g
    bm = g.bm + sd * _cn(rng, g.bm.shape)
    bs = tuple(a + sd * _cn(rng, a.shape) for a in g.bs)
    sm = g.sm + sd * _cn(rng, g.sm.shape)
    ss = tuple(tuple(a + sd * _cn(rng, a.shape) for a in row) for row in g.ss)
    return CsiView(ch.dims, sigma_h2, LinkSet(ch.dims, bm, bs, sm, ss), norm)
