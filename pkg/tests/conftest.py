import numpy as np
import pytest

from hetmimo.channel import LinkSet, SystemDims
from hetmimo.sum_mse import PrecoderSet, ReceiverSet


def make_gains(dims: SystemDims, rng: np.random.Generator,
               scale: float = 1.0) -> LinkSet:
    """Random unit-scale effective gains, well conditioned for solver tests."""
    def cn(*shape):
        return scale / np.sqrt(2) * (rng.standard_normal(shape)
                                     + 1j * rng.standard_normal(shape))

    S, K = dims.s_cells, dims.k_mue
    bm = cn(K, dims.n_bs, dims.n_ue)
    bs = tuple(cn(dims.l_sue[s], dims.n_bs, dims.n_ue) for s in range(S))
    sm = (cn(S, K, dims.n_sc, dims.n_ue) if S
          else np.empty((0, K, dims.n_sc, dims.n_ue), dtype=complex))
    ss = tuple(tuple(cn(dims.l_sue[s], dims.n_sc, dims.n_ue)
                     for s in range(S)) for _ in range(S))
    return LinkSet(dims, bm, bs, sm, ss)


def scalar_gains(g_bm: complex = 1.0) -> LinkSet:
    """All dimensions one, no small cells, direct gain g_bm."""
    dims = SystemDims(n_bs=1, n_sc=1, n_ue=1, n_s=1, k_mue=1, s_cells=0,
                      l_sue=())
    bm = np.array([[[g_bm]]], dtype=complex)
    sm = np.empty((0, 1, 1, 1), dtype=complex)
    return LinkSet(dims, bm, (), sm, ())


def random_feasible_precoders(dims: SystemDims, rng,
                              full_power: bool = True) -> PrecoderSet:
    def draw(rows, cols):
        w = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
        w /= np.linalg.norm(w)
        if not full_power:
            w *= np.sqrt(rng.uniform(0.05, 1.0))
        return w

    return PrecoderSet(
        draw(dims.n_bs, dims.k_mue * dims.n_s),
        [draw(dims.n_sc, dims.l_sue[s] * dims.n_s)
         for s in range(dims.s_cells)],
        dims.n_s,
    )


def random_receivers(dims: SystemDims, rng, scale: float = 1.0) -> ReceiverSet:
    def draw():
        return scale * (rng.standard_normal((dims.n_s, dims.n_ue))
                        + 1j * rng.standard_normal((dims.n_s, dims.n_ue)))

    return ReceiverSet(
        [draw() for _ in range(dims.k_mue)],
        [[draw() for _ in range(dims.l_sue[s])] for s in range(dims.s_cells)],
    )


@pytest.fixture
def desk_dims() -> SystemDims:
    return SystemDims(n_bs=8, n_sc=4, n_ue=2, n_s=1, k_mue=2, s_cells=2,
                      l_sue=(2, 2))


@pytest.fixture
def desk_gains(desk_dims) -> LinkSet:
    return make_gains(desk_dims, np.random.default_rng(1234))
