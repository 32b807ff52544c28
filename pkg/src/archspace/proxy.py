"""Training-free network scoring.

The headline score is the Shannon entropy of the normalized nine interior
deciles (10% .. 90%, linear interpolation on the sorted spectrum) of the
empirical Fisher eigenvalues, computed per block and averaged.

The Fisher matrix itself is a self-contained desk-scale surrogate, not a
reimplementation of any published construction: project the block output
onto a fixed random unit vector u, take central finite differences of
s_i = <u, flatten(block(x_i))> with respect to every block parameter, and
average the per-sample gradient outer products, F = (1/B) sum g_i g_i^T.
Only block parameters are scored; stem/transition/head parameters are
excluded and reports say so.

Baseline proxies for ablation plumbing: negparams / negflops (negated
network totals, so maximization prefers smaller) and a seeded random draw.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
import numpy as np

from .cost import network_cost
from .errors import TooManyParams
from .graph import BlockGraph, topo_order
from .interpreter import EvalContext, ParamStore, forward, init_params
from .network import NetworkSpec
from .rng import Rng

DEFAULT_BATCH = 64
DEFAULT_FD_STEP = 1e-4
DEFAULT_FD_CEILING = 2000
_EIG_FLOOR = -1e-10


class ProxyId(Enum):
    VKDNW = "vkdnw"
    NEG_PARAMS = "negparams"
    NEG_FLOPS = "negflops"
    RANDOM = "random"


@dataclass(frozen=True)
class FisherSpectrum:
    eigenvalues: tuple[float, ...]   # non-increasing, clamped at 0
    deciles: tuple[float, ...]       # the 9 interior deciles, ascending


@dataclass(frozen=True)
class ProxyScore:
    value: float
    per_block: tuple[float, ...]
    proxy_id: ProxyId

    def to_json(self) -> dict:
        return {
            "proxy_id": self.proxy_id.value,
            "value": self.value,
            "per_block": list(self.per_block),
            "scored_parameters": "block parameters only",
        }


def _param_arrays(block: BlockGraph, store: ParamStore) -> list[np.ndarray]:
    """Flat parameter layout: topo node order, insertion-ordered names."""
    out = []
    for v in topo_order(block):
        for arr in store.tensors.get(v, {}).values():
            out.append(arr)
    return out


def fd_gradients(
    block: BlockGraph,
    store: ParamStore,
    batch: np.ndarray,
    u: np.ndarray,
    h: float = DEFAULT_FD_STEP,
) -> np.ndarray:
    """(B, P) central finite-difference gradients of s_i = <u, flatten(y_i)>.

    Perturbs the store in place and restores each entry bit-exactly; the
    whole batch is forwarded jointly so BatchNorm statistics stay
    consistent between the +h and -h evaluations.
    """
    arrays = _param_arrays(block, store)
    total = sum(a.size for a in arrays)
    b = batch.shape[0]
    ctx = EvalContext()

    def project(y):
        return y.reshape(b, -1) @ u

    grads = np.empty((b, total))
    col = 0
    for arr in arrays:
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            s_plus = project(forward(block, store, batch, ctx))
            flat[j] = orig - h
            s_minus = project(forward(block, store, batch, ctx))
            flat[j] = orig
            grads[:, col] = (s_plus - s_minus) / (2.0 * h)
            col += 1
    return grads


def block_fisher(
    block: BlockGraph,
    store: ParamStore,
    batch: np.ndarray,
    u: np.ndarray,
    h: float = DEFAULT_FD_STEP,
    fd_ceiling: int = DEFAULT_FD_CEILING,
) -> np.ndarray:
    """Empirical Fisher F = (1/B) sum_i g_i g_i^T over block parameters."""
    p = store.scalar_count()
    if p > fd_ceiling:
        raise TooManyParams(f"block has {p} parameters, finite-difference ceiling is {fd_ceiling}")
    if p == 0:
        return np.zeros((0, 0))
    if batch.shape[0] < 10:
        raise ValueError("decile estimation needs a batch of at least 10 samples")
    g = fd_gradients(block, store, batch, u, h)
    return (g.T @ g) / batch.shape[0]


def spectrum_of(fisher: np.ndarray) -> FisherSpectrum:
    """Eigenvalues (clamped to >= 0) and their nine interior deciles."""
    if fisher.size == 0:
        return FisherSpectrum((), (0.0,) * 9)
    eig = np.linalg.eigvalsh(fisher)
    if eig.min() < _EIG_FLOOR:
        raise ValueError(f"Gram matrix produced eigenvalue {eig.min()} < {_EIG_FLOOR}")
    eig = np.clip(eig, 0.0, None)
    deciles = np.quantile(np.sort(eig), [k / 10 for k in range(1, 10)], method="linear")
    return FisherSpectrum(tuple(np.sort(eig)[::-1]), tuple(float(d) for d in deciles))


def vkdnw_score(spectrum: FisherSpectrum | tuple[float, ...]) -> float:
    """Entropy of the normalized deciles; 0*log0 = 0 and all-zero scores 0."""
    deciles = spectrum.deciles if isinstance(spectrum, FisherSpectrum) else tuple(spectrum)
    if len(deciles) != 9:
        raise ValueError(f"expected 9 deciles, got {len(deciles)}")
    total = float(sum(deciles))
    if total <= 0.0:
        return 0.0
    ent = 0.0
    for d in deciles:
        lam = d / total
        if lam > 0.0:
            ent -= lam * math.log(lam)
    return ent


def _score_one_block(block: BlockGraph, rng: Rng, batch_size: int, h: float, fd_ceiling: int) -> float:
    store = init_params(block, rng.child(0))
    if store.scalar_count() == 0:
        return 0.0
    shape = block.input_shape
    batch = rng.child(1).normal((batch_size, *shape))
    u = rng.child(2).normal(shape.numel)
    u = u / np.linalg.norm(u)
    fisher = block_fisher(block, store, batch, u, h=h, fd_ceiling=fd_ceiling)
    return vkdnw_score(spectrum_of(fisher))


def score_network(
    spec: NetworkSpec,
    proxy_id: ProxyId,
    rng: Rng,
    batch_size: int = DEFAULT_BATCH,
    h: float = DEFAULT_FD_STEP,
    fd_ceiling: int = DEFAULT_FD_CEILING,
    threads: int = 1,
) -> ProxyScore:
    """Score a network; per-block streams derive from (rng, block index),
    so serial and threaded runs produce identical values."""
    if proxy_id is ProxyId.NEG_PARAMS or proxy_id is ProxyId.NEG_FLOPS:
        total = network_cost(spec).total
        v = -float(total.params if proxy_id is ProxyId.NEG_PARAMS else total.flops)
        return ProxyScore(v, (), proxy_id)
    if proxy_id is ProxyId.RANDOM:
        return ProxyScore(rng.uniform(), (), proxy_id)

    def one(i: int) -> float:
        return _score_one_block(spec.blocks[i], rng.child(i), batch_size, h, fd_ceiling)

    indices = range(len(spec.blocks))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_block = tuple(pool.map(one, indices))
    else:
        per_block = tuple(one(i) for i in indices)
    return ProxyScore(float(np.mean(per_block)) if per_block else 0.0, per_block, proxy_id)
