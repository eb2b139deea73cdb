"""Fourier-feature MLPs and the piecewise predictor over a partition.

A network maps normalized (x, t) through a fixed random Fourier embedding,
tanh hidden layers, and a linear scalar output. The embedding matrix W is
drawn once at init and never trained. A Partition carries one subnet per
subdomain plus per-interface state; prediction routes each point to exactly
one subnet by half-open membership.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .streams import INIT, stream

__all__ = [
    "Architecture",
    "PinnNetwork",
    "Partition",
    "PARENT_WIDTHS",
    "CHILD_WIDTHS",
    "init_network",
    "embed",
    "forward",
    "piecewise_predict",
    "subdomain_index",
    "save_network",
    "load_network",
]

PARENT_WIDTHS = (2, 256, 128, 128, 128, 1)
CHILD_WIDTHS = (2, 256, 128, 128, 1)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Layer widths plus Fourier embedding settings.

    widths[0] must be 2 (raw inputs) and widths[-1] must be 1; widths[1] is
    both the first hidden width and the embedding length 2*d_e.
    """

    widths: tuple
    fourier_sigma: float = 10.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 3:
            raise ValueError("need input, at least one hidden layer, and output")
        if widths[0] != 2:
            raise ValueError("first width must be 2 (x, t inputs)")
        if widths[-1] != 1:
            raise ValueError("last width must be 1 (scalar speed)")
        if widths[1] % 2 != 0:
            raise ValueError("first hidden width must be even (sin/cos halves)")
        if any(w < 1 for w in widths):
            raise ValueError("widths must be positive")
        if not self.fourier_sigma > 0:
            raise ValueError("fourier_sigma must be positive")
        object.__setattr__(self, "widths", widths)

    @property
    def d_e(self) -> int:
        return self.widths[1] // 2

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of each trainable linear layer, embedding first."""
        sizes = [2 * self.d_e, *self.widths[1:]]
        return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass
class PinnNetwork:
    """Parameters of one network: fixed Fourier matrix plus trainable layers.

    layers holds (weight, bias) pairs with weight shape (fan_in, fan_out);
    every layer but the last is followed by tanh. W is (d_e, 2) and must
    never be touched by an optimizer.
    """

    fourier: np.ndarray
    layers: list
    seed: int
    arch: Architecture | None = None

    def trainable_arrays(self) -> list[np.ndarray]:
        out = []
        for weight, bias in self.layers:
            out.append(weight)
            out.append(bias)
        return out

    def copy(self) -> "PinnNetwork":
        return PinnNetwork(
            fourier=self.fourier.copy(),
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            seed=self.seed,
            arch=self.arch,
        )


def init_network(arch: Architecture, seed: int, *extra: int) -> PinnNetwork:
    """Seeded init: W ~ N(0, sigma^2); layers uniform in +-1/sqrt(fan_in).

    extra indices address independent streams off the same root seed, e.g.
    one per child subnet.
    """
    rng = stream(seed, INIT, *extra)
    fourier = arch.fourier_sigma * rng.standard_normal((arch.d_e, 2))
    layers = []
    for fan_in, fan_out in arch.layer_shapes():
        limit = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        bias = rng.uniform(-limit, limit, size=fan_out)
        layers.append((weight, bias))
    return PinnNetwork(fourier=fourier, layers=layers, seed=seed, arch=arch)


def _points(x, t) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if x.shape != t.shape:
        raise ValueError("x and t must have matching shapes")
    return np.stack([x, t], axis=-1)


def embed(net: PinnNetwork, x, t) -> np.ndarray:
    """Fourier features [sin(Wp), cos(Wp)] per point, length 2*d_e."""
    p = _points(x, t)
    z = p @ net.fourier.T
    return np.concatenate([np.sin(z), np.cos(z)], axis=-1)


def forward(net: PinnNetwork, x, t) -> np.ndarray:
    """Batched prediction in normalized output units; returns shape of x."""
    h = embed(net, x, t)
    for weight, bias in net.layers[:-1]:
        h = np.tanh(h @ weight + bias)
    weight, bias = net.layers[-1]
    out = h @ weight + bias
    return out[..., 0]


@dataclass
class Partition:
    """Subdomain layout with one subnet per cell and per-interface state.

    1-D directions split along one axis; spacetime crosses one x split with
    one t split into a 2x2 grid. Cell (ix, it) is flattened row-major as
    ix * (len(splits_t)+1) + it. interfaces is ordered but opaque here; the
    interface module owns its element type.
    """

    direction: str
    splits_x: tuple
    splits_t: tuple
    nets: list
    interfaces: list = field(default_factory=list)
    delta_min: float = 0.15

    def __post_init__(self):
        if self.direction not in ("spatial", "temporal", "spacetime"):
            raise ValueError(f"unknown direction {self.direction!r}")
        self.splits_x = tuple(float(s) for s in self.splits_x)
        self.splits_t = tuple(float(s) for s in self.splits_t)
        if self.direction == "spatial" and self.splits_t:
            raise ValueError("spatial direction cannot carry t splits")
        if self.direction == "temporal" and self.splits_x:
            raise ValueError("temporal direction cannot carry x splits")
        if self.direction == "spacetime" and (len(self.splits_x) != 1 or len(self.splits_t) != 1):
            raise ValueError("spacetime partition is a 2x2 grid: one split per axis")
        for splits in (self.splits_x, self.splits_t):
            edges = (0.0, *splits, 1.0)
            if any(b - a < self.delta_min - 1e-12 for a, b in zip(edges, edges[1:])):
                raise ValueError(f"subdomain narrower than delta_min={self.delta_min}")
            if any(not 0 < s < 1 for s in splits):
                raise ValueError("splits must lie strictly inside (0, 1)")
        expected = (len(self.splits_x) + 1) * (len(self.splits_t) + 1)
        if len(self.nets) != expected:
            raise ValueError(f"partition needs {expected} subnets, got {len(self.nets)}")

    @property
    def n_subdomains(self) -> int:
        return len(self.nets)

    def bounds(self, flat_index: int) -> tuple:
        """((x_lo, x_hi), (t_lo, t_hi)) of one subdomain cell."""
        n_t = len(self.splits_t) + 1
        ix, it = divmod(flat_index, n_t)
        x_edges = (0.0, *self.splits_x, 1.0)
        t_edges = (0.0, *self.splits_t, 1.0)
        return (x_edges[ix], x_edges[ix + 1]), (t_edges[it], t_edges[it + 1])


def subdomain_index(partition: Partition, x, t) -> np.ndarray:
    """Flat cell index per point; membership [left, right), last cell closed."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ix = np.searchsorted(np.asarray(partition.splits_x), x, side="right")
    it = np.searchsorted(np.asarray(partition.splits_t), t, side="right")
    return ix * (len(partition.splits_t) + 1) + it


def piecewise_predict(partition: Partition, x, t) -> np.ndarray:
    """Evaluate each point with exactly the subnet owning its subdomain."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = subdomain_index(partition, x, t)
    out = np.empty(x.shape, dtype=float)
    for k in np.unique(idx):
        mask = idx == k
        out[mask] = forward(partition.nets[k], x[mask], t[mask])
    return out


# ---------------------------------------------------------------------------
# checkpoint format

def save_network(net: PinnNetwork, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "seed": net.seed,
        "arch": {
            "widths": list(net.arch.widths) if net.arch is not None else None,
            "fourier_sigma": net.arch.fourier_sigma if net.arch is not None else None,
        },
        "fourier": net.fourier.tolist(),
        "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in net.layers],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_network(path) -> PinnNetwork:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    arch = None
    if doc["arch"]["widths"] is not None:
        arch = Architecture(widths=tuple(doc["arch"]["widths"]), fourier_sigma=doc["arch"]["fourier_sigma"])
    layers = [(np.asarray(l["weight"], dtype=float), np.asarray(l["bias"], dtype=float)) for l in doc["layers"]]
    return PinnNetwork(
        fourier=np.asarray(doc["fourier"], dtype=float),
        layers=layers,
        seed=int(doc["seed"]),
        arch=arch,
    )
