"""
Generates the synthetic two-modality dataset with a controllable spurious correlation level.

Ground-truth latents are kept next to the observations so learned representations can be scored against them.
"""
from dataclasses import asdict, dataclass, replace

import numpy as np

LATENT_NAMES = ("ns", "sf", "nc", "sc")

# Independent substreams of one seed, so changing how many h-noise draws are made never shifts the latents.
STREAM_LATENTS = 0
STREAM_SC = 1
STREAM_NOISE = 2


@dataclass(frozen=True)
class GenParams:
    """
    Parameters of the latent model and the nonlinear observation map.

    noise_std_h is read as a standard deviation unless noise_is_variance is set.
    """

    s: float = 0.0
    d: int = 15
    betas: tuple = (2.0, 1.8, 1.5, 1.2)
    noise_std_h: float = 0.3
    noise_is_variance: bool = False
    flip_prob: float = 0.15
    sf_prob: float = 0.1
    nc_prob: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not 0.0 <= self.s < 1.0:
            raise ValueError(f"Spurious correlation level s must lie in [0, 1), got {self.s}.")
        if self.d < 3 or self.d % 3:
            raise ValueError(f"d must be a positive multiple of 3, got {self.d}.")
        if len(self.betas) != 4:
            raise ValueError(f"Exactly four betas are needed, got {len(self.betas)}.")
        if self.noise_std_h < 0.0:
            raise ValueError(f"noise_std_h must be nonnegative, got {self.noise_std_h}.")
        for name in ("flip_prob", "sf_prob", "nc_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}.")

    @property
    def noise_scale(self):
        return float(np.sqrt(self.noise_std_h)) if self.noise_is_variance else self.noise_std_h

    @property
    def modality_dim(self):
        return 8 * self.d // 3

    def to_header(self):
        """
        Return the parameters as ``key=value`` strings for file headers.
        """
        out = []
        for key, value in asdict(self).items():
            if key == "betas":
                value = ",".join(repr(b) for b in value)
            out.append(f"{key}={value}")
        return out

    @classmethod
    def from_header(cls, lines):
        """
        Rebuild parameters from ``key=value`` strings written by ``to_header``.
        """
        raw = dict(line.split("=", 1) for line in lines)
        return cls(
            s=float(raw["s"]),
            d=int(raw["d"]),
            betas=tuple(float(b) for b in raw["betas"].split(",")),
            noise_std_h=float(raw["noise_std_h"]),
            noise_is_variance=raw["noise_is_variance"] == "True",
            flip_prob=float(raw["flip_prob"]),
            sf_prob=float(raw["sf_prob"]),
            nc_prob=float(raw["nc_prob"]),
            seed=int(raw["seed"]),
        )


@dataclass
class GeneratorStreams:
    """
    Named random streams derived from one seed.
    """

    latents: np.random.Generator
    sc: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        return cls(
            latents=np.random.default_rng([seed, STREAM_LATENTS]),
            sc=np.random.default_rng([seed, STREAM_SC]),
            noise=np.random.default_rng([seed, STREAM_NOISE]),
        )


def split_seeds(seed):
    """
    Return disjoint (train, eval) seeds for one experiment seed.
    """
    return 2 * seed, 2 * seed + 1


@dataclass
class LatentRecord:
    """
    Ground-truth latents and outcome, as scalars for one sample or column arrays for many.
    """

    ns: np.ndarray
    sf: np.ndarray
    nc: np.ndarray
    sc: np.ndarray
    y: np.ndarray

    def __len__(self):
        return int(np.size(self.ns))

    def row(self, i):
        return LatentRecord(
            ns=int(self.ns[i]), sf=int(self.sf[i]), nc=int(self.nc[i]), sc=float(self.sc[i]), y=int(self.y[i])
        )

    def column(self, name):
        """
        Latent ``name`` as an nx1 float matrix.
        """
        return np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 1)

    def subset(self, indices):
        return LatentRecord(*(getattr(self, f)[indices] for f in ("ns", "sf", "nc", "sc", "y")))


@dataclass
class MultimodalSample:
    x1: np.ndarray
    x2: np.ndarray
    y: int
    latents: LatentRecord


@dataclass
class MultimodalDataset:
    """
    n samples of (X1, X2, Y) with their latents, row-aligned.
    """

    params: GenParams
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    latents: LatentRecord

    def __len__(self):
        return self.y.shape[0]

    def __getitem__(self, i):
        return MultimodalSample(x1=self.x1[i], x2=self.x2[i], y=int(self.y[i]), latents=self.latents.row(i))

    @property
    def modalities(self):
        return [self.x1, self.x2]

    def subset(self, indices):
        return MultimodalDataset(
            params=self.params,
            x1=self.x1[indices],
            x2=self.x2[indices],
            y=self.y[indices],
            latents=self.latents.subset(indices),
        )


def sample_latents(params, streams, n=1):
    """
    Draw n independent latent records.

    NS ~ B(0.5), Y = NS xor B(flip_prob), SF = 1 when NS = 1 else B(sf_prob), NC = I(NS = 1) * B(nc_prob) and
    SC = s * NS + (1 - s) * N(0, 1).
    """
    u = streams.latents.random((4, n))
    ns = (u[0] < 0.5).astype(np.int64)
    flip = (u[1] < params.flip_prob).astype(np.int64)
    y = ns ^ flip
    sf = np.where(ns == 1, 1, (u[2] < params.sf_prob).astype(np.int64))
    nc = ns * (u[3] < params.nc_prob).astype(np.int64)
    sc = params.s * ns + (1.0 - params.s) * streams.sc.standard_normal(n)
    return LatentRecord(ns=ns, sf=sf, nc=nc, sc=sc, y=y)


def build_h(latents, params, streams):
    """
    Stack each latent replicated d times and add Gaussian noise, giving an n x 4d matrix.
    """
    blocks = [np.repeat(latents.column(name), params.d, axis=1) for name in LATENT_NAMES]
    h = np.concatenate(blocks, axis=1)
    if params.noise_scale > 0.0:
        h = h + params.noise_scale * streams.noise.standard_normal(h.shape)
    return h


def split_blocks(h, d):
    """
    Split every d-wide latent block of h into thirds, routing first/middle/last thirds to z1/z2/z3.

    Works on the last axis, so a single 4d vector or an n x 4d matrix are both accepted.
    """
    if d < 3 or d % 3:
        raise ValueError(f"d must be a positive multiple of 3, got {d}.")
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != 4 * d:
        raise ValueError(f"h must have {4 * d} entries on its last axis, got {h.shape[-1]}.")

    third = d // 3
    parts = ([], [], [])
    for block in range(4):
        start = block * d
        for k in range(3):
            parts[k].append(h[..., start + k * third:start + (k + 1) * third])
    return tuple(np.concatenate(p, axis=-1) for p in parts)


def kappa(z, beta):
    return beta * np.tanh(z)


def make_modalities(z1, z2, z3, params):
    """
    X1 = kappa([z1, kappa(z2, b1)], b2) and X2 = kappa([z1, kappa(z3, b3)], b4).
    """
    z1, z2, z3 = (np.asarray(z, dtype=np.float64) for z in (z1, z2, z3))
    if not z1.shape == z2.shape == z3.shape:
        raise ValueError(f"z1, z2, z3 must have equal shapes, got {z1.shape}, {z2.shape}, {z3.shape}.")
    b1, b2, b3, b4 = params.betas
    x1 = kappa(np.concatenate([z1, kappa(z2, b1)], axis=-1), b2)
    x2 = kappa(np.concatenate([z1, kappa(z3, b3)], axis=-1), b4)
    return x1, x2


def generate_dataset(params, n):
    """
    Generate n i.i.d. samples, fully determined by params (seed included).
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}.")
    streams = GeneratorStreams.from_seed(params.seed)
    latents = sample_latents(params, streams, n)
    h = build_h(latents, params, streams)
    x1, x2 = make_modalities(*split_blocks(h, params.d), params)
    return MultimodalDataset(params=params, x1=x1, x2=x2, y=latents.y.copy(), latents=latents)


def generate_split(params, n_train, n_eval):
    """
    Train and eval datasets drawn from the disjoint substreams ``split_seeds(params.seed)``.
    """
    train_seed, eval_seed = split_seeds(params.seed)
    return (
        generate_dataset(replace(params, seed=train_seed), n_train),
        generate_dataset(replace(params, seed=eval_seed), n_eval),
    )
