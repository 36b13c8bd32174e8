"""Phase 1: backbone, instance head, clustering autoencoder and the joint contrastive objective."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .config import Config
from .data import AugmentParams, ImageDataset, augment_images
from .errors import ContractError, ConfigError, DegenerateInputError, DimensionError, NonFiniteError, TrainingDivergence
from .layers import Conv, Dense, named
from .optim import Adam
from .tensor import Parameter, Tensor

STAGE_CHANNELS = (8, 16)


class Backbone:
    """Two conv(3×3)+ReLU+maxpool stages (3→8→16 channels) and a dense ReLU layer to ``embed_dim``."""

    def __init__(self, image_size: int, embed_dim: int, rng: np.random.Generator, in_channels: int = 3):
        self.image_size = image_size
        self.in_channels = in_channels
        c1, c2 = STAGE_CHANNELS
        self.conv1 = Conv("backbone.conv1", in_channels, c1, 3, rng)
        self.conv2 = Conv("backbone.conv2", c1, c2, 3, rng)
        side = (image_size - 2) // 2
        side = (side - 2) // 2
        if side < 1:
            raise ConfigError(f"image size {image_size} too small for two conv stages")
        self.fc = Dense("backbone.fc", c2 * side * side, embed_dim, rng)

    def __call__(self, images) -> Tensor:
        x = T.as_tensor(images)
        if x.ndim != 4 or x.shape[1:] != (self.in_channels, self.image_size, self.image_size):
            raise DimensionError(
                f"backbone expects N×{self.in_channels}×{self.image_size}×{self.image_size} input, got {x.shape}"
            )
        x = T.maxpool2d(T.relu(self.conv1(x)))
        x = T.maxpool2d(T.relu(self.conv2(x)))
        return T.relu(self.fc(T.flatten(x)))

    def parameters(self) -> list[Parameter]:
        return self.conv1.parameters() + self.conv2.parameters() + self.fc.parameters()


class IsmHead:
    def __init__(self, embed_dim: int, proj_dim: int, rng: np.random.Generator):
        self.fc1 = Dense("ism.fc1", embed_dim, embed_dim, rng)
        self.fc2 = Dense("ism.fc2", embed_dim, proj_dim, rng)

    def __call__(self, z: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(z)))

    def parameters(self) -> list[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters()


class AutoEncoder:
    """Dense encoder d→h1→…→K and its mirror image decoder.

    Hidden layers use ReLU; the bottleneck and the decoder output are linear.
    """

    def __init__(self, input_dim: int, hidden: tuple[int, ...], num_clusters: int, rng: np.random.Generator):
        widths = (input_dim, *hidden, num_clusters)
        self.widths = widths
        self.encoder = [Dense(f"ae.enc{i}", widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]
        back = widths[::-1]
        self.decoder = [Dense(f"ae.dec{i}", back[i], back[i + 1], rng) for i in range(len(back) - 1)]

    def encode(self, h0: Tensor) -> list[Tensor]:
        """Every encoder activation H^(1) … H^(L); the last one is pre-softmax."""
        if h0.ndim != 2 or h0.shape[1] != self.widths[0]:
            raise DimensionError(f"encoder expects width {self.widths[0]}, got shape {h0.shape}")
        hs = []
        h = h0
        last = len(self.encoder) - 1
        for i, layer in enumerate(self.encoder):
            h = layer(h)
            if i < last:
                h = T.relu(h)
            hs.append(h)
        return hs

    def decode(self, code: Tensor) -> Tensor:
        if code.ndim != 2 or code.shape[1] != self.widths[-1]:
            raise DimensionError(f"decoder expects width {self.widths[-1]}, got shape {code.shape}")
        h = code
        last = len(self.decoder) - 1
        for i, layer in enumerate(self.decoder):
            h = layer(h)
            if i < last:
                h = T.relu(h)
        return h

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.encoder + self.decoder for p in layer.parameters()]


class Phase1Model:
    def __init__(self, config: Config, image_size: int, num_clusters: int, seed: int | None = None):
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self.backbone = Backbone(image_size, config.embed_dim, rng)
        self.ism = IsmHead(config.embed_dim, config.proj_dim, rng)
        self.autoencoder = AutoEncoder(config.embed_dim, config.ae_hidden, num_clusters, rng)

    def parameters(self) -> list[Parameter]:
        return self.backbone.parameters() + self.ism.parameters() + self.autoencoder.parameters()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in named(self.parameters()).items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in named(self.parameters()).items():
            if name not in state:
                raise DimensionError(f"checkpoint is missing parameter {name!r}")
            if state[name].shape != p.shape:
                raise DimensionError(f"parameter {name!r}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
            p.zero_grad()


# losses -------------------------------------------------------------------------


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        raise DegenerateInputError("cosine similarity of a near-zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _pair_contrast(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """Mean NT-Xent-style loss over all 2n anchors of two aligned row sets.

    The denominator for anchor a_i runs over every j of both views, the
    j = i same-view term included. Similarities are shifted by their upper
    bound 1/tau before exponentiation.
    """
    n = a.shape[0]
    inv = 1.0 / tau
    a = T.l2_normalize_rows(a)
    b = T.l2_normalize_rows(b)
    s_ab = T.matmul(a, T.transpose(b))
    s_aa = T.matmul(a, T.transpose(a))
    s_bb = T.matmul(b, T.transpose(b))
    s_ba = T.transpose(s_ab)

    def log_den(s_same, s_cross):
        e_same = T.sum(T.exp(T.mul(s_same, inv) - inv), axis=1)
        e_cross = T.sum(T.exp(T.mul(s_cross, inv) - inv), axis=1)
        return T.sum(T.log(e_same + e_cross))

    positives = T.mul(T.sum(T.mul(a, b)), inv)
    total = log_den(s_aa, s_ab) + log_den(s_bb, s_ba) + 2.0 * n * inv - 2.0 * positives
    return T.mul(total, 1.0 / (2 * n))


def instance_contrastive_loss(m_a: Tensor, m_b: Tensor, tau_i: float) -> Tensor:
    if tau_i <= 0:
        raise ConfigError(f"tau_i must be positive, got {tau_i}")
    m_a, m_b = T.as_tensor(m_a), T.as_tensor(m_b)
    if m_a.shape != m_b.shape or m_a.ndim != 2 or m_a.shape[0] < 1:
        raise DimensionError(f"instance loss needs matching N×d views, got {m_a.shape} and {m_b.shape}")
    return _pair_contrast(m_a, m_b, tau_i)


def cluster_entropy(w: Tensor) -> Tensor:
    """Entropy of the column means of a row-stochastic matrix, with 0·ln 0 = 0."""
    p = T.mean(T.as_tensor(w), axis=0)
    # empty columns are lifted to 1 inside the log; their term is still weighted by 0
    lifted = T.add(p, Tensor((p.data <= 0).astype(np.float64)))
    return T.neg(T.sum(T.mul(p, T.log(lifted))))


def _check_stochastic(w: Tensor, name: str) -> None:
    if w.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got {w.shape}")
    if (w.data < 0).any() or np.abs(w.data.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
        raise ContractError(f"{name} rows must be nonnegative and sum to 1 within 1e-9")
    if (np.linalg.norm(w.data, axis=0) < 1e-12).any():
        raise DegenerateInputError(f"{name} has an all-zero column")


def cluster_contrastive_loss(w_a: Tensor, w_b: Tensor, tau_c: float) -> Tensor:
    if tau_c <= 0:
        raise ConfigError(f"tau_c must be positive, got {tau_c}")
    w_a, w_b = T.as_tensor(w_a), T.as_tensor(w_b)
    if w_a.shape != w_b.shape:
        raise DimensionError(f"cluster loss needs matching views, got {w_a.shape} and {w_b.shape}")
    _check_stochastic(w_a, "W_a")
    _check_stochastic(w_b, "W_b")
    contrast = _pair_contrast(T.transpose(w_a), T.transpose(w_b), tau_c)
    return contrast - cluster_entropy(w_a) - cluster_entropy(w_b)


def instance_reconstruction_loss(z_a: Tensor, z_b: Tensor, z_a_hat: Tensor, z_b_hat: Tensor) -> Tensor:
    z_a, z_b, z_a_hat, z_b_hat = (T.as_tensor(v) for v in (z_a, z_b, z_a_hat, z_b_hat))
    for x, y in ((z_a, z_a_hat), (z_b, z_b_hat), (z_a, z_b)):
        if x.shape != y.shape:
            raise DimensionError(f"reconstruction shapes differ: {x.shape} vs {y.shape}")
    n = z_a.shape[0]
    err = T.sum(T.square(z_a - z_a_hat)) + T.sum(T.square(z_b - z_b_hat))
    return T.mul(err, 1.0 / (2 * n))


@dataclass
class LossReport:
    cis_loss: float
    ccs_loss: float
    re_loss: float
    total: float
    epoch: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def l1_total(cis, ccs, re):
    """Unweighted sum of the three phase-1 losses (floats or tensors)."""
    return cis + ccs + re


# training -----------------------------------------------------------------------


@dataclass
class Phase1Forward:
    cis: Tensor | None
    ccs: Tensor | None
    re: Tensor
    total: Tensor


def _guard(component: str, fn):
    try:
        out = fn()
    except NonFiniteError as exc:
        raise TrainingDivergence(component, float("nan")) from exc
    if not np.isfinite(out.data).all():
        raise TrainingDivergence(component, float(out.data))
    return out


def phase1_objective(model: Phase1Model, view_a: np.ndarray, view_b: np.ndarray, config: Config) -> Phase1Forward:
    z_a = _guard("backbone", lambda: model.backbone(view_a))
    z_b = _guard("backbone", lambda: model.backbone(view_b))
    ae = model.autoencoder
    code_a = ae.encode(z_a)[-1]
    code_b = ae.encode(z_b)[-1]
    cis = ccs = None
    terms = []
    if config.use_cis:
        cis = _guard("cis_loss", lambda: instance_contrastive_loss(model.ism(z_a), model.ism(z_b), config.tau_i))
        terms.append(cis)
    if config.use_ccs:
        ccs = _guard(
            "ccs_loss",
            lambda: cluster_contrastive_loss(T.row_softmax(code_a), T.row_softmax(code_b), config.tau_c),
        )
        terms.append(ccs)
    re = _guard("re_loss", lambda: instance_reconstruction_loss(z_a, z_b, ae.decode(code_a), ae.decode(code_b)))
    total = re
    for t in terms:
        total = t + total
    return Phase1Forward(cis=cis, ccs=ccs, re=re, total=total)


def batch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


def train_phase1_epoch(
    model: Phase1Model,
    optimizer: Adam,
    dataset: ImageDataset,
    config: Config,
    epoch: int,
    augment_params: AugmentParams = AugmentParams(),
) -> LossReport:
    """One pass over ``dataset`` in shuffled mini-batches, one Adam step per batch."""
    order = batch_order(len(dataset), epoch, config.seed)
    aug_rng = np.random.default_rng([config.seed, 2, epoch])
    sums = np.zeros(4)
    batches = 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        view_a, view_b = augment_images(dataset.images[idx], aug_rng, augment_params)
        out = phase1_objective(model, view_a, view_b, config)
        optimizer.zero_grad()
        T.backward(out.total)
        optimizer.step()
        sums += [
            out.cis.item() if out.cis is not None else 0.0,
            out.ccs.item() if out.ccs is not None else 0.0,
            out.re.item(),
            out.total.item(),
        ]
        batches += 1
    cis, ccs, re, _ = (float(v) for v in sums / max(batches, 1))
    return LossReport(cis_loss=cis, ccs_loss=ccs, re_loss=re, total=l1_total(cis, ccs, re), epoch=epoch)


def train_phase1(model: Phase1Model, dataset: ImageDataset, config: Config, log=None) -> list[LossReport]:
    optimizer = Adam(model.parameters(), lr=config.lr)
    reports = []
    for epoch in range(1, config.epochs + 1):
        report = train_phase1_epoch(model, optimizer, dataset, config, epoch)
        reports.append(report)
        if log is not None:
            log({"phase": 1, **report.as_dict()})
    return reports


def extract_features(backbone: Backbone, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Backbone features for un-augmented images, computed without a tape."""
    chunks = [backbone(Tensor(images[i : i + batch])).data for i in range(0, len(images), batch)]
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, backbone.fc.n_out))
