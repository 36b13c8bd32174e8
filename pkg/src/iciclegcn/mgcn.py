"""Phase 2: the autoencoder plus two fused GCN streams, trained by KL self-training."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .config import Config
from .contrastive import AutoEncoder
from .errors import ConfigError, DegenerateInputError, DimensionError, DomainError, NonFiniteError, TrainingDivergence
from .graph import NormalizedAdjacency
from .kmeans import kmeans
from .layers import xavier_uniform
from .optim import Adam
from .tensor import Parameter, Tensor

ROWSUM_TOL = 1e-9


class GcnStream:
    """Weight matrices for one GCN stream, with widths copied from the encoder."""

    def __init__(self, name: str, widths: tuple[int, ...], rng: np.random.Generator):
        self.weights = [
            Parameter(xavier_uniform((widths[i], widths[i + 1]), rng), f"{name}.W{i}") for i in range(len(widths) - 1)
        ]

    def parameters(self) -> list[Parameter]:
        return list(self.weights)


def gcn_layer(adj, x: Tensor, w: Tensor, activate: bool = True) -> Tensor:
    a = adj.matrix if isinstance(adj, NormalizedAdjacency) else adj
    a = T.as_tensor(a)
    if a.shape[1] != x.shape[0]:
        raise DimensionError(f"adjacency {a.shape} does not match {x.shape[0]} node rows")
    out = T.matmul(a, T.matmul(x, w))
    return T.relu(out) if activate else out


def fuse_representations(g_a: Tensor, g_b: Tensor, h: Tensor, sigma: float, gamma: float) -> tuple[Tensor, Tensor]:
    if sigma < 0 or gamma < 0 or sigma + gamma > 1 + 1e-12:
        raise ConfigError(f"fusion needs sigma, gamma >= 0 and sigma + gamma <= 1, got {sigma}, {gamma}")
    if not g_a.shape == g_b.shape == h.shape:
        raise DimensionError(f"fusion inputs differ in shape: {g_a.shape}, {g_b.shape}, {h.shape}")
    rest = 1.0 - sigma - gamma
    fused_a = T.mul(g_a, sigma) + T.mul(g_b, gamma) + T.mul(h, rest)
    fused_b = T.mul(g_b, sigma) + T.mul(g_a, gamma) + T.mul(h, rest)
    return fused_a, fused_b


class TridentModel:
    """Shared autoencoder, GCN stream(s) over fixed graphs, and cluster centers.

    With ``config.streams == "single"`` only stream ``a`` exists and it is
    fused with itself in place of the second stream.
    """

    def __init__(
        self,
        autoencoder: AutoEncoder,
        adj_a: NormalizedAdjacency,
        adj_b: NormalizedAdjacency | None,
        centers: np.ndarray,
        config: Config,
        seed: int | None = None,
    ):
        rng = np.random.default_rng([config.seed if seed is None else seed, 3])
        self.config = config
        self.autoencoder = autoencoder
        widths = autoencoder.widths
        self.adj_a = Tensor(adj_a.matrix)
        self.stream_a = GcnStream("mgcn.stream_a", widths, rng)
        if config.streams == "two":
            if adj_b is None:
                raise ConfigError("two-stream model needs two graphs")
            if adj_b.matrix.shape != adj_a.matrix.shape:
                raise DimensionError("both graphs must cover the same nodes")
            self.adj_b = Tensor(adj_b.matrix)
            self.stream_b = GcnStream("mgcn.stream_b", widths, rng)
        else:
            self.adj_b = None
            self.stream_b = None
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (widths[-1], widths[-1]):
            raise DimensionError(f"centers must be K×K with K={widths[-1]}, got {centers.shape}")
        self.centers = Parameter(centers, "mgcn.centers")

    @property
    def two_streams(self) -> bool:
        return self.stream_b is not None

    def parameters(self) -> list[Parameter]:
        params = self.autoencoder.parameters() + self.stream_a.parameters()
        if self.stream_b is not None:
            params += self.stream_b.parameters()
        return params + [self.centers]


@dataclass
class TridentOutput:
    hidden: list[Tensor]
    z_hat: Tensor
    logits_a: Tensor
    logits_b: Tensor | None
    gs_a: Tensor
    gs_b: Tensor | None


def trident_forward(model: TridentModel, z_b) -> TridentOutput:
    z_b = T.as_tensor(z_b)
    cfg = model.config
    ae = model.autoencoder
    hs = ae.encode(z_b)
    z_hat = ae.decode(hs[-1])

    wa = model.stream_a.weights
    wb = model.stream_b.weights if model.two_streams else wa
    adj_b = model.adj_b if model.two_streams else model.adj_a
    depth = len(wa)
    g_a = gcn_layer(model.adj_a, z_b, wa[0], activate=depth > 1)
    g_b = gcn_layer(adj_b, z_b, wb[0], activate=depth > 1) if model.two_streams else g_a
    for layer in range(1, depth):
        fused_a, fused_b = fuse_representations(g_a, g_b, hs[layer - 1], cfg.sigma, cfg.gamma)
        last = layer == depth - 1
        g_a = gcn_layer(model.adj_a, fused_a, wa[layer], activate=not last)
        g_b = gcn_layer(adj_b, fused_b, wb[layer], activate=not last) if model.two_streams else g_a

    gs_a = T.row_softmax(g_a)
    if model.two_streams:
        return TridentOutput(hs, z_hat, g_a, g_b, gs_a, T.row_softmax(g_b))
    return TridentOutput(hs, z_hat, g_a, None, gs_a, None)


def mgcn_reconstruction_loss(z_b, z_hat: Tensor) -> Tensor:
    z_b = T.as_tensor(z_b)
    if z_b.shape != z_hat.shape:
        raise DimensionError(f"reconstruction shapes differ: {z_b.shape} vs {z_hat.shape}")
    return T.mul(T.sum(T.square(z_b - z_hat)), 1.0 / z_b.shape[0])


# self-training distributions ---------------------------------------------------------


def student_t_assignment(h: Tensor, centers: Tensor, t_dof: float = 1.0) -> Tensor:
    if t_dof <= 0:
        raise ConfigError(f"t_dof must be positive, got {t_dof}")
    d2 = T.sq_dist(T.as_tensor(h), T.as_tensor(centers))
    kernel = T.power(T.mul(d2, 1.0 / t_dof) + 1.0, -(t_dof + 1.0) / 2.0)
    return T.row_normalize(kernel)


@dataclass
class TargetDistribution:
    p: np.ndarray
    freq: np.ndarray


def target_distribution(q) -> TargetDistribution:
    q = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    freq = q.sum(axis=0)
    if (freq <= 0).any():
        raise DegenerateInputError(f"cluster {int(np.argmin(freq))} has zero soft frequency")
    w = q * q / freq
    return TargetDistribution(p=w / w.sum(axis=1, keepdims=True), freq=freq)


def _kl_constant(p: np.ndarray) -> float:
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos])))


def kl_divergence(p, r) -> Tensor:
    """KL(P ‖ R) summed over all rows, with 0·ln 0 = 0; differentiable in ``r``."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    r = T.as_tensor(r)
    if p.shape != r.shape:
        raise DimensionError(f"KL operands differ in shape: {p.shape} vs {r.shape}")
    support = p > 0
    if (r.data[support] <= 0).any():
        raise DomainError("KL divergence: R vanishes where P has mass")
    # zero entries of R outside the support of P are lifted to 1; their log is weighted by 0
    safe = T.add(r, Tensor(np.where(~support & (r.data <= 0), 1.0 - r.data, 0.0)))
    cross = T.sum(T.mul(T.log(safe), Tensor(p)))
    return T.neg(cross) + _kl_constant(p)


def kl_divergence_logits(p: np.ndarray, logits: Tensor) -> Tensor:
    """KL(P ‖ softmax(logits)) computed through a log-softmax."""
    cross = T.sum(T.mul(T.log_row_softmax(logits), Tensor(p)))
    return T.neg(cross) + _kl_constant(p)


def l2_total(re, cluster, kl_a, kl_b, alpha: float, beta: float, eta: float):
    if min(alpha, beta, eta) < 0:
        raise ConfigError("loss weights must be nonnegative")
    return re + cluster * alpha + kl_a * beta + kl_b * eta


def kmeans_init_centers(h: np.ndarray, k: int, seed: int) -> np.ndarray:
    centers, _, _ = kmeans(h, k, seed=seed)
    return centers


def assign_clusters(gs_a, gs_b=None) -> np.ndarray:
    """Argmax of the averaged stream distributions; ties go to the lower index."""
    a = gs_a.data if isinstance(gs_a, Tensor) else np.asarray(gs_a)
    if gs_b is None:
        return a.argmax(axis=1)
    b = gs_b.data if isinstance(gs_b, Tensor) else np.asarray(gs_b)
    return ((a + b) / 2.0).argmax(axis=1)


# training loop --------------------------------------------------------------------------


@dataclass
class Phase2Report:
    iteration: int
    re_loss: float
    cluster_loss: float
    kl_a: float
    kl_b: float
    total: float
    rowsum_violations: int

    def as_dict(self) -> dict:
        return asdict(self)


def rowsum_violations(*mats) -> int:
    count = 0
    for m in mats:
        if m is None:
            continue
        arr = m.data if isinstance(m, Tensor) else m
        count += int(np.sum(np.abs(arr.sum(axis=1) - 1.0) > ROWSUM_TOL))
    return count


def _guarded(component: str, iteration: int, fn):
    try:
        out = fn()
    except NonFiniteError as exc:
        raise TrainingDivergence(component, float("nan"), iteration) from exc
    return out


@dataclass
class Phase2Step:
    out: TridentOutput
    q: Tensor
    target: TargetDistribution
    re: Tensor
    cluster: Tensor
    kl_a: Tensor
    kl_b: Tensor | None
    total: Tensor


def phase2_objective(
    model: TridentModel, z_b, iteration: int = 0, target: TargetDistribution | None = None
) -> Phase2Step:
    """L2 for one full-batch pass. P is derived from the current Q unless ``target`` pins it."""
    cfg = model.config
    out = _guarded("trident_forward", iteration, lambda: trident_forward(model, z_b))
    q = _guarded("student_t", iteration, lambda: student_t_assignment(out.hidden[-1], model.centers, cfg.t_dof))
    if target is None:
        target = target_distribution(q)
    re = _guarded("mgcn_re_loss", iteration, lambda: mgcn_reconstruction_loss(z_b, out.z_hat))
    cluster = _guarded("cluster_loss", iteration, lambda: kl_divergence(target.p, q))
    kl_a = _guarded("mgcn_a_loss", iteration, lambda: kl_divergence_logits(target.p, out.logits_a))
    kl_b = None
    if out.logits_b is not None:
        kl_b = _guarded("mgcn_b_loss", iteration, lambda: kl_divergence_logits(target.p, out.logits_b))
    if cfg.kl_reduction == "mean":
        n = 1.0 / z_b.shape[0]
        cluster, kl_a = T.mul(cluster, n), T.mul(kl_a, n)
        kl_b = T.mul(kl_b, n) if kl_b is not None else None
    total = l2_total(re, cluster, kl_a, kl_b if kl_b is not None else 0.0, cfg.alpha, cfg.beta, cfg.eta)
    return Phase2Step(out, q, target, re, cluster, kl_a, kl_b, total)


def train_phase2_iteration(model: TridentModel, z_b, optimizer: Adam, iteration: int) -> Phase2Report:
    """Full-batch forward, P from the current Q (held constant), one Adam step."""
    step = phase2_objective(model, z_b, iteration)
    optimizer.zero_grad()
    T.backward(step.total)
    optimizer.step()
    violations = rowsum_violations(step.q, step.target.p, step.out.gs_a, step.out.gs_b)
    return Phase2Report(
        iteration=iteration,
        re_loss=step.re.item(),
        cluster_loss=step.cluster.item(),
        kl_a=step.kl_a.item(),
        kl_b=step.kl_b.item() if step.kl_b is not None else 0.0,
        total=step.total.item(),
        rowsum_violations=violations,
    )


def train_phase2(model: TridentModel, z_b: np.ndarray, log=None) -> list[Phase2Report]:
    optimizer = Adam(model.parameters(), lr=model.config.lr)
    z_b = Tensor(z_b)
    reports = []
    for it in range(1, model.config.n_it + 1):
        report = train_phase2_iteration(model, z_b, optimizer, it)
        reports.append(report)
        if log is not None:
            log({"phase": 2, **report.as_dict()})
    return reports


def predict(model: TridentModel, z_b: np.ndarray) -> np.ndarray:
    out = trident_forward(model, Tensor(z_b))
    return assign_clusters(out.gs_a, out.gs_b)
