"""
Per-round property detectors M_r = h_r(g_r(x)).

g_r(x) = alpha_r^T x is a strictly linear feature map (no bias), and
h_r(u) = sigmoid(c^T u + beta_r) carries the bias. Detectors are trained on
updates the attacker computes itself from auxiliary data and the round's model
snapshot. The class-conditional feature densities are approximated by
Gaussians; their overlap coefficient (OVL) gives the round weight v_r = 1 - OVL,
which equals the best achievable Youden index of a threshold on the feature
when the densities cross once.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy import integrate
from scipy.stats import norm

from .classifier import GlobalModel
from .config import DEFAULT_TRAIN_FRACTION, OVL_SIGMA_SPAN, SIGMA_FLOOR, PropertyKind
from .data import ClientDataset
from .errors import DimensionError, DivergenceError
from .fedsim import local_update

logger = logging.getLogger(__name__)

DEFAULT_DETECTOR_EPOCHS = 200
DEFAULT_DETECTOR_L2 = 1e-2
STOP_TOLERANCE = 1e-10


@dataclass
class LabeledUpdateSet:
    """Updates labelled positive (1) or negative (0), split into train and eval by pairs."""
    updates: np.ndarray = field(repr=False)
    labels: np.ndarray
    train_mask: np.ndarray

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.updates[self.train_mask], self.labels[self.train_mask]

    @property
    def eval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.updates[~self.train_mask], self.labels[~self.train_mask]


@dataclass
class DetectorModel:
    round_index: int
    alpha: np.ndarray  # z x t
    head: np.ndarray  # t
    beta: float
    losses: list[float] = field(default_factory=list, repr=False)  # training loss per epoch

    @property
    def feature_count(self) -> int:
        return int(self.alpha.shape[1])


@dataclass
class FeatureDistributions:
    """Gaussian fits of the detector feature for positive and negative updates."""
    round_index: int
    mu_plus: np.ndarray
    sigma_plus: np.ndarray
    mu_minus: np.ndarray
    sigma_minus: np.ndarray
    ovl_per_feature: np.ndarray

    @property
    def ovl(self) -> float:
        return float(np.mean(self.ovl_per_feature))

    @property
    def weight(self) -> float:
        return 1.0 - self.ovl


def build_training_set(
    aux: ClientDataset,
    snapshot: GlobalModel,
    kind: PropertyKind,
    eta: float,
    batch_size: int,
    count: int,
    seed,
    target: Optional[tuple[np.ndarray, int]] = None,
    samples_per_update: Optional[int] = None,
    epochs: int = 1,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
) -> LabeledUpdateSet:
    """
    Simulate `count` local updates from auxiliary batches, half with the property.

    Each positive is paired with a negative from the same batch: membership
    adds the target to the batch, inversion negates the honest update and
    ascent flips the step sign. The train/eval split keeps pairs together.
    """
    if count < 2 or count % 2:
        raise ValueError(f"update count must be even and at least 2, got {count}")
    samples_per_update = samples_per_update or batch_size
    if len(aux) < samples_per_update:
        raise DimensionError(
            f"auxiliary pool has {len(aux)} samples, each update needs {samples_per_update}"
        )
    if kind is PropertyKind.MEMBERSHIP and target is None:
        raise ValueError("membership detection needs the target sample")

    rng = np.random.default_rng(seed)
    pairs = count // 2
    rows = []
    for pair in range(pairs):
        picked = rng.choice(len(aux), size=samples_per_update, replace=False)
        batch = ClientDataset(client_id=-1, features=aux.features[picked], labels=aux.labels[picked])
        pass_seed = rng.integers(0, 2**63 - 1)
        negative = local_update(snapshot, batch, eta, epochs, batch_size, pass_seed)
        if kind is PropertyKind.MEMBERSHIP:
            positive = local_update(snapshot, batch.with_sample(*target), eta, epochs, batch_size, pass_seed)
        elif kind is PropertyKind.INVERSION:
            positive = -negative
        else:
            positive = local_update(snapshot, batch, eta, epochs, batch_size, pass_seed, ascent=True)
        rows.extend([positive, negative])

    train_pairs = int(round(train_fraction * pairs))
    train_pair_mask = np.zeros(pairs, dtype=bool)
    train_pair_mask[rng.permutation(pairs)[:train_pairs]] = True
    return LabeledUpdateSet(
        updates=np.vstack(rows),
        labels=np.tile([1, 0], pairs),
        train_mask=np.repeat(train_pair_mask, 2),
    )


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (X - mean) / std, mean, std


def train_detector(
    dataset: LabeledUpdateSet,
    round_index: int = 0,
    eta_detector: Optional[float] = None,
    epochs: int = DEFAULT_DETECTOR_EPOCHS,
    seed=None,
    feature_count: int = 1,
    l2: float = DEFAULT_DETECTOR_L2,
) -> DetectorModel:
    """
    Full-batch logistic regression on standardised updates, folded back to
    raw coordinates so that g_r stays bias-free.

    Without an explicit eta the step is 1/L for the smoothness constant L of
    the (convex, t = 1) loss, so the training loss decreases every epoch.
    Training stops early once an epoch improves the loss by less than 1e-10.
    """
    X, y = dataset.train
    labels = np.asarray(y)
    if labels.sum() == 0 or labels.sum() == labels.shape[0]:
        raise ValueError("detector training needs both classes")
    Xs, mean, std = _standardize(X)
    m, z = Xs.shape

    if eta_detector is None:
        augmented = np.hstack([Xs, np.ones((m, 1))])
        smoothness = np.linalg.norm(augmented, 2) ** 2 / (4.0 * m) + l2
        eta_detector = 1.0 / smoothness

    generator = torch.Generator().manual_seed(int(np.random.default_rng(seed).integers(0, 2**31 - 1)))
    inputs = torch.as_tensor(Xs, dtype=torch.float64)
    targets = torch.as_tensor(labels, dtype=torch.float64)

    if feature_count == 1:
        weights = torch.zeros((z, 1), dtype=torch.float64, requires_grad=True)
        head = torch.ones(1, dtype=torch.float64)
        params = [weights]
    else:
        weights = (torch.randn((z, feature_count), generator=generator, dtype=torch.float64) / np.sqrt(z)).requires_grad_()
        head = (torch.randn(feature_count, generator=generator, dtype=torch.float64) / np.sqrt(feature_count)).requires_grad_()
        params = [weights, head]
    bias = torch.zeros(1, dtype=torch.float64, requires_grad=True)
    params.append(bias)

    previous = np.inf
    losses = []
    for epoch in range(epochs):
        logits = (inputs @ weights) @ head + bias
        loss = F.binary_cross_entropy_with_logits(logits, targets) + 0.5 * l2 * (weights ** 2).sum()
        value = float(loss.item())
        if not np.isfinite(value):
            raise DivergenceError(f"round {round_index}: non-finite detector loss at epoch {epoch}", stage="detector")
        losses.append(value)
        if previous - value < STOP_TOLERANCE:
            break
        previous = value
        for param in params:
            param.grad = None
        loss.backward()
        with torch.no_grad():
            for param in params:
                param -= eta_detector * param.grad

    w = weights.detach().numpy()
    c = head.detach().numpy().reshape(-1)
    alpha = w / std[:, None]
    beta = float(bias.item()) - float((mean @ alpha) @ c)
    logger.debug(f"Round {round_index}: detector trained, |alpha| = {np.linalg.norm(alpha):.4g}, beta = {beta:.4g}")
    return DetectorModel(round_index=round_index, alpha=alpha, head=c.copy(), beta=beta, losses=losses)


def extract_feature(detector: DetectorModel, x) -> np.ndarray:
    """g_r(x) = alpha^T x; rows of a 2-D input are treated as separate updates."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != detector.alpha.shape[0]:
        raise DimensionError(f"update has {x.shape[-1]} coordinates, detector expects {detector.alpha.shape[0]}")
    return x @ detector.alpha


def link(detector: DetectorModel, features) -> np.ndarray:
    """h_r(u) = sigmoid(c^T u + beta)."""
    u = np.asarray(features, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-(u @ detector.head + detector.beta)))


def confidence(detector: DetectorModel, x) -> np.ndarray:
    """Full model output M_r(x)."""
    return link(detector, extract_feature(detector, x))


def compute_ovl(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """Area under min(pdf1, pdf2) for two normal densities, clamped to [0, 1]."""
    values = np.array([mu1, sigma1, mu2, sigma2], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite distribution parameters {values.tolist()}")
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")

    span = OVL_SIGMA_SPAN * max(sigma1, sigma2)
    lower, upper = min(mu1, mu2) - span, max(mu1, mu2) + span

    # Points where the densities cross; the integrand has kinks there.
    a = 1.0 / (2 * sigma1**2) - 1.0 / (2 * sigma2**2)
    b = mu2 / sigma2**2 - mu1 / sigma1**2
    c = mu1**2 / (2 * sigma1**2) - mu2**2 / (2 * sigma2**2) + np.log(sigma1 / sigma2)
    if abs(a) > 1e-15:
        crossings = np.roots([a, b, c])
        crossings = crossings[np.isreal(crossings)].real
    elif abs(b) > 1e-15:
        crossings = np.array([-c / b])
    else:
        crossings = np.array([])
    points = [float(p) for p in crossings if lower < p < upper]

    def overlap(x):
        return min(norm.pdf(x, mu1, sigma1), norm.pdf(x, mu2, sigma2))

    value, _ = integrate.quad(overlap, lower, upper, points=points or None, limit=200)
    return float(np.clip(value, 0.0, 1.0))


def fit_distributions(detector: DetectorModel, updates, labels) -> FeatureDistributions:
    """Per-class mean and sample std of g_r on held-out updates, std floored at 1e-6."""
    labels = np.asarray(labels).reshape(-1)
    features = extract_feature(detector, updates)
    if features.ndim == 1:
        features = features.reshape(-1, 1)
    positive = features[labels == 1]
    negative = features[labels == 0]
    if positive.shape[0] < 2 or negative.shape[0] < 2:
        raise ValueError(
            f"round {detector.round_index}: need two samples per class, got "
            f"{positive.shape[0]} positive and {negative.shape[0]} negative"
        )

    mu_plus, mu_minus = positive.mean(axis=0), negative.mean(axis=0)
    sigma_plus = np.maximum(positive.std(axis=0, ddof=1), SIGMA_FLOOR)
    sigma_minus = np.maximum(negative.std(axis=0, ddof=1), SIGMA_FLOOR)
    ovl = np.array([
        compute_ovl(mu_plus[k], sigma_plus[k], mu_minus[k], sigma_minus[k])
        for k in range(features.shape[1])
    ])
    return FeatureDistributions(
        round_index=detector.round_index,
        mu_plus=mu_plus,
        sigma_plus=sigma_plus,
        mu_minus=mu_minus,
        sigma_minus=sigma_minus,
        ovl_per_feature=ovl,
    )
