"""Deterministic segmentation network and its training loop.

Architecture (all convs 3x3, same padding, biased):

    stage1 = relu(conv1(x))            [w1, H, W]
    stage2 = relu(conv2(pool2x(stage1)))   [w2, H/2, W/2]
    z      = conv3(concat(upsample2x(stage2), stage1))   [D, H, W]

Per-pixel class probabilities are softmax(W @ z) with a bias-free 4xD
head matrix whose rows double as class template vectors.  Activations use
the [C, N, H, W] layout internally; images enter as [N, H, W] crops in
[0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .layers import (Conv2d, pool2x_batch, pool2x_batch_backward, relu_batch,
                     relu_batch_backward, softmax_rows, upsample2x_batch,
                     upsample2x_batch_backward)
from .metrics import confusion_matrix, metrics_from_confusion
from .optim import SgdMomentum, clip_grad_norm
from .rng import Rng

N_CLASSES = 4


@dataclass
class StageFeatures:
    """Backbone activations for a batch: two stage maps plus the latent z."""
    stage1: np.ndarray      # [w1, N, H, W]
    stage2: np.ndarray      # [w2, N, H/2, W/2]
    z: np.ndarray           # [D,  N, H, W]


class SegModel:
    """Backbone parameters plus the 4xD class head."""

    def __init__(self, config: RunConfig):
        self.config = config
        w1, w2 = config.widths
        self.conv1 = Conv2d("conv1", 1, w1)
        self.conv2 = Conv2d("conv2", w1, w2)
        self.conv3 = Conv2d("conv3", w1 + w2, config.d)
        self.head = np.zeros((N_CLASSES, config.d))
        self._cache: dict = {}

    def init_params(self, rng: Rng) -> None:
        """He fan-in init for convs (zero biases), then the head matrix.

        The head starts small (std 0.1) so early logits stay near zero and
        the summed-over-pixels loss does not blow up the first steps.
        """
        self.conv1.init_he(rng)
        self.conv2.init_he(rng)
        self.conv3.init_he(rng)
        self.head = rng.normal_array(N_CLASSES * self.config.d, 0.0, 0.1)\
            .reshape(N_CLASSES, self.config.d)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.conv1.params())
        out.update(self.conv2.params())
        out.update(self.conv3.params())
        out["head"] = self.head
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        self.conv1.set_params(values)
        self.conv2.set_params(values)
        self.conv3.set_params(values)
        self.head = values["head"].reshape(self.head.shape).copy()

    # -- forward / backward -------------------------------------------

    def forward_batch(self, images: np.ndarray, keep_cache: bool = False) -> StageFeatures:
        """images [N, H, W] -> StageFeatures.  Cache retained for backward.

        Crops arrive in [0, 1] and are standardized to [-1, 1] before conv1.
        """
        n, h, w = images.shape
        cfg = self.config
        if (h, w) != (cfg.crop_h, cfg.crop_w):
            raise ValueError(f"expected {cfg.crop_h}x{cfg.crop_w} crops, got {h}x{w}")
        x = (images[None] - 0.5) * 2.0                # [1, N, H, W]
        pre1 = self.conv1.forward(x)
        s1 = relu_batch(pre1)
        p1 = pool2x_batch(s1)
        pre2 = self.conv2.forward(p1)
        s2 = relu_batch(pre2)
        up = upsample2x_batch(s2)
        cat = np.concatenate([up, s1], axis=0)
        z = self.conv3.forward(cat)
        if keep_cache:
            self._cache = {"pre1": pre1, "pre2": pre2}
        return StageFeatures(stage1=s1, stage2=s2, z=z)

    def backward_batch(self, grad_z: np.ndarray) -> dict[str, np.ndarray]:
        """Backprop from dL/dz through the backbone; needs a kept cache."""
        w2 = self.config.widths[1]
        gcat, g3 = self.conv3.backward(grad_z)
        gup = gcat[:w2]
        gs1_skip = gcat[w2:]
        gs2 = upsample2x_batch_backward(gup)
        gpre2 = relu_batch_backward(gs2, self._cache["pre2"])
        gp1, g2 = self.conv2.backward(gpre2)
        gs1 = gs1_skip + pool2x_batch_backward(gp1)
        gpre1 = relu_batch_backward(gs1, self._cache["pre1"])
        _, g1 = self.conv1.backward(gpre1)
        grads = {}
        grads.update(g1)
        grads.update(g2)
        grads.update(g3)
        return grads


def forward_features(model: SegModel, image: np.ndarray) -> StageFeatures:
    """Single-crop forward pass (batch of one)."""
    return model.forward_batch(image[None])


def predict(model: SegModel, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel probs [H, W, 4] and argmax label map (ties -> lowest class)."""
    feats = model.forward_batch(image[None])
    h, w = image.shape
    logits = model.head @ feats.z.reshape(model.config.d, -1)
    probs = softmax_rows(logits)
    y_hat = np.argmax(probs, axis=0).reshape(h, w)
    return probs.reshape(N_CLASSES, h, w).transpose(1, 2, 0), y_hat


def predict_batch(model: SegModel, images: np.ndarray) -> np.ndarray:
    """Label maps [N, H, W] for a batch of crops (argmax ties -> lowest class)."""
    n, h, w = images.shape
    feats = model.forward_batch(images)
    logits = model.head @ feats.z.reshape(model.config.d, -1)
    return np.argmax(logits, axis=0).reshape(n, h, w)


def seg_loss(model: SegModel, images: np.ndarray, labels: np.ndarray,
             with_grads: bool = True) -> tuple[float, dict[str, np.ndarray] | None]:
    """Cross-entropy: mean over the batch of per-image sums over pixels of
    -log p at the true class (probabilities clamped at 1e-12)."""
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise ValueError(f"labels outside 0..3: range [{labels.min()}, {labels.max()}]")
    n, h, w = images.shape
    feats = model.forward_batch(images, keep_cache=with_grads)
    d = model.config.d
    zmat = feats.z.reshape(d, -1)
    logits = model.head @ zmat                      # [4, N*H*W]
    probs = softmax_rows(logits)
    flat_labels = labels.reshape(-1)
    p_true = probs[flat_labels, np.arange(flat_labels.size)]
    loss = float(-np.log(np.maximum(p_true, 1e-12)).sum() / n)
    if not with_grads:
        return loss, None
    glogit = probs.copy()
    glogit[flat_labels, np.arange(flat_labels.size)] -= 1.0
    glogit /= n
    grads = {"head": glogit @ zmat.T}
    gz = (model.head.T @ glogit).reshape(d, n, h, w)
    grads.update(model.backward_batch(gz))
    return loss, grads


def class_centers(model: SegModel) -> np.ndarray:
    """Class template vectors: row c is the c-th row of the head matrix."""
    return model.head.copy()


def evaluate_miou(model: SegModel, images: np.ndarray, labels: np.ndarray,
                  batch: int = 16) -> float:
    """Aggregate-confusion MIoU of the model over a crop set."""
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for i in range(0, len(images), batch):
        y_hat = predict_batch(model, images[i:i + batch])
        conf += confusion_matrix(y_hat, labels[i:i + batch])
    return metrics_from_confusion(conf)["miou"]


def lr_schedule(base_lr: float, step: int, total_steps: int,
                warmup_steps: int = 100) -> float:
    """Linear warmup from 0.1x over ``warmup_steps``, then linear decay to
    0.1x at the end of training (deterministic in the step index)."""
    warm = min(1.0, 0.1 + 0.9 * step / max(1, warmup_steps))
    frac = step / max(1, total_steps)
    return base_lr * warm * (1.0 - 0.9 * frac)


# The summed-over-pixels loss gives different parameter groups gradient
# norms that differ by orders of magnitude (class-imbalance sums hit the
# head and biases hardest); these fixed multipliers bring the groups'
# relative step sizes to a common scale.
SEG_LR_SCALES = {
    "conv1.kernel": 1.0, "conv1.bias": 0.5,
    "conv2.kernel": 0.6, "conv2.bias": 0.3,
    "conv3.kernel": 0.2, "conv3.bias": 0.1,
    "head": 0.03,
}

# Global gradient-norm ceiling; bounds the step size through loss spikes
# so momentum cannot amplify them into divergence.
SEG_CLIP_NORM = 2000.0


def train_seg(images: np.ndarray, labels: np.ndarray, config: RunConfig,
              log: list | None = None, miou_subset: int = 256) -> SegModel:
    """Mini-batch SGD with momentum and a warmup/decay schedule on
    pre-computed crops.

    ``log`` (if given) receives (epoch, mean_loss, train_miou) rows, with
    MIoU measured on a fixed leading subset to bound the logging cost.
    Raises FloatingPointError naming the epoch if the loss goes non-finite.
    """
    model = SegModel(config)
    model.init_params(Rng(config.seed).derive("seg-init"))
    opt = SgdMomentum(config.seg_lr, config.seg_momentum)
    shuffler = Rng(config.seed).derive("seg-shuffle")
    n = len(images)
    order = list(range(n))
    batches_per_epoch = (n + config.seg_batch - 1) // config.seg_batch
    total_steps = config.seg_epochs * batches_per_epoch
    step = 0
    for epoch in range(config.seg_epochs):
        shuffler.shuffle(order)
        total = 0.0
        batches = 0
        for i in range(0, n, config.seg_batch):
            idx = order[i:i + config.seg_batch]
            loss, grads = seg_loss(model, images[idx], labels[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            clip_grad_norm(grads, SEG_CLIP_NORM)
            opt.lr = lr_schedule(config.seg_lr, step, total_steps)
            opt.step(model.params(), grads, lr_scales=SEG_LR_SCALES)
            total += loss
            batches += 1
            step += 1
        if log is not None:
            k = min(miou_subset, n)
            miou = evaluate_miou(model, images[:k], labels[:k])
            log.append((epoch, total / batches, miou))
    return model


# ---------------------------------------------------------------------------
# FLOPs accounting: 2 * k^2 * C_in * C_out * H_out * W_out per conv,
# 2 * 4 * D * H * W for the class head
# ---------------------------------------------------------------------------

def count_flops(config: RunConfig, include_head: bool = True) -> int:
    h, w = config.crop_h, config.crop_w
    w1, w2 = config.widths
    d = config.d
    total = 2 * 9 * 1 * w1 * h * w
    total += 2 * 9 * w1 * w2 * (h // 2) * (w // 2)
    total += 2 * 9 * (w1 + w2) * d * h * w
    if include_head:
        total += 2 * N_CLASSES * d * h * w
    return total
