"""Training loops: supervised segmentation, multi-adversarial adaptation,
inference-map export, and retraining on proxy labels.

The adversarial phase alternates two updates per iteration: the
discriminators (Adam) learn to score source patches 1 and target patches
0 at both feature levels, on features detached from the backbone; the
segmentation path (SGD with momentum) then minimizes the supervised loss
plus the non-saturating confusion terms pushing D(target) toward 1.
Everything is driven by one seeded generator, so fixed-seed runs are
bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import IGNORE_LABEL
from . import autodiff as ad
from .manifest import DatasetManifest, ManifestError, replace_entry_paths
from .metrics import ConfusionMatrix, confusion_update, miou
from .nets import ModelConfig, ToyModel
from .ppm import read_ppm
from .tensors import LabelMap, ScoreMap, Tensor, load_tensor, save_tensor

log = logging.getLogger("proxyforge")


@dataclass(frozen=True)
class TrainConfig:
    lambda_seg: float = 1.0
    lambda_adv1: float = 1e-3
    lambda_adv2: float = 2e-4
    lr_seg: float = 4e-3
    lr_disc: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 4
    supervised_iters: int = 500
    adversarial_iters: int = 400
    proxy_iters: int = 600
    poly_power: float = 0.9
    seed: int = 0


def load_image(path) -> np.ndarray:
    """PPM -> centered float32 (3,H,W)."""
    img = read_ppm(path).astype(np.float32) / 255.0
    return np.moveaxis(img, 2, 0) - 0.5


def _load_split(man: DatasetManifest, role: str, with_labels: bool):
    entries = man.by_role(role)
    if not entries:
        raise ManifestError(f"no {role} entries in manifest")
    images = np.stack([load_image(man.resolve(e.image)) for e in entries])
    if not with_labels:
        return entries, images, None
    labels = np.stack(
        [load_tensor(man.resolve(e.gt)).data for e in entries if e.gt]
    )
    if labels.shape[0] != len(entries):
        raise ManifestError(f"{role} entries missing ground truth")
    return entries, images, labels


def _poly_lr(base: float, it: int, total: int, power: float) -> float:
    return base * (1.0 - it / total) ** power


def _seg_loss_node(model: ToyModel, images: np.ndarray, labels: np.ndarray):
    x = ad.constant(images)
    _, high = model.features(x)
    logits = model.class_logits(high, images.shape[2], images.shape[3])
    return ad.softmax_cross_entropy(logits, labels)


def seg_loss(model: ToyModel, images: np.ndarray, labels: np.ndarray) -> float:
    """Supervised mean pixel cross-entropy on a batch (no update)."""
    node, _ = _seg_loss_node(model, images, labels)
    return float(node.value)


def train_supervised(
    model: ToyModel,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    iters: int,
    rng: np.random.Generator,
    log_lines: list[str] | None = None,
) -> None:
    """Plain segmentation training with a polynomial learning-rate decay."""
    if not np.any(labels != IGNORE_LABEL):
        raise ValueError("training labels contain no supervised pixels")
    n = images.shape[0]
    for it in range(iters):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        loss, _ = _seg_loss_node(model, images[idx], labels[idx])
        ad.backward(loss)
        lr = _poly_lr(cfg.lr_seg, it, iters, cfg.poly_power)
        ad.sgd_momentum_step(
            model.seg_params, lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
        )
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        if log_lines is not None and it % 50 == 0:
            log_lines.append(f"{it} {float(loss.value):.4f} - - -")


def adversarial_step(
    model: ToyModel,
    src_images: np.ndarray,
    src_labels: np.ndarray,
    tgt_images: np.ndarray,
    cfg: TrainConfig,
) -> dict:
    """One alternating minimax update; returns the loss components."""
    # --- discriminator phase: features detached so F/C stay untouched
    xs = ad.constant(src_images)
    xt = ad.constant(tgt_images)
    mid_s, high_s = model.features(xs)
    mid_t, high_t = model.features(xt)
    mid_s_c, high_s_c = ad.constant(mid_s.value), ad.constant(high_s.value)
    mid_t_c, high_t_c = ad.constant(mid_t.value), ad.constant(high_t.value)

    d1_s = model.d1_logits(high_s_c)
    d1_t = model.d1_logits(high_t_c)
    d2_s = model.d2_logits(mid_s_c)
    d2_t = model.d2_logits(mid_t_c)
    d_loss = ad.add_scaled(
        [
            (ad.sigmoid_bce(d1_s, 1.0), 0.25),
            (ad.sigmoid_bce(d1_t, 0.0), 0.25),
            (ad.sigmoid_bce(d2_s, 1.0), 0.25),
            (ad.sigmoid_bce(d2_t, 0.0), 0.25),
        ]
    )
    ad.backward(d_loss)
    ad.adam_step(model.disc_params, cfg.lr_disc)
    d_correct = (
        (d1_s.value > 0).sum()
        + (d1_t.value <= 0).sum()
        + (d2_s.value > 0).sum()
        + (d2_t.value <= 0).sum()
    )
    d_total = d1_s.value.size + d1_t.value.size + d2_s.value.size + d2_t.value.size

    # --- generator phase: confuse the (now fixed) discriminators
    mid_t2, high_t2 = model.features(ad.constant(tgt_images))
    seg, _ = _seg_loss_node(model, src_images, src_labels)
    adv1 = ad.sigmoid_bce(model.d1_logits(high_t2), 1.0)
    adv2 = ad.sigmoid_bce(model.d2_logits(mid_t2), 1.0)
    g_loss = ad.add_scaled(
        [(seg, cfg.lambda_seg), (adv1, cfg.lambda_adv1), (adv2, cfg.lambda_adv2)]
    )
    ad.backward(g_loss)
    ad.sgd_momentum_step(
        model.seg_params, cfg.lr_seg, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    return {
        "seg": float(seg.value),
        "adv1": float(adv1.value),
        "adv2": float(adv2.value),
        "disc": float(d_loss.value),
        "d_accuracy": d_correct / d_total,
    }


def train_adapt(
    man: DatasetManifest,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    log_path=None,
) -> ToyModel:
    """Source-supervised warmup followed by multi-adversarial fine-tuning."""
    rng = np.random.default_rng(cfg.seed)
    model = ToyModel(model_cfg, rng)
    _, src_images, src_labels = _load_split(man, "source", with_labels=True)
    _, tgt_images, _ = _load_split(man, "target-train", with_labels=False)

    lines: list[str] = []
    train_supervised(
        model, src_images, src_labels, cfg, cfg.supervised_iters, rng, lines
    )
    n_s, n_t = src_images.shape[0], tgt_images.shape[0]
    b = cfg.batch_size
    for it in range(cfg.adversarial_iters):
        si = rng.choice(n_s, size=min(b, n_s), replace=False)
        ti = rng.choice(n_t, size=min(b, n_t), replace=False)
        rec = adversarial_step(model, src_images[si], src_labels[si], tgt_images[ti], cfg)
        for v in rec.values():
            if not np.isfinite(v):
                raise FloatingPointError(f"non-finite loss component at iter {it}")
        if it % 25 == 0:
            lines.append(
                f"{it} {rec['seg']:.4f} {rec['adv1']:.4f} {rec['adv2']:.4f} "
                f"{rec['d_accuracy']:.3f}"
            )
            log.info("adv iter %d: %s", it, rec)
    if log_path is not None:
        Path(log_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return model


def infer_maps(
    man: DatasetManifest, model: ToyModel, out_dir, threads: int = 1
) -> DatasetManifest:
    """Export P (softmax scoremap) and native-resolution D1/D2 sigmoid
    maps for every target-train entry; deterministic per checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = man.by_role("target-train")
    if not entries:
        raise ManifestError("no target-train entries to run inference on")
    updated = man

    def run(entry):
        image = load_image(man.resolve(entry.image))[None]
        probs, d1, d2 = model.predict(image)
        scoremap = np.moveaxis(probs[0], 0, 2).astype(np.float32)
        # renormalize float32 rounding so the ScoreMap contract holds
        scoremap /= scoremap.sum(axis=2, keepdims=True)
        ScoreMap(scoremap)  # validation
        rels = {
            "scoremap": f"score_{entry.id}.ten",
            "d1": f"d1_{entry.id}.ten",
            "d2": f"d2_{entry.id}.ten",
        }
        save_tensor(out_dir / rels["scoremap"], Tensor(scoremap))
        save_tensor(out_dir / rels["d1"], Tensor(d1[0].astype(np.float32)))
        save_tensor(out_dir / rels["d2"], Tensor(d2[0].astype(np.float32)))
        return entry, rels

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, entries))
    else:
        results = [run(e) for e in entries]
    for entry, rels in results:
        updated = replace_entry_paths(updated, entry.id, out_dir, rels)
    return updated


def train_on_proxies(
    man: DatasetManifest,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    log_path=None,
) -> ToyModel:
    """Supervised retraining on proxy labels from a fresh initialization."""
    entries = man.by_role("target-train")
    if not entries or any(e.proxy is None for e in entries):
        raise ManifestError("every target-train entry needs a proxy label map")
    images = np.stack([load_image(man.resolve(e.image)) for e in entries])
    labels = np.stack([load_tensor(man.resolve(e.proxy)).data for e in entries])
    if not np.any(labels != IGNORE_LABEL):
        raise ValueError("proxy manifest contains zero labeled pixels")
    rng = np.random.default_rng(cfg.seed + 1)
    model = ToyModel(model_cfg, rng)
    lines: list[str] = []
    train_supervised(model, images, labels, cfg, cfg.proxy_iters, rng, lines)
    if log_path is not None:
        Path(log_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return model


def predict_labels(model: ToyModel, image: np.ndarray) -> LabelMap:
    probs, _, _ = model.predict(image[None])
    return LabelMap(np.argmax(probs[0], axis=0).astype(np.uint8))


def evaluate_miou(model: ToyModel, man: DatasetManifest, classes: int):
    """mIoU of the model on the manifest's target-eval entries."""
    entries = man.by_role("target-eval")
    if not entries:
        raise ManifestError("no target-eval entries to evaluate")
    cm = ConfusionMatrix(classes)
    for e in entries:
        pred = predict_labels(model, load_image(man.resolve(e.image)))
        gt = LabelMap(load_tensor(man.resolve(e.gt)).data)
        confusion_update(cm, gt, pred)
    return miou(cm)
