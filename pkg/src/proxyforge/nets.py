"""Toy segmentation network and patch discriminators.

The feature backbone is three conv blocks (strides 1, 2, 2) with a mid
tap at 1/2 scale and high-level features at 1/4 scale. The classifier
head is a 1x1 conv plus four dilated 3x3 branches (rates 1, 2, 4, 8)
summed and bilinearly upsampled back to image resolution. Each
discriminator is a stack of conv + leaky-ReLU blocks with average-pool
strides bringing its input down to 1/32 of the image, ending in a
single-channel patch logit map.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .tensors import Tensor, load_tensor, save_tensor


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    classes: int = 6
    widths: tuple = (16, 32, 32)  # backbone blocks, strides 1, 2, 2
    disc_width: int = 32
    aspp_rates: tuple = (1, 2, 4, 8)


def _he_init(rng, shape, fan_in):
    return (rng.normal(size=shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class ToyModel:
    """Holds the named parameters of F, C, D1, D2 and builds their graphs."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.params: dict[str, ad.Parameter] = {}
        c_in = cfg.in_channels
        w1, w2, w3 = cfg.widths

        def conv_param(name, out_c, in_c, k):
            self.params[name + ".w"] = ad.Parameter(
                name + ".w",
                _he_init(rng, (out_c, in_c, k, k), in_c * k * k).astype(dtype),
            )
            self.params[name + ".b"] = ad.Parameter(
                name + ".b", np.zeros(out_c, dtype=dtype)
            )

        conv_param("f.block1", w1, c_in, 3)
        conv_param("f.block2", w2, w1, 3)
        conv_param("f.block3", w3, w2, 3)

        conv_param("c.head", cfg.classes, w3, 1)
        for r in cfg.aspp_rates:
            conv_param(f"c.aspp{r}", cfg.classes, w3, 3)

        dw = cfg.disc_width
        for d, in_c in (("d1", w3), ("d2", w2)):
            conv_param(f"{d}.block1", dw, in_c, 3)
            conv_param(f"{d}.block2", dw, dw, 3)
            conv_param(f"{d}.block3", dw, dw, 3)
            conv_param(f"{d}.out", 1, dw, 1)

    # parameter groups -------------------------------------------------
    def _group(self, prefix):
        return [p for n, p in sorted(self.params.items()) if n.startswith(prefix)]

    @property
    def seg_params(self):
        return self._group("f.") + self._group("c.")

    @property
    def disc_params(self):
        return self._group("d1.") + self._group("d2.")

    def _conv(self, name, x, **kw):
        return ad.conv2d(
            x,
            ad.param_node(self.params[name + ".w"]),
            ad.param_node(self.params[name + ".b"]),
            **kw,
        )

    # graphs -----------------------------------------------------------
    def features(self, x: ad.Node):
        """Returns (mid, high): 1/2-scale and 1/4-scale feature maps."""
        h = ad.leaky_relu(self._conv("f.block1", x, stride=1, padding=1))
        mid = ad.leaky_relu(self._conv("f.block2", h, stride=2, padding=1))
        high = ad.leaky_relu(self._conv("f.block3", mid, stride=2, padding=1))
        return mid, high

    def class_logits(self, high: ad.Node, out_h: int, out_w: int) -> ad.Node:
        head = self._conv("c.head", high)
        for r in self.cfg.aspp_rates:
            head = ad.add(
                head, self._conv(f"c.aspp{r}", high, padding=r, dilation=r)
            )
        return ad.bilinear_upsample(head, out_h, out_w)

    def _disc(self, name, feats: ad.Node, pools) -> ad.Node:
        h = feats
        for i, stride in enumerate(pools, start=1):
            h = ad.leaky_relu(self._conv(f"{name}.block{i}", h, padding=1))
            h = ad.avg_pool(h, stride, stride)
        return self._conv(f"{name}.out", h)

    def d1_logits(self, high: ad.Node) -> ad.Node:
        # 1/4 -> 1/32
        return self._disc("d1", high, (2, 2, 2))

    def d2_logits(self, mid: ad.Node) -> ad.Node:
        # 1/2 -> 1/32
        return self._disc("d2", mid, (2, 2, 4))

    # inference --------------------------------------------------------
    def predict(self, images: np.ndarray):
        """Forward a batch (N,3,H,W); returns softmax scores and the two
        sigmoid discriminator maps, all as numpy arrays."""
        x = ad.constant(images)
        mid, high = self.features(x)
        logits = self.class_logits(high, images.shape[2], images.shape[3])
        z = logits.value
        ez = np.exp(z - z.max(axis=1, keepdims=True))
        probs = ez / ez.sum(axis=1, keepdims=True)
        d1 = ad.sigmoid(self.d1_logits(high).value)[:, 0]
        d2 = ad.sigmoid(self.d2_logits(mid).value)[:, 0]
        return probs, d1, d2

    # checkpointing ----------------------------------------------------
    def save(self, ckpt_dir) -> None:
        ckpt_dir = Path(ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        index = []
        for name, p in sorted(self.params.items()):
            fname = name.replace(".", "_") + ".ten"
            save_tensor(ckpt_dir / fname, Tensor(p.value.astype(np.float32)))
            dims = "x".join(str(d) for d in p.value.shape)
            state_files = []
            for key, arr in sorted(p.state.items()):
                if isinstance(arr, np.ndarray):
                    sfname = name.replace(".", "_") + f".state_{key}.ten"
                    save_tensor(ckpt_dir / sfname, Tensor(arr.astype(np.float32)))
                    state_files.append(f"{key}={sfname}")
                else:
                    state_files.append(f"{key}:{arr}")
            index.append(f"{name} {fname} {dims} {' '.join(state_files)}".rstrip())
        (ckpt_dir / "index.txt").write_text("\n".join(index) + "\n", encoding="utf-8")

    def load(self, ckpt_dir) -> None:
        ckpt_dir = Path(ckpt_dir)
        lines = (ckpt_dir / "index.txt").read_text(encoding="utf-8").splitlines()
        for line in lines:
            parts = line.split()
            name, fname = parts[0], parts[1]
            p = self.params[name]
            value = load_tensor(ckpt_dir / fname).data.astype(p.value.dtype)
            if value.shape != p.value.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            p.value = value.copy()
            p.state = {}
            for tok in parts[3:]:
                if "=" in tok:
                    key, sfname = tok.split("=", 1)
                    p.state[key] = load_tensor(ckpt_dir / sfname).data.astype(
                        p.value.dtype
                    ).copy()
                else:
                    key, raw = tok.split(":", 1)
                    p.state[key] = int(raw)
