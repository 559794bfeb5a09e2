"""Finite-difference verification of every differentiable op and of the
composite segmentation / adversarial loss graphs, in float64.

Used both by the ``gradcheck`` CLI subcommand and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .nets import ModelConfig, ToyModel

TOLERANCE = 1e-5


def _small_model(rng) -> ToyModel:
    cfg = ModelConfig(classes=3, widths=(4, 6, 6), disc_width=4, aspp_rates=(1, 2))
    return ToyModel(cfg, rng, dtype=np.float64)


def op_checks(rng: np.random.Generator, verbose=False) -> dict[str, float]:
    """Per-op gradient checks on randomized small shapes."""
    results = {}

    def check(name, loss_fn, params):
        err = ad.grad_check(loss_fn, params, rng=rng)
        results[name] = err
        if verbose:
            print(f"{name:<24} {err:.3e}")

    x = ad.constant(rng.normal(size=(2, 3, 8, 8)))
    w = ad.Parameter("w", rng.normal(size=(4, 3, 3, 3)))
    b = ad.Parameter("b", rng.normal(size=(4,)))

    check(
        "conv2d",
        lambda: ad.sigmoid_bce(ad.conv2d(x, ad.param_node(w), ad.param_node(b), padding=1), 1.0),
        [w, b],
    )
    check(
        "conv2d_dilated",
        lambda: ad.sigmoid_bce(
            ad.conv2d(x, ad.param_node(w), ad.param_node(b), stride=1, padding=2, dilation=2),
            0.0,
        ),
        [w, b],
    )
    wx = ad.Parameter("wx", rng.normal(size=(2, 3, 8, 8)))
    check("avg_pool", lambda: ad.sigmoid_bce(ad.avg_pool(ad.param_node(wx), 2, 2), 1.0), [wx])
    check(
        "avg_pool_overlap",
        lambda: ad.sigmoid_bce(ad.avg_pool(ad.param_node(wx), 3, 2), 0.0),
        [wx],
    )
    check(
        "leaky_relu",
        lambda: ad.sigmoid_bce(ad.leaky_relu(ad.param_node(wx)), 1.0),
        [wx],
    )
    check(
        "bilinear_upsample",
        lambda: ad.sigmoid_bce(ad.bilinear_upsample(ad.param_node(wx), 13, 11), 1.0),
        [wx],
    )
    targets = rng.integers(0, 3, size=(2, 8, 8)).astype(np.uint8)
    targets[0, 0, :3] = 255
    wl = ad.Parameter("wl", rng.normal(size=(2, 3, 8, 8)))
    check(
        "softmax_cross_entropy",
        lambda: ad.softmax_cross_entropy(ad.param_node(wl), targets)[0],
        [wl],
    )
    check("sigmoid_bce", lambda: ad.sigmoid_bce(ad.param_node(wx), 1.0), [wx])
    wa = ad.Parameter("wa", rng.normal(size=(2, 3, 8, 8)))
    check(
        "add_concat",
        lambda: ad.sigmoid_bce(
            ad.concat_channels(
                ad.add(ad.param_node(wx), ad.param_node(wa)), ad.param_node(wa)
            ),
            0.0,
        ),
        [wx, wa],
    )
    return results


def composite_checks(rng: np.random.Generator, verbose=False) -> dict[str, float]:
    """Full toy segmentation and adversarial loss graphs."""
    results = {}
    model = _small_model(rng)
    # 32 x 32 images so both discriminators reach their 1/32 output
    images = rng.normal(size=(2, 3, 32, 32))
    labels = rng.integers(0, 3, size=(2, 32, 32)).astype(np.uint8)
    labels[0, :2] = 255
    tgt = rng.normal(size=(2, 3, 32, 32))

    def seg_loss():
        _, high = model.features(ad.constant(images))
        logits = model.class_logits(high, 32, 32)
        return ad.softmax_cross_entropy(logits, labels)[0]

    def adv1_loss():
        _, high = model.features(ad.constant(tgt))
        return ad.sigmoid_bce(model.d1_logits(high), 0.0)

    def adv2_loss():
        mid, _ = model.features(ad.constant(tgt))
        return ad.sigmoid_bce(model.d2_logits(mid), 1.0)

    def minimax_loss():
        return ad.add_scaled([(seg_loss(), 1.0), (adv1_loss(), 1e-3), (adv2_loss(), 2e-4)])

    groups = {
        "seg_graph": (seg_loss, model.seg_params),
        "adv1_graph": (adv1_loss, model._group("f.") + model._group("d1.")),
        "adv2_graph": (adv2_loss, model._group("f.") + model._group("d2.")),
        "minimax_graph": (minimax_loss, model.seg_params + model.disc_params),
    }
    for name, (fn, params) in groups.items():
        # small step: the deep graphs are piecewise linear in the leaky
        # ReLUs, and a wide step occasionally straddles a kink
        err = ad.grad_check(fn, params, eps=1e-6, max_coords=16, rng=rng)
        results[name] = err
        if verbose:
            print(f"{name:<24} {err:.3e}")
    return results


def run_all_checks(verbose=False) -> float:
    rng = np.random.default_rng(12345)
    results = op_checks(rng, verbose=verbose)
    results.update(composite_checks(rng, verbose=verbose))
    return max(results.values())
