"""Small binary networks: an MLP and desk-scale Conv2/4/6/8 analogues.

The ConvN family follows the usual shallow-CNN pattern (conv pairs followed by
max-pooling, then three fully connected layers) at reduced widths.  Every
binary layer is followed by BatchNorm and the layers carry no bias.  The first
convolution uses a 4x4 kernel so every filter has an even fan-in, which is
what lets a bi-half code split exactly in two.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from .layers import BinaryConv2d, BinaryLinear, binary_layers
from .nn import BatchNorm, Flatten, MaxPool2d, ReLU, Sequential, SignActivation
from .tensor import conv_output_size

MODELS = ("linear", "mlp", "conv2", "conv4", "conv6", "conv8")
CONV_WIDTHS = (16, 32, 64, 128)
FC_WIDTH = 64


def build_model(name: str, input_shape: Tuple[int, ...], n_classes: int, *,
                binarizer: str = "bihalf", p_pos: float = 0.5, per_filter: bool = True,
                activation: str = "real", exempt: Sequence[str] = (),
                rho: float = 0.0, learned_mask: bool = False,
                rng: np.random.Generator = None) -> Sequential:
    """Assemble and Kaiming-initialise a model.

    ``input_shape`` excludes the batch axis.  ``exempt`` may contain
    ``"first"``/``"last"`` to keep those layers real-valued.  ``rho > 0``
    attaches a per-filter prune mask to every binary layer.
    """
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; choose from {MODELS}")
    if activation not in ("real", "binary"):
        raise ValueError("activation must be 'real' or 'binary'")
    kw = dict(binarizer=binarizer, p_pos=p_pos, per_filter=per_filter)
    act = SignActivation if activation == "binary" else ReLU
    layers = []
    if name == "linear":
        layers = [Flatten(), BinaryLinear(int(np.prod(input_shape)), n_classes, **kw)]
    elif name == "mlp":
        d = int(np.prod(input_shape))
        layers = [Flatten(),
                  BinaryLinear(d, FC_WIDTH, **kw), BatchNorm(FC_WIDTH), act(),
                  BinaryLinear(FC_WIDTH, FC_WIDTH, **kw), BatchNorm(FC_WIDTH), act(),
                  BinaryLinear(FC_WIDTH, n_classes, **kw)]
    else:
        n_conv = int(name[4:])
        c, h, w = input_shape
        for i in range(n_conv):
            out_c = CONV_WIDTHS[i // 2]
            k = 4 if i == 0 else 3
            layers += [BinaryConv2d(c, out_c, k=k, pad=1, **kw), BatchNorm(out_c), act()]
            h, w = conv_output_size(h, k, 1, 1), conv_output_size(w, k, 1, 1)
            c = out_c
            if i % 2 == 1 and min(h, w) >= 2:
                layers.append(MaxPool2d(2))
                h, w = h // 2, w // 2
        layers += [Flatten(),
                   BinaryLinear(c * h * w, FC_WIDTH, **kw), BatchNorm(FC_WIDTH), act(),
                   BinaryLinear(FC_WIDTH, FC_WIDTH, **kw), BatchNorm(FC_WIDTH), act(),
                   BinaryLinear(FC_WIDTH, n_classes, **kw)]
    model = Sequential(*layers)
    bl = binary_layers(model)
    # nothing trainable sits before the first binary layer
    bl[0].need_input_grad = False
    if "first" in exempt:
        _make_real(bl[0])
    if "last" in exempt:
        _make_real(bl[-1])
    rng = rng if rng is not None else np.random.default_rng(0)
    for layer in bl:
        layer.kaiming_init(rng)
        if rho > 0 and layer.binarizer != "real":
            layer.attach_mask(rho, learned_mask)
    return model


def _make_real(layer) -> None:
    layer.binarizer = "real"
    layer.alpha = 1.0
