"""Reference forward pass for the hand-set tiny conv4 encoder.

Independent of the Rust code: direct convolution loops, eval-mode batch
normalization, ceil-mode 2x2 max pooling. Writes tiny_encoder.json.
"""
import json
import math
from pathlib import Path

import numpy as np

WIDTH, SIZE, EMBED, EPS = 2, 4, 3, 1e-5


def group_value(name, g, i):
    if name.endswith(".weight"):
        return 0.4 * math.sin(1.3 * i + 0.7 * g + 0.1) + 0.25
    if name.endswith(".bias"):
        return 0.1 * math.cos(0.9 * i + g)
    if name.endswith(".gamma"):
        return 1.0 + 0.1 * math.cos(i + g)
    if name.endswith(".beta"):
        return 0.05 * math.sin(2 * i + g)
    if name.endswith(".running_mean"):
        return 0.1 * math.sin(i + 0.5 * g)
    if name.endswith(".running_var"):
        return 0.8 + 0.1 * i
    raise ValueError(name)


def groups():
    specs = []
    cin = 3
    for b in range(4):
        specs.append((f"block{b}.conv.weight", (WIDTH, cin, 3, 3)))
        for s in ("gamma", "beta", "running_mean", "running_var"):
            specs.append((f"block{b}.bn.{s}", (WIDTH,)))
        cin = WIDTH
    specs.append(("proj.weight", (EMBED, WIDTH)))
    specs.append(("proj.bias", (EMBED,)))
    out = {}
    for g, (name, shape) in enumerate(specs):
        n = int(np.prod(shape))
        out[name] = np.array([group_value(name, g, i) for i in range(n)]).reshape(shape)
    return out


def image():
    hwc = np.array(
        [np.float32(((y * SIZE + x) * 3 + c) / 47.0) for y in range(SIZE) for x in range(SIZE) for c in range(3)],
        dtype=np.float64,
    ).reshape(SIZE, SIZE, 3)
    return hwc.transpose(2, 0, 1)


def conv3x3(x, w):
    cin, h, wd = x.shape
    cout = w.shape[0]
    padded = np.zeros((cin, h + 2, wd + 2))
    padded[:, 1:-1, 1:-1] = x
    out = np.zeros((cout, h, wd))
    for o in range(cout):
        for y in range(h):
            for xx in range(wd):
                out[o, y, xx] = np.sum(padded[:, y : y + 3, xx : xx + 3] * w[o])
    return out


def maxpool(x):
    c, h, w = x.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    out = np.empty((c, oh, ow))
    for y in range(oh):
        for xx in range(ow):
            out[:, y, xx] = x[:, 2 * y : 2 * y + 2, 2 * xx : 2 * xx + 2].reshape(c, -1).max(axis=1)
    return out


def forward(p, x):
    for b in range(4):
        x = conv3x3(x, p[f"block{b}.conv.weight"])
        rm, rv = p[f"block{b}.bn.running_mean"], p[f"block{b}.bn.running_var"]
        x = (x - rm[:, None, None]) / np.sqrt(rv[:, None, None] + EPS)
        x = x * p[f"block{b}.bn.gamma"][:, None, None] + p[f"block{b}.bn.beta"][:, None, None]
        x = np.maximum(x, 0.0)
        x = maxpool(x)
    z = p["proj.weight"] @ x.reshape(-1) + p["proj.bias"]
    return z / np.linalg.norm(z)


if __name__ == "__main__":
    emb = forward(groups(), image())
    path = Path(__file__).with_name("tiny_encoder.json")
    path.write_text(json.dumps({"embedding": [float(v) for v in emb]}, indent=2) + "\n")
    print(emb)
