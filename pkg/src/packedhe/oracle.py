"""Plaintext reference implementations.

Deliberately written against plain arrays with no slot-engine imports, so
encrypted-domain results can be cross-checked against an independent
computation path.
"""

import numpy as np

__all__ = [
    "oracle_matmul",
    "oracle_conv",
    "oracle_poly",
    "oracle_flatten",
    "oracle_forward",
]


def oracle_matmul(a, b) -> np.ndarray:
    """Triple-loop matrix product."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    m, n = a.shape
    n2, p = b.shape
    if n != n2:
        raise ValueError(f"inner dims differ: {n} vs {n2}")
    out = np.zeros((m, p), dtype=np.float64)
    for i in range(m):
        for j in range(p):
            s = 0.0
            for k in range(n):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def oracle_conv(image, weights, bias: float = 0.0) -> np.ndarray:
    """Direct window-sum valid convolution with stride (1, 1)."""
    image = np.asarray(image, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    h, w = image.shape
    k = weights.shape[0]
    if weights.shape != (k, k) or k > h or k > w:
        raise ValueError(f"bad kernel shape {weights.shape} for image {image.shape}")
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            out[i, j] = bias + float(np.sum(image[i : i + k, j : j + k] * weights))
    return out


def oracle_poly(x, coeffs) -> np.ndarray:
    """Evaluate c0 + c1 x + c2 x^2 + c3 x^3 element-wise."""
    x = np.asarray(x, dtype=np.float64)
    c0, c1, c2, c3 = (float(c) for c in coeffs)
    return c0 + c1 * x + c2 * x * x + c3 * x * x * x


def oracle_flatten(maps) -> np.ndarray:
    """Flatten feature maps map-major, row-major within each map."""
    return np.concatenate([np.asarray(m, dtype=np.float64).reshape(-1) for m in maps])


def oracle_forward(weights, images) -> np.ndarray:
    """Plaintext forward pass of the conv/act/fc/act/fc pipeline.

    ``weights`` carries conv_kernels (list of Kernel-likes with .weights
    and .bias), fc1_weight/fc1_bias, fc2_weight/fc2_bias and the two
    4-coefficient activation tuples; ``images`` is (batch, h, w).
    """
    images = np.asarray(images, dtype=np.float64)
    scores = []
    for img in images:
        maps = [
            oracle_poly(oracle_conv(img, kern.weights, kern.bias), weights.act1)
            for kern in weights.conv_kernels
        ]
        flat = oracle_flatten(maps)
        h1 = weights.fc1_weight @ flat + weights.fc1_bias
        h1 = oracle_poly(h1, weights.act2)
        scores.append(weights.fc2_weight @ h1 + weights.fc2_bias)
    return np.stack(scores)
