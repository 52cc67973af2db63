"""
Math utility functions.

This module provides the small numeric helpers shared by the metrics,
the gradient checker and parameter initialization.
"""

import numpy as np


def safe_divide(a, b, default=0.0):
    """
    Divide a by b, returning a default where the denominator vanishes.

    Args:
        a: Numerator (scalar or array)
        b: Denominator (scalar or array, broadcastable to a)
        default: Value used where b == 0

    Returns:
        The quotient as float64, with ``default`` where b is zero
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.full(np.broadcast(a, b).shape, float(default))
    np.divide(a, b, out=out, where=b != 0)
    return out if out.ndim else float(out)


def relative_error(a, b, floor=1e-6):
    """
    Elementwise relative error |a - b| / max(|a|, |b|, floor).

    Args:
        a: First array
        b: Second array
        floor: Lower bound of the denominator

    Returns:
        Array of relative errors (float64)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def pearson_r(x, y):
    """
    Pearson correlation coefficient of two equally sized arrays.

    Args:
        x: First sample
        y: Second sample

    Returns:
        The correlation in [-1, 1]; 0.0 when either sample has zero variance

    Raises:
        ValueError: If x and y have different sizes
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("Samples must have the same size")
    dx = x - x.mean()
    dy = y - y.mean()
    return safe_divide(np.sum(dx * dy), np.sqrt(np.sum(dx * dx) * np.sum(dy * dy)))


def shannon_entropy(counts):
    """
    Shannon entropy (base 2) of a histogram.

    Args:
        counts: Non-negative bin counts of any shape

    Returns:
        Entropy in bits; 0.0 for an empty histogram
    """
    counts = np.asarray(counts, dtype=np.float64).ravel()
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def kaiming_uniform_bound(fan_in, gain=np.sqrt(2.0)):
    """
    Half-width of the Kaiming-uniform initialization interval.

    Args:
        fan_in: Number of inputs feeding one output unit
        gain: Activation gain (sqrt(2) for rectifiers)

    Returns:
        The bound b such that weights are drawn from U(-b, b)

    Raises:
        ValueError: If fan_in is not positive
    """
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return float(gain * np.sqrt(3.0 / fan_in))
