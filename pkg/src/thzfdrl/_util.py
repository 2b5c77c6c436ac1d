import math


def ceil_fraction(frac: float, n: int) -> int:
    """ceil(frac * n), immune to products like 0.1 * 30 = 3.0000000000000004."""
    return math.ceil(round(frac * n, 9))
