import math


def round_half_away(x) -> int:
    """Round to the nearest integer, ties away from zero (1.5 -> 2, -1.5 -> -2)."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))
