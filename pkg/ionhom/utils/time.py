"""Time utilities for ionhom"""
import time


def format_duration(seconds: float) -> str:
    """
    Format a wall-clock duration (e.g. "2m 03.4s")

    Args:
        seconds: Duration in seconds

    Returns:
        Short duration string
    """
    if seconds < 60:
        return f"{seconds:.2f}s"
    minutes, rest = divmod(seconds, 60)
    if minutes < 60:
        return f"{int(minutes)}m {rest:04.1f}s"
    hours, minutes = divmod(minutes, 60)
    return f"{int(hours)}h {int(minutes):02d}m"


class Stopwatch:
    """Wall-clock timer for solver steps"""

    def __init__(self):
        self.start = time.perf_counter()
        self.last = self.start

    def lap(self) -> float:
        """Seconds since the previous lap"""
        now = time.perf_counter()
        elapsed = now - self.last
        self.last = now
        return elapsed

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start
