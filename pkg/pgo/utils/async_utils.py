"""Thread-pool helpers and a progress bar for long-running runs."""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

import click

T = TypeVar('T')
R = TypeVar('R')


class ProgressIndicator:
    """Single-line cell counter on stderr, redrawn after every finished cell."""

    FRAMES = "⠋⠙⠹⠸⠼⠴⠦⠧⠇⠏"
    WIDTH = 24

    def __init__(self, total: int, label: str = "Running", enabled: bool = True):
        self.total = total
        self.done = 0
        self.label = label
        self.enabled = enabled
        self._started = time.perf_counter()

    def update(self, count: int = 1):
        self.done += count
        if self.enabled:
            click.echo(f"\r{self.line()}", nl=False, err=True)

    def line(self) -> str:
        frame = self.FRAMES[self.done % len(self.FRAMES)]
        elapsed = time.perf_counter() - self._started
        if self.total <= 0:
            return f"{frame} {self.label} ({elapsed:.1f}s)"
        ticks = self.WIDTH * self.done // self.total
        gauge = "#" * ticks + "." * (self.WIDTH - ticks)
        return f"{frame} {self.label} [{gauge}] {self.done}/{self.total} cells, {elapsed:.1f}s"

    def finish(self):
        if self.enabled and self.done:
            click.echo(err=True)


def run_parallel(
    items: Sequence[T],
    func: Callable[[T], R],
    max_workers: int = 1,
    progress: Optional[ProgressIndicator] = None
) -> List[R]:
    """Apply ``func`` to every item, results in input order.

    With one worker the items run inline, in order. The first exception
    raised by ``func`` propagates.
    """
    results: List[Optional[R]] = [None] * len(items)
    if max_workers <= 1 or len(items) <= 1:
        for position, item in enumerate(items):
            results[position] = func(item)
            if progress:
                progress.update()
        return results  # type: ignore[return-value]

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = {executor.submit(func, item): position for position, item in enumerate(items)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
            if progress:
                progress.update()
    return results  # type: ignore[return-value]
