from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn


T = TypeVar("T")
R = TypeVar("R")


def run_batch(
    func: Callable[[T], R],
    items: Sequence[T],
    max_workers: int = 4,
    description: str = "Solving...",
    console: Optional[Console] = None,
    show_progress: bool = False,
) -> List[R]:
    """Evaluate ``func`` over ``items`` on a thread pool; results keep input order."""
    if max_workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    results: List[Optional[R]] = [None] * len(items)
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console or Console(stderr=True),
        disable=not show_progress,
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=len(items))
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            future_to_index = {executor.submit(func, item): k for k, item in enumerate(items)}
            for future in as_completed(future_to_index):
                results[future_to_index[future]] = future.result()
                progress.advance(task)
    return results  # type: ignore[return-value]
