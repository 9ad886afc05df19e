from __future__ import annotations

import logging
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .errors import RepetitionFailed

logger = logging.getLogger(__name__)

ProgressFn = Callable[[str, int], None]


@dataclass
class RepetitionJob:
    """
    One independent unit of an experiment campaign.

    Attributes:
        index: Position of the job in the campaign; results are ordered by it.
        task: Module-level callable (picklable for the process pool).
        args: Positional arguments for `task`.
        label: Short description used in progress messages.
    """
    index: int
    task: Callable[..., Any]
    args: tuple = ()
    label: str = ""


@dataclass
class RepetitionWorker:
    """Runs repetition jobs in index order, either inline or on a process pool.

    Progress is reported through `progress(message, percent)`. A failing job
    stops the run and raises RepetitionFailed carrying every result that
    finished, still ordered by job index.

    Attributes:
        jobs: The jobs to run.
        n_jobs: Worker processes; 1 runs everything in the calling process.
        progress: Optional progress callback.
    """
    jobs: Sequence[RepetitionJob]
    n_jobs: int = 1
    progress: Optional[ProgressFn] = None
    _cancel: bool = field(default=False, init=False, repr=False)

    def request_cancel(self) -> None:
        self._cancel = True

    def _emit(self, message: str, done: int) -> None:
        total = max(len(self.jobs), 1)
        percent = int(round(100 * done / total))
        logger.info("%s (%d%%)", message, percent)
        if self.progress is not None:
            self.progress(message, percent)

    def _check_cancel(self, index: int, results: dict) -> None:
        if self._cancel:
            raise RepetitionFailed(index, _ordered(results), RuntimeError("cancelled"))

    def run(self) -> list:
        if self.n_jobs <= 1 or len(self.jobs) <= 1:
            return self._run_inline()
        return self._run_pool()

    def _run_inline(self) -> list:
        results: dict[int, Any] = {}
        for done, job in enumerate(self.jobs):
            self._check_cancel(job.index, results)
            try:
                results[job.index] = job.task(*job.args)
            except Exception as e:
                raise RepetitionFailed(job.index, _ordered(results), e) from e
            self._emit(f"rep {done + 1}/{len(self.jobs)} {job.label}".rstrip(), done + 1)
        return _ordered(results)

    def _run_pool(self) -> list:
        results: dict[int, Any] = {}
        with ProcessPoolExecutor(max_workers=self.n_jobs) as pool:
            pending = {pool.submit(job.task, *job.args): job for job in self.jobs}
            while pending:
                finished, _ = wait(pending, return_when=FIRST_EXCEPTION)
                # collect successes first so a failure keeps them
                failed = None
                for fut in sorted(finished, key=lambda f: pending[f].index):
                    job = pending.pop(fut)
                    err = fut.exception()
                    if err is not None:
                        failed = failed or (job, err)
                        continue
                    results[job.index] = fut.result()
                    self._emit(f"rep {len(results)}/{len(self.jobs)} {job.label}".rstrip(), len(results))
                if failed is not None:
                    for fut in pending:
                        fut.cancel()
                    job, err = failed
                    raise RepetitionFailed(job.index, _ordered(results), err) from err
                if self._cancel and pending:
                    for fut in pending:
                        fut.cancel()
                    self._check_cancel(min(j.index for j in pending.values()), results)
        return _ordered(results)


def _ordered(results: dict) -> list:
    return [results[k] for k in sorted(results)]
