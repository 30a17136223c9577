"""Run executor for batch simulations.

This module provides the RunExecutor class which:
- Fans independent jobs out over a joblib worker pool
- Tracks run state (one run per subcommand at a time)
- Times runs and collects the files they write
- Converts failures into RunResult exit codes
"""

import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from joblib import Parallel, delayed

from config import ConfigurationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2


class RunError(Exception):
    """Raised for invalid run manifests or unusable output locations."""
    pass


@dataclass
class RunManifest:
    """Everything needed to reproduce a run."""
    subcommand: str
    output_dir: str
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    workers: int = 1
    variant: str = 'full'
    trajectories: Optional[int] = None
    options: Dict[str, Any] = field(default_factory=dict)

    def config_overrides(self) -> List[str]:
        """Overrides with the seed and trajectory count folded in."""
        overrides = list(self.overrides)
        if self.seed is not None:
            overrides.append(f"numerics.seed={self.seed}")
        if self.trajectories is not None:
            overrides.append(f"numerics.trajectories={self.trajectories}")
        return overrides

    def prepare(self) -> Path:
        """Create the output directory and check that it is writable.

        Raises:
            RunError: If the directory cannot be created or written
        """
        if self.workers == 0 or self.workers < -1:
            raise RunError(f"Worker count must be positive or -1, got {self.workers}")
        path = Path(self.output_dir)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RunError(f"Cannot create output directory {path}: {e}") from e
        if not os.access(path, os.W_OK):
            raise RunError(f"Output directory is not writable: {path}")
        return path

    def child(self, subcommand: str, output_dir: str, overrides: Sequence[str] = (),
              variant: Optional[str] = None, **options) -> 'RunManifest':
        """Manifest for a step of a chained run; ``variant`` replaces the parent's."""
        return RunManifest(subcommand=subcommand, output_dir=output_dir,
                           config_path=self.config_path,
                           overrides=list(self.overrides) + list(overrides), seed=self.seed,
                           workers=self.workers, variant=variant or self.variant,
                           trajectories=self.trajectories, options={**self.options, **options})


@dataclass
class RunResult:
    """Result of a run."""
    command: str
    exit_code: int
    duration: float
    timestamp: datetime
    success: bool
    outputs: List[Path] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class RunState:
    """State of a running subcommand."""
    command: str
    running: bool
    started_at: Optional[datetime]
    output_dir: Optional[str]


class RunExecutor:
    """Executes subcommands and distributes their jobs over workers."""

    def __init__(self, workers: int = 1, chunks_per_worker: int = 4):
        """Initialize the executor.

        Args:
            workers: joblib worker count; -1 uses every core
            chunks_per_worker: Jobs are grouped so each worker gets about this many chunks
        """
        if workers == 0 or workers < -1:
            raise RunError(f"Worker count must be positive or -1, got {workers}")
        self.workers = workers
        self.chunks_per_worker = chunks_per_worker
        self._running: Dict[str, RunState] = {}
        self._lock = threading.Lock()

    def chunk(self, items: Sequence[Any]) -> List[Sequence[Any]]:
        """Split items into contiguous chunks in their original order."""
        if not items:
            return []
        workers = (os.cpu_count() or 1) if self.workers == -1 else self.workers
        n_chunks = max(1, min(len(items), workers * self.chunks_per_worker))
        size = math.ceil(len(items) / n_chunks)
        return [items[i:i + size] for i in range(0, len(items), size)]

    def map(self, function: Callable[..., Any], items: Iterable[Any], *args, **kwargs) -> List[Any]:
        """Apply ``function(item, *args, **kwargs)`` to every item, keeping order."""
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [function(item, *args, **kwargs) for item in items]
        return Parallel(n_jobs=self.workers)(
            delayed(function)(item, *args, **kwargs) for item in items)

    def execute(self, command: str, run: Callable[['RunManifest', 'RunExecutor'], List[Path]],
                manifest: RunManifest) -> RunResult:
        """Run a subcommand and report its outcome.

        Args:
            command: Subcommand name
            run: Callable writing the outputs and returning their paths
            manifest: Run description

        Returns:
            RunResult; configuration and validation problems give exit code 1,
            anything else exit code 2

        Raises:
            ValueError: If the subcommand is already running
        """
        if self.is_running(command):
            raise ValueError(f"Command '{command}' is already running")

        start_time = time.time()
        timestamp = datetime.now()
        with self._lock:
            self._running[command] = RunState(command=command, running=True,
                                              started_at=timestamp,
                                              output_dir=manifest.output_dir)
        logger.info("Run started", extra={'command': command, 'output_dir': manifest.output_dir,
                                          'workers': self.workers})
        outputs: List[Path] = []
        error = None
        try:
            manifest.prepare()
            outputs = run(manifest, self)
            exit_code = EXIT_OK
        except (ConfigurationError, RunError, ValueError, OSError) as e:
            logger.error(f"Run failed: {e}", extra={'command': command})
            exit_code, error = EXIT_USER_ERROR, str(e)
        except Exception as e:
            logger.exception(f"Internal error in run: {e}", extra={'command': command})
            exit_code, error = EXIT_INTERNAL_ERROR, str(e)
        finally:
            with self._lock:
                self._running.pop(command, None)

        duration = time.time() - start_time
        logger.info("Run finished", extra={'command': command, 'exit_code': exit_code,
                                           'duration': duration, 'outputs': len(outputs)})
        return RunResult(command=command, exit_code=exit_code, duration=duration,
                         timestamp=timestamp, success=(exit_code == EXIT_OK), outputs=outputs,
                         error=error)

    def is_running(self, command: str) -> bool:
        """Check if a subcommand is currently running."""
        with self._lock:
            return command in self._running and self._running[command].running

    def get_running_commands(self) -> list:
        """Get list of currently running subcommands."""
        with self._lock:
            return list(self._running.keys())
