"""Append-only run directories with a per-run rotating log file."""

import json
import logging
import traceback
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Union

import pandas as pd

PACKAGE_LOGGER = "aidc_utils"
STAGE_FAILED_FILE = "stage_failed.json"


class StageError(RuntimeError):
    """A pipeline stage failed; the partially written run directory is kept."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

    def __reduce__(self):
        return (StageError, (self.stage, self.cause))


class RunDirectory:
    """One run's output directory.

    Record files are written once and never overwritten; report files (``report/``)
    are regenerated in place. While the directory is open as a context manager every
    ``aidc_utils`` log record is also written to ``logs/aidc_<run_name>.log``.
    """

    def __init__(self, path: Union[str, Path], logging_level: str = "INFO"):
        """Initialize a run directory at an exact path (created if missing).

        Args:
            path: directory of the run
            logging_level: console level while the run is open
        """
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.logging_level = logging_level.upper()
        self.run_name = "_".join(self.path.parts[-2:])
        self.logger = logging.getLogger(PACKAGE_LOGGER)
        self._handlers: list = []
        self._saved_state: Optional[tuple] = None

    @classmethod
    def create(cls, root: Union[str, Path], *parts: str, logging_level: str = "INFO") -> "RunDirectory":
        """Create a fresh directory under root; an existing one gets a numeric suffix instead of being reused."""
        base = Path(root).joinpath(*parts)
        candidate, suffix = base, 0
        while candidate.exists():
            suffix += 1
            candidate = base.with_name(f"{base.name}-{suffix:03d}")
        return cls(candidate, logging_level)

    @classmethod
    def open_existing(cls, path: Union[str, Path], logging_level: str = "INFO") -> "RunDirectory":
        path = Path(path)
        if not path.is_dir():
            raise FileNotFoundError(f"run directory does not exist: {path}")
        return cls(path, logging_level)

    def child(self, name: str) -> "RunDirectory":
        """Sub-run sharing this run's log file."""
        return RunDirectory(self.path / name, self.logging_level)

    # ------------------------------------------------------------------
    # logging
    # ------------------------------------------------------------------

    def _setup_logging(self) -> logging.Logger:
        """Attach the rotating file handler and a filtered console handler to the package logger."""
        logger = self.logger
        log_file = self.path / "logs" / f"aidc_{self.run_name}.log"
        already = any(
            isinstance(h, RotatingFileHandler) and Path(h.baseFilename) == log_file.resolve() for h in logger.handlers
        )
        if already:
            return logger

        self._saved_state = (logger.propagate, logger.level)
        # Prevent propagation to root logger to avoid double logging
        logger.propagate = False

        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=1 * 1024 * 1024,  # 1MB
            backupCount=5,
            encoding="utf-8",
        )
        console_handler = logging.StreamHandler()
        console_handler.setLevel(getattr(logging, self.logging_level, logging.INFO))

        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        file_handler.setFormatter(formatter)
        console_handler.setFormatter(formatter)

        logger.addHandler(file_handler)
        logger.addHandler(console_handler)
        logger.setLevel(logging.DEBUG)  # File gets all messages, console filtered above
        self._handlers = [file_handler, console_handler]
        return logger

    def _teardown_logging(self) -> None:
        for handler in self._handlers:
            self.logger.removeHandler(handler)
            handler.close()
        self._handlers = []
        if self._saved_state is not None:
            self.logger.propagate, level = self._saved_state
            self.logger.setLevel(level)
            self._saved_state = None

    def __enter__(self):
        """Context manager entry."""
        self._setup_logging()
        self.logger.info(f"Run directory {self.path}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Context manager exit."""
        self._teardown_logging()

    # ------------------------------------------------------------------
    # files
    # ------------------------------------------------------------------

    def file(self, relative: str) -> Path:
        return self.path / relative

    def exists(self, relative: str) -> bool:
        return (self.path / relative).exists()

    def _target(self, relative: str, overwrite: bool) -> Path:
        target = self.path / relative
        if target.exists() and not overwrite:
            raise FileExistsError(f"run directories are append-only, {target} already exists")
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_json(self, relative: str, payload: Mapping[str, Any], overwrite: bool = False) -> Path:
        target = self._target(relative, overwrite)
        target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target

    def write_text(self, relative: str, text: str, overwrite: bool = False) -> Path:
        target = self._target(relative, overwrite)
        target.write_text(text, encoding="utf-8")
        return target

    def write_frame(self, relative: str, frame: pd.DataFrame, overwrite: bool = False) -> Path:
        target = self._target(relative, overwrite)
        frame.to_csv(target, index=False)
        return target

    def read_json(self, relative: str) -> dict:
        try:
            return json.loads((self.path / relative).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise FileNotFoundError(f"cannot read {self.path / relative}: {e}") from e

    def read_frame(self, relative: str) -> pd.DataFrame:
        target = self.path / relative
        if not target.is_file():
            raise FileNotFoundError(f"missing run file {target}")
        return pd.read_csv(target)

    # ------------------------------------------------------------------
    # stages
    # ------------------------------------------------------------------

    @contextmanager
    def stage(self, name: str) -> Iterator["RunDirectory"]:
        """Run one pipeline stage; a failure writes stage_failed.json and raises StageError."""
        self.logger.info(f"Stage '{name}' started")
        try:
            yield self
        except StageError:
            raise
        except Exception as e:
            self.logger.error(f"Stage '{name}' failed: {e}")
            self.logger.debug(traceback.format_exc())
            payload = {"stage": name, "error": type(e).__name__, "message": str(e)}
            self.write_json(STAGE_FAILED_FILE, payload, overwrite=True)
            raise StageError(name, e) from e
        self.logger.info(f"Stage '{name}' completed")
