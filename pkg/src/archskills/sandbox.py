"""Sandboxed execution of model-written solver scripts.

Scripts run as a child Python process in a scratch directory with a
minimal allowlisted environment, a wall-clock limit enforced by killing
the whole process group, and a byte cap on captured output.  There is no
network or filesystem isolation beyond the scratch working directory;
callers must treat scripts as untrusted in that limited sense only.

``parse_result_line`` and ``ExecutionObservation`` are defined here and
re-exported by the rollout module, which consumes them.
"""

from __future__ import annotations

import math
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field

from .providers import MockExhausted

TRUNCATION_MARKER = "\n...[output truncated]"

# Environment variables forwarded into the child; credentials are
# deliberately absent.
ENV_ALLOWLIST = (
    "PATH",
    "HOME",
    "LANG",
    "LC_ALL",
    "TMPDIR",
    "PYTHONPATH",
    "VIRTUAL_ENV",
    "LD_LIBRARY_PATH",
)


class SpawnFailure(OSError):
    """The interpreter process could not be started."""


def parse_result_line(stdout: str) -> float | None:
    """Extract the reported objective value from script output.

    Scans for lines whose stripped form starts with ``RESULT:`` and parses
    the remainder as a float; the last such line wins.  Returns None when
    no line parses to a finite number.
    """
    value: float | None = None
    for line in stdout.splitlines():
        stripped = line.strip()
        if not stripped.startswith("RESULT:"):
            continue
        payload = stripped[len("RESULT:"):].strip()
        try:
            parsed = float(payload)
        except ValueError:
            continue
        if math.isfinite(parsed):
            value = parsed
    return value


@dataclass(frozen=True)
class ExecutionObservation:
    """Outcome of one script execution."""

    stdout: str
    stderr: str
    exit_status: int
    wall_time: float
    timed_out: bool
    parsed_result: float | None

    def to_record(self) -> dict:
        return {
            "stdout": self.stdout,
            "stderr": self.stderr,
            "exit_status": self.exit_status,
            "wall_time": self.wall_time,
            "timed_out": self.timed_out,
            "parsed_result": self.parsed_result,
        }

    @staticmethod
    def from_record(record: dict) -> "ExecutionObservation":
        return ExecutionObservation(
            stdout=record.get("stdout", ""),
            stderr=record.get("stderr", ""),
            exit_status=int(record.get("exit_status", 0)),
            wall_time=float(record.get("wall_time", 0.0)),
            timed_out=bool(record.get("timed_out", False)),
            parsed_result=(
                None if record.get("parsed_result") is None else float(record["parsed_result"])
            ),
        )


@dataclass(frozen=True)
class ExecutionLimits:
    """Resource limits for one execution."""

    wall_time_limit: float = 60.0
    max_stdout_bytes: int = 1_048_576
    working_directory: str | None = None
    interpreter_command: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.wall_time_limit <= 0:
            raise ValueError("wall_time_limit must be positive")
        if self.max_stdout_bytes <= 0:
            raise ValueError("max_stdout_bytes must be positive")


def _capped_drain(stream, cap: int, chunks: list[bytes], truncated: list[bool]) -> None:
    # Keep reading past the cap so the child never blocks on a full pipe.
    kept = 0
    while True:
        chunk = stream.read(65536)
        if not chunk:
            return
        if kept < cap:
            take = chunk[: cap - kept]
            chunks.append(take)
            kept += len(take)
            if len(take) < len(chunk):
                truncated[0] = True
        else:
            truncated[0] = True


class SubprocessExecutor:
    """Runs scripts in a child interpreter under ExecutionLimits."""

    def __init__(self, extra_env_keys: tuple[str, ...] = ()):
        self.extra_env_keys = tuple(extra_env_keys)

    def _child_env(self) -> dict[str, str]:
        env = {}
        for key in (*ENV_ALLOWLIST, *self.extra_env_keys):
            value = os.environ.get(key)
            if value is not None:
                env[key] = value
        return env

    def execute_script(self, code: str, limits: ExecutionLimits) -> ExecutionObservation:
        if not code.strip():
            raise ValueError("script code must be non-empty")
        owned_dir = None
        workdir = limits.working_directory
        if workdir is None:
            owned_dir = tempfile.mkdtemp(prefix="archskills-run-")
            workdir = owned_dir
        interpreter = limits.interpreter_command or (sys.executable,)
        script_path = os.path.join(workdir, "script.py")
        with open(script_path, "w", encoding="utf-8") as fh:
            fh.write(code)

        start = time.monotonic()
        try:
            try:
                process = subprocess.Popen(
                    [*interpreter, script_path],
                    cwd=workdir,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    env=self._child_env(),
                    start_new_session=True,
                )
            except (FileNotFoundError, PermissionError) as exc:
                raise SpawnFailure(f"cannot start interpreter {interpreter!r}: {exc}") from exc

            out_chunks: list[bytes] = []
            err_chunks: list[bytes] = []
            out_truncated = [False]
            err_truncated = [False]
            readers = [
                threading.Thread(
                    target=_capped_drain,
                    args=(process.stdout, limits.max_stdout_bytes, out_chunks, out_truncated),
                    daemon=True,
                ),
                threading.Thread(
                    target=_capped_drain,
                    args=(process.stderr, limits.max_stdout_bytes, err_chunks, err_truncated),
                    daemon=True,
                ),
            ]
            for reader in readers:
                reader.start()

            timed_out = False
            try:
                process.wait(timeout=limits.wall_time_limit)
            except subprocess.TimeoutExpired:
                timed_out = True
                try:
                    os.killpg(process.pid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    process.kill()
                process.wait()
            wall_time = time.monotonic() - start
            for reader in readers:
                reader.join(timeout=5.0)

            stdout = b"".join(out_chunks).decode("utf-8", errors="replace")
            stderr = b"".join(err_chunks).decode("utf-8", errors="replace")
            if out_truncated[0]:
                stdout += TRUNCATION_MARKER
            if err_truncated[0]:
                stderr += TRUNCATION_MARKER

            return ExecutionObservation(
                stdout=stdout,
                stderr=stderr,
                exit_status=process.returncode,
                wall_time=wall_time,
                timed_out=timed_out,
                parsed_result=parse_result_line(stdout),
            )
        finally:
            if owned_dir is not None:
                shutil.rmtree(owned_dir, ignore_errors=True)


@dataclass
class ScriptedExecutor:
    """Replays pre-recorded observations in call order.

    Submitted scripts are retained on ``submitted`` so tests can assert
    what the agent actually dispatched.  Running past the recorded list
    raises MockExhausted.
    """

    observations: list[ExecutionObservation]
    name: str = "scripted-executor"
    submitted: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self._cursor = 0

    @staticmethod
    def from_records(records: list[dict], name: str = "scripted-executor") -> "ScriptedExecutor":
        return ScriptedExecutor(
            [ExecutionObservation.from_record(rec) for rec in records], name=name
        )

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self.observations) - self._cursor

    def execute_script(self, code: str, limits: ExecutionLimits) -> ExecutionObservation:
        if not code.strip():
            raise ValueError("script code must be non-empty")
        with self._lock:
            if self._cursor >= len(self.observations):
                raise MockExhausted(
                    f"scripted executor '{self.name}' exhausted after {self._cursor} calls"
                )
            observation = self.observations[self._cursor]
            self._cursor += 1
            self.submitted.append(code)
        return observation
