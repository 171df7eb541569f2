"""Subprocess adapter for external super-resolution models.

An adapter is any executable invoked as::

    <command...> --in <input.ppm> --out <output.ppm> --scale <r>

It must write the upscaled image to ``--out`` and exit 0. Stderr is kept for
diagnostics.
"""

from __future__ import annotations

import os
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..imaging import ImageBuffer, ImageFormatError, load_image, save_image

DEFAULT_TIMEOUT = 60.0


class AdapterError(RuntimeError):
    def __init__(self, message, returncode=None, stderr=""):
        super().__init__(message if not stderr else f"{message}\n--- adapter stderr ---\n{stderr}")
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class AdapterConfig:
    command: tuple[str, ...]
    timeout: float = DEFAULT_TIMEOUT
    max_concurrency: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        cmd = (self.command,) if isinstance(self.command, str) else tuple(self.command)
        if not cmd:
            raise ValueError("adapter command is empty")
        object.__setattr__(self, "command", cmd)
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


def bicubic_adapter_config(**kw) -> AdapterConfig:
    """Adapter that runs this package's own bicubic upscaler in a subprocess."""
    return AdapterConfig(command=(sys.executable, "-m", "aerialsr.sr.bicubic_adapter"), **kw)


_slots: dict[tuple, threading.BoundedSemaphore] = {}
_slots_lock = threading.Lock()


def _slot(adapter: AdapterConfig) -> threading.BoundedSemaphore:
    key = (adapter.command, adapter.max_concurrency)
    with _slots_lock:
        if key not in _slots:
            _slots[key] = threading.BoundedSemaphore(adapter.max_concurrency)
        return _slots[key]


def external_upscale(patch_path, r: int, adapter: AdapterConfig) -> ImageBuffer:
    """Run ``adapter`` on the image at ``patch_path`` and return its validated output."""
    src = load_image(patch_path)
    with tempfile.TemporaryDirectory(prefix="aerialsr-adapter-") as tmp:
        out_path = Path(tmp) / "out.ppm"
        argv = [*adapter.command, "--in", os.fspath(patch_path), "--out", str(out_path),
                "--scale", str(int(r))]
        with _slot(adapter):
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=adapter.timeout)
            except subprocess.TimeoutExpired as exc:
                stderr = exc.stderr.decode(errors="replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
                raise AdapterError(f"adapter timed out after {adapter.timeout}s", None, stderr) from None
            except OSError as exc:
                raise AdapterError(f"cannot start adapter {adapter.command[0]!r}: {exc}") from None
        if proc.returncode != 0:
            raise AdapterError(f"adapter exited with status {proc.returncode}", proc.returncode, proc.stderr)
        try:
            out = load_image(out_path)
        except (OSError, ImageFormatError) as exc:
            raise AdapterError(f"adapter output unreadable: {exc}", 0, proc.stderr) from None
    expected = (src.height * r, src.width * r, 3)
    if out.shape != expected:
        raise AdapterError(f"adapter output has shape {out.shape} (h, w, c), expected {expected}",
                           0, proc.stderr)
    return out


def external_upscale_image(patch: ImageBuffer, r: int, adapter: AdapterConfig) -> ImageBuffer:
    """Same as :func:`external_upscale` for an in-memory patch."""
    with tempfile.TemporaryDirectory(prefix="aerialsr-patch-") as tmp:
        p = Path(tmp) / "in.ppm"
        save_image(patch, p)
        return external_upscale(p, r, adapter)
