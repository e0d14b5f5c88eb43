"""Built-in hydraulic model and pluggable black-box model interfaces.

A model is a callable taking an (n, d) array of input rows and returning an
(n,) array of outputs, plus a ``dims`` attribute.  Built-ins are pure numpy;
external models speak CSV (nearest-neighbor table) or a line protocol over a
subprocess.
"""

from __future__ import annotations

import csv
import subprocess
import threading
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ModelDomainError(ValueError):
    """Inputs outside the model's domain; carries the first offending row."""

    def __init__(self, message: str, row=None):
        super().__init__(message)
        self.row = row


class ModelFailureError(RuntimeError):
    """External model misbehaved; carries the input row it choked on."""

    def __init__(self, message: str, row=None):
        super().__init__(message)
        self.row = row


def hydraulic_height(j, ks, zv, zm):
    """Water height H = (J / (300 Ks sqrt((Zm - Zv)/5000)))^(3/5), meters.

    Needs Ks > 0, Zm > Zv and J >= 0; raises ModelDomainError otherwise.
    """
    j = np.asarray(j, dtype=float)
    ks = np.asarray(ks, dtype=float)
    zv = np.asarray(zv, dtype=float)
    zm = np.asarray(zm, dtype=float)
    bad = zm <= zv
    if np.any(bad):
        raise ModelDomainError("Zm <= Zv leaves the slope undefined",
                               row=_first_bad(bad, j, ks, zv, zm))
    bad = ks <= 0
    if np.any(bad):
        raise ModelDomainError("Ks must be positive",
                               row=_first_bad(bad, j, ks, zv, zm))
    bad = j < 0
    if np.any(bad):
        raise ModelDomainError("flow rate J must be nonnegative",
                               row=_first_bad(bad, j, ks, zv, zm))
    return (j / (300.0 * ks * np.sqrt((zm - zv) / 5000.0))) ** 0.6


def _first_bad(mask, *cols):
    mask = np.atleast_1d(mask)
    idx = int(np.argmax(mask))
    return tuple(float(np.atleast_1d(c)[idx if np.atleast_1d(c).size > 1 else 0])
                 for c in cols)


class HydraulicHeightModel:
    """G(J, Ks, Zv, Zm) = H."""

    kind = "hydraulic_height"
    dims = 4

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return hydraulic_height(x[..., 0], x[..., 1], x[..., 2], x[..., 3])


class HydraulicLevelModel:
    """G = Z_v + H, the water level rather than the height above Z_v."""

    kind = "hydraulic_level"
    dims = 4

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., 2] + hydraulic_height(x[..., 0], x[..., 1], x[..., 2], x[..., 3])


def conditional_failure_prob(rho, beta, ks, zv, zm, h, *,
                             convention: str = "level",
                             literal_form: bool = False):
    """P(output <= h) given Gumbel(rho, beta) flow and fixed (Ks, Zv, Zm).

    Closed form: the event is J <= q(h), so the probability is the Gumbel CDF
    exp(-exp(-(q(h) - rho)/beta)) with

        q(h) = 300 Ks sqrt((Zm - Zv)/5000) * (h - Zv)^(5/3)   (level)
        q(h) = 300 Ks sqrt((Zm - Zv)/5000) * h^(5/3)          (height)

    Under the level convention, h <= Zv admits no flow; the probability is 0
    by convention (a warning flags it).  ``literal_form`` switches to the
    variant with beta multiplying the residual instead of dividing it; it is
    not dimensionally consistent with beta ~ 190 and exists only for
    comparison.
    """
    if convention not in ("level", "height"):
        raise ValueError(f"unknown convention {convention!r}")
    rho, beta, ks, zv, zm, h = np.broadcast_arrays(
        *[np.asarray(v, dtype=float) for v in (rho, beta, ks, zv, zm, h)])
    if np.any(beta <= 0):
        raise ModelDomainError("Gumbel scale beta must be positive")
    if np.any(zm <= zv):
        raise ModelDomainError("Zm <= Zv leaves the slope undefined")
    coef = 300.0 * ks * np.sqrt((zm - zv) / 5000.0)
    if convention == "level":
        depth = h - zv
        below = depth <= 0
        if np.any(below):
            warnings.warn("level h <= Zv: failure probability 0 by convention",
                          RuntimeWarning, stacklevel=2)
        depth = np.where(below, 0.0, depth)
    else:
        depth = np.maximum(h, 0.0)
        below = h <= 0
    q = coef * depth ** (5.0 / 3.0)
    if literal_form:
        expo = np.clip(beta * (rho - q), -700.0, 700.0)
    else:
        expo = np.clip(-(q - rho) / beta, -700.0, 700.0)
    out = np.where(below, 0.0, np.exp(-np.exp(expo)))
    return float(out) if out.ndim == 0 else out


class ExternalTableModel:
    """Nearest-neighbor lookup over a CSV grid with header x1,...,xd,y."""

    kind = "external_table"

    def __init__(self, path: str):
        self.path = str(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ModelFailureError(f"{path}: empty table")
            d = len(header) - 1
            if d < 1 or header != [f"x{i}" for i in range(1, d + 1)] + ["y"]:
                raise ModelFailureError(
                    f"{path}: header must be x1,...,xd,y, got {header}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                try:
                    rows.append([float(v) for v in rec])
                except ValueError:
                    raise ModelFailureError(f"{path}:{lineno}: non-numeric entry",
                                            row=rec)
                if len(rec) != d + 1:
                    raise ModelFailureError(f"{path}:{lineno}: expected {d + 1} columns",
                                            row=rec)
        if not rows:
            raise ModelFailureError(f"{path}: table has no data rows")
        data = np.asarray(rows, dtype=float)
        self.dims = d
        self._x = data[:, :d]
        self._y = data[:, d]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dims)
        out = np.empty(len(x))
        # chunk the pairwise distances to keep memory flat on big queries
        step = max(1, 2_000_000 // max(1, len(self._x)))
        for start in range(0, len(x), step):
            block = x[start:start + step]
            d2 = ((block[:, None, :] - self._x[None, :, :]) ** 2).sum(axis=2)
            out[start:start + step] = self._y[np.argmin(d2, axis=1)]
        return out


class ExternalCommandModel:
    """Black box spoken to over stdin/stdout, one row in, one number out.

    Protocol: each request is one line of whitespace-separated decimal
    inputs; the process answers with one decimal per line, in order.  A pool
    of ``sessions`` subprocesses may serve chunks concurrently; each session
    is exclusive to one worker and results are reassembled by index, so the
    pool size never changes the output.
    """

    kind = "external_command"

    def __init__(self, argv: Sequence[str], dims: int, sessions: int = 1):
        self.argv = list(argv)
        self.dims = int(dims)
        self._n_sessions = max(1, int(sessions))
        self._procs: list[subprocess.Popen | None] = [None] * self._n_sessions
        self._locks = [threading.Lock() for _ in range(self._n_sessions)]

    def _session(self, i: int) -> subprocess.Popen:
        proc = self._procs[i]
        if proc is None or proc.poll() is not None:
            proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE,
                                    stdout=subprocess.PIPE, text=True,
                                    bufsize=1)
            self._procs[i] = proc
        return proc

    def _eval_chunk(self, i: int, rows: np.ndarray) -> np.ndarray:
        out = np.empty(len(rows))
        with self._locks[i]:
            proc = self._session(i)
            for k, row in enumerate(rows):
                line = " ".join(repr(float(v)) for v in row)
                try:
                    proc.stdin.write(line + "\n")
                    proc.stdin.flush()
                    answer = proc.stdout.readline()
                except (BrokenPipeError, OSError) as exc:
                    raise ModelFailureError(f"model process died: {exc}",
                                            row=tuple(row)) from exc
                if answer == "":
                    raise ModelFailureError("model process closed its output",
                                            row=tuple(row))
                try:
                    val = float(answer.strip())
                except ValueError:
                    raise ModelFailureError(
                        f"model answered non-numeric line {answer.strip()!r}",
                        row=tuple(row))
                if not np.isfinite(val):
                    raise ModelFailureError(f"model answered non-finite {val!r}",
                                            row=tuple(row))
                out[k] = val
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dims)
        n = self._n_sessions
        if n == 1 or len(x) < 2 * n:
            return self._eval_chunk(0, x)
        bounds = np.linspace(0, len(x), n + 1).astype(int)
        parts: list[np.ndarray | None] = [None] * n
        threads = []
        errors: list[Exception] = []

        def work(i):
            try:
                parts[i] = self._eval_chunk(i, x[bounds[i]:bounds[i + 1]])
            except Exception as exc:  # reraised on the caller thread
                errors.append(exc)

        for i in range(n):
            t = threading.Thread(target=work, args=(i,))
            t.start()
            threads.append(t)
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        return np.concatenate([p for p in parts if p is not None])

    def close(self):
        for proc in self._procs:
            if proc is not None and proc.poll() is None:
                proc.stdin.close()
                proc.wait(timeout=5)

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
