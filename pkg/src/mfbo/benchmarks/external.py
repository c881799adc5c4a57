"""Line-delimited JSON protocol for objectives computed by an external program.

Each request is one line ``{"x": [...], "fidelity": t}`` written to the
child's standard input; the child answers with one line, either
``{"f": value}`` or ``{"error": "message"}``.  The child is started on the
first call and stays alive until :meth:`ExternalEvaluator.close` (or until
the evaluator is garbage collected), so one trial talks to one process.
"""
from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
import weakref

import numpy as np

from ..gp import BoxDomain
from .functions import BenchmarkProblem


class EvaluationError(RuntimeError):
    """The external program failed to produce a usable value."""


def _pump(stream, q):
    for line in iter(stream.readline, ""):
        q.put(line)
    q.put(None)


def _terminate(proc):
    if proc.poll() is None:
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class ExternalEvaluator:
    """Persistent connection to an evaluator subprocess.

    Parameters
    ----------
    command : str or sequence of str
        Program and arguments; a string is split with shell rules.
    timeout : float
        Seconds to wait for each reply.
    """

    def __init__(self, command, timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else [str(c) for c in command]
        if not self.command:
            raise ValueError("empty evaluator command")
        if not timeout > 0:
            raise ValueError("timeout must be positive")
        self.timeout = float(timeout)
        self._proc = None
        self._lines = None
        self._lock = threading.Lock()

    # the child process never travels with a pickled copy; every copy starts its own
    def __getstate__(self):
        return {"command": self.command, "timeout": self.timeout}

    def __setstate__(self, state):
        self.__init__(state["command"], state["timeout"])

    def _start(self):
        try:
            proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                    text=True, encoding="utf-8", bufsize=1)
        except OSError as exc:
            raise EvaluationError(f"cannot launch {self.command[0]!r}: {exc}") from exc
        self._lines = queue.Queue()
        threading.Thread(target=_pump, args=(proc.stdout, self._lines), daemon=True).start()
        self._proc = proc
        self._finalizer = weakref.finalize(self, _terminate, proc)

    def close(self):
        if self._proc is not None:
            self._finalizer()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _fail(self, msg):
        self.close()
        raise EvaluationError(msg)

    def __call__(self, x, fidelity: int) -> float:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self._start()
            request = json.dumps({"x": [float(v) for v in np.ravel(x)], "fidelity": int(fidelity)})
            try:
                self._proc.stdin.write(request + "\n")
                self._proc.stdin.flush()
            except OSError as exc:
                self._fail(f"evaluator input closed: {exc}")
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                self._fail(f"evaluator timed out after {self.timeout:g} s")
            if line is None:
                code = self._proc.wait()
                self._fail(f"evaluator exited with status {code} before replying")
            try:
                reply = json.loads(line)
            except json.JSONDecodeError:
                self._fail(f"malformed evaluator reply: {line.strip()[:200]!r}")
            if not isinstance(reply, dict):
                self._fail(f"malformed evaluator reply: {line.strip()[:200]!r}")
            if "error" in reply:
                raise EvaluationError(f"evaluator error: {reply['error']}")
            try:
                f = float(reply["f"])
            except (KeyError, TypeError, ValueError):
                self._fail(f"malformed evaluator reply: {line.strip()[:200]!r}")
            if not math.isfinite(f):
                raise EvaluationError(f"evaluator returned a non-finite value {f!r}")
            return f


def external_evaluator(command, x, fidelity: int, timeout: float = 60.0) -> float:
    """One-shot evaluation: start the program, ask once, shut it down."""
    with ExternalEvaluator(command, timeout) as ev:
        return ev(x, fidelity)


class _FidelityView:
    def __init__(self, evaluator, t):
        self.evaluator = evaluator
        self.t = t

    def __call__(self, x):
        return self.evaluator(x, self.t)


def external_problem(command, lower, upper, costs, *, timeout=60.0, name="external",
                     f_star=None) -> BenchmarkProblem:
    """Wrap an external program as a :class:`BenchmarkProblem` with ``len(costs)`` fidelities."""
    ev = ExternalEvaluator(command, timeout)
    costs = np.asarray(costs, dtype=float).ravel()
    views = tuple(_FidelityView(ev, t) for t in range(1, costs.size + 1))
    return BenchmarkProblem(name, BoxDomain(lower, upper), views, costs, f_star=f_star)


def close_problem(problem: BenchmarkProblem):
    """Shut down any evaluator processes behind ``problem``."""
    for f in problem.evaluators:
        ev = getattr(f, "evaluator", None)
        if isinstance(ev, ExternalEvaluator):
            ev.close()
