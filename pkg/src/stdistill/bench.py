"""Inference latency of the student against the dense-graph reference teacher."""
from __future__ import annotations

import ctypes
import ctypes.util
import time

import numpy as np

from . import data as sd
from .student import StudentConfig, StudentModel
from .teacher import RefTeacher

DEFAULT_NODES = (50, 100, 200, 400, 800)

# glibc mallopt parameters
_M_TRIM_THRESHOLD, _M_TOP_PAD, _M_MMAP_THRESHOLD = -1, -2, -3


def keep_freed_memory() -> bool:
    """Stop glibc from handing large freed buffers back to the kernel.

    Otherwise every forward pass at large N pays fresh page faults for its
    multi-megabyte intermediates, a cost that grows faster than the arithmetic
    and drowns the comparison. Returns False where glibc is unavailable.
    """
    name = ctypes.util.find_library("c")
    if name is None:
        return False
    try:
        mallopt = ctypes.CDLL(name).mallopt
    except (OSError, AttributeError):
        return False
    big = 1 << 30
    return all(mallopt(p, v) == 1 for p, v in
               ((_M_MMAP_THRESHOLD, 1 << 25), (_M_TRIM_THRESHOLD, big), (_M_TOP_PAD, 1 << 27)))


def _mean_time(fn, reps: int) -> float:
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps


def latency_table(nodes=DEFAULT_NODES, reps: int = 100, warmup: int = 10, history: int = 12,
                  horizon: int = 12, d: int = 64, teacher_hidden: int = 64, steps_per_day: int = 288,
                  seed: int = 0, rounds: int = 5) -> list[dict]:
    """Mean seconds per single-window forward pass for untrained models at each graph size.

    Both models get the same hidden width so only the graph mixing separates them.
    Each round times every size once; a size keeps its best round, which filters
    scheduler noise without letting one quiet stretch favor a single size.
    """
    if reps < 1 or rounds < 1:
        raise ValueError("reps and rounds must be positive")
    keep_freed_memory()
    calls = []
    for n in nodes:
        rng = np.random.default_rng([seed, n])
        adjacency = sd.build_graph("grid", n)
        student = StudentModel(StudentConfig(n, steps_per_day, 1, history, horizon, d, d), rng)
        teacher = RefTeacher.init(rng, adjacency, history, horizon, 1, teacher_hidden)
        x = rng.normal(size=(1, history, n, 1))
        steps = np.arange(history)
        tod = sd.tod_for_steps(steps, steps_per_day)[None]
        dow = sd.dow_for_steps(steps, steps_per_day)[None]
        beta = student.frozen_transitional()
        calls.append((
            lambda s=student, x=x, tod=tod, dow=dow, beta=beta: s.predict(x, tod, dow, np.array([0]), beta),
            lambda t=teacher, x=x: t.forward(x),
        ))
    best = np.full((len(calls), 2), np.inf)
    for _ in range(rounds):
        for i, pair in enumerate(calls):
            for j, fn in enumerate(pair):
                for _ in range(warmup):
                    fn()
                best[i, j] = min(best[i, j], _mean_time(fn, reps))
    return [{
        "nodes": n,
        "student_ms": float(best[i, 0] * 1e3),
        "teacher_ms": float(best[i, 1] * 1e3),
        "ratio": float(best[i, 1] / best[i, 0]),
        "reps": reps,
        "rounds": rounds,
    } for i, n in enumerate(nodes)]
