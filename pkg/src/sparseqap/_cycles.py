"""Cycle-counter access from jitted code, used for per-phase timing."""
import time
from functools import lru_cache

from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic


@intrinsic
def _readcyclecounter(typingctx):
    sig = types.int64()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(64), [])
        fn = builder.module.declare_intrinsic("llvm.readcyclecounter", fnty=fnty)
        return builder.call(fn, [])

    return sig, codegen


@njit(cache=False)
def cycles():
    return _readcyclecounter()


@lru_cache(maxsize=None)
def cycles_per_second() -> float:
    """Calibrate the counter against ``perf_counter``; 0.0 if the counter is unavailable."""
    cycles()
    t0, c0 = time.perf_counter(), cycles()
    while time.perf_counter() - t0 < 0.05:
        pass
    t1, c1 = time.perf_counter(), cycles()
    if c1 <= c0:
        return 0.0
    return (c1 - c0) / (t1 - t0)
