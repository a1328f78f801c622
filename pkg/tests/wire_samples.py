"""Random wire messages shared by the transport and acceptance tests."""

import numpy as np

from dfd.transport import EsPairMsg, EvalMsg, Hello, PolicyMsg, Shutdown

U32 = 2**32 - 1
U64 = 2**64 - 1


def random_message(rng: np.random.Generator):
    kind = rng.integers(5)
    if kind == 0:
        return EvalMsg(int(rng.integers(0, 2**64, dtype=np.uint64)),
                       float(rng.standard_normal() * 10.0 ** rng.integers(-5, 6)),
                       int(rng.integers(0, U32)), int(rng.integers(0, U32)))
    if kind == 1:
        return PolicyMsg(int(rng.integers(0, U32)), rng.standard_normal(int(rng.integers(0, 40))))
    if kind == 2:
        return Hello(int(rng.integers(0, U32)))
    if kind == 3:
        return Shutdown()
    return EsPairMsg(int(rng.integers(0, 2**64, dtype=np.uint64)),
                     float(rng.standard_normal()), float(rng.standard_normal()),
                     int(rng.integers(0, U32)), int(rng.integers(0, U32)))


def random_chunks(data: bytes, rng: np.random.Generator) -> list[bytes]:
    cuts = np.sort(rng.integers(0, len(data) + 1, size=int(rng.integers(0, 40))))
    bounds = [0, *cuts.tolist(), len(data)]
    return [data[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
