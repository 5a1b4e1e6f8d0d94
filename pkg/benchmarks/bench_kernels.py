"""Time the compiled and numpy kernel backends on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes mirror one training epoch on the default scenario: 100 query
vectors, 478 unlabeled vectors and 7 centers in 8 dimensions, plus KNN
over 200 stored embeddings.
"""
import argparse
import timeit

import numpy as np

from switchdiag import kernels


def cases(rng):
    V = rng.standard_normal((478, 8))
    C = rng.standard_normal((7, 8))
    Q = rng.standard_normal((100, 8))
    y = rng.integers(0, 7, 100)
    train = rng.standard_normal((200, 8))
    train_y = rng.integers(0, 7, 200)
    test = rng.standard_normal((200, 8))
    return {
        "sq_dists 478x7": lambda b: b.sq_dists(V, C),
        "neg_sq_softmax 478x7": lambda b: b.neg_sq_softmax(V, C),
        "proto_xent 100x7": lambda b: b.proto_xent(Q, C, y),
        "knn_vote 200q/200t k=10": lambda b: b.knn_vote(train, train_y, test, 10, 7),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    names = sorted(kernels.BACKENDS)
    print(f"{'kernel':26s}" + "".join(f"{n:>14s}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, fn in cases(rng).items():
        times = {}
        for n in names:
            b = kernels.get_backend(n)
            fn(b)  # warm up
            times[n] = min(timeit.repeat(lambda: fn(b), number=args.repeat, repeat=3)) / args.repeat
        row = f"{label:26s}" + "".join(f"{times[n] * 1e6:11.1f} us" for n in names)
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:6.2f}x"
        print(row)
    if "cython" not in names:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
