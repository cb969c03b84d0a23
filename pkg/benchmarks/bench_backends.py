"""Compare the compiled kernels against the NumPy reference.

Times one full forward pass and one full gradient computation of a
mixed-operator network on both backends and prints the speedup.

    python3 benchmarks/bench_backends.py --size 60 --repeat 5
"""

import argparse
import statistics
import time

import numpy as np

from onnkit import Architecture, OnnModel, batch_gradient
from onnkit.backend import available_backends
from onnkit.experiments import ImagePair


def build_case(size, hidden, seed):
    arch = Architecture(hidden=(hidden, hidden))
    model = OnnModel(arch)
    rng = np.random.default_rng(seed)
    model.init_weights(rng, 0.1)
    # a spread of nodal operators so no single code path dominates
    sets = [0, 2, 4, 6, 1, 3, 5, 0, 2, 4, 6, 1][:hidden]
    model.assign_operators(1, sets)
    model.assign_operators(2, list(reversed(sets)))
    pairs = [ImagePair(f"p{i}", rng.uniform(-1, 1, (size, size)),
                       rng.uniform(-1, 1, (size, size))) for i in range(2)]
    return model, pairs


def timed(fn, repeat):
    fn()  # warmup
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=60)
    ap.add_argument("--hidden", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled extension not built; nothing to compare")

    model, pairs = build_case(args.size, args.hidden, args.seed)
    x = pairs[0].input

    results = {}
    for name in backends:
        fwd = timed(lambda: model.predict(x, backend=name), args.repeat)
        grad = timed(lambda: batch_gradient(model, pairs, backend=name),
                     args.repeat)
        results[name] = (fwd, grad)
        print(f"{name:>9}: forward {fwd * 1e3:8.2f} ms   "
              f"gradient {grad * 1e3:8.2f} ms")

    if "python" in results and "compiled" in results:
        pf, pg = results["python"]
        cf, cg = results["compiled"]
        print(f"  speedup: forward {pf / cf:5.1f}x   gradient {pg / cg:5.1f}x")
        out_p = model.predict(x, backend="python")
        out_c = model.predict(x, backend="compiled")
        print(f"  max forward deviation: {np.max(np.abs(out_p - out_c)):.2e}")


if __name__ == "__main__":
    main()
