"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; prints microseconds per call.
"""
import argparse
import timeit

import numpy as np

from dsvs import kernels


def fdm_case(rng, K):
    w = rng.uniform(0.05, 0.4, size=K)
    t = rng.normal(size=(K, 3))
    t *= (rng.uniform(0, 0.9, size=K) * w * np.exp(0.5) / np.linalg.norm(t, axis=1))[:, None]
    c = rng.uniform(-0.3, 0.3, size=(K, 3))
    z = rng.uniform(-0.3, 0.3, size=3)
    return c, t, w, z


def gmr_case(rng, k):
    A = rng.normal(size=(k, 3, 3))
    prec = np.einsum("kij,klj->kil", A, A) + np.eye(3)
    return (rng.normal(size=3), rng.normal(size=(k, 3)), prec, rng.normal(size=(k, 3, 3)),
            rng.normal(size=(k, 3)), rng.normal(size=k))


def wsaqf_case(rng, L):
    def spd():
        A = rng.normal(size=(3, 3))
        return A @ A.T + np.eye(3)
    return rng.normal(size=3), spd(), np.array([spd() for _ in range(L)]), rng.normal(size=(L, 3))


def cases(K, k, L, seed=0):
    rng = np.random.default_rng(seed)
    c, t, w, z = fdm_case(rng, K)
    y = kernels.python.lwt_forward(c, t, w, z)
    x, mu, prec, A, b, log_c = gmr_case(rng, k)
    eps, P0, P, mu_l = wsaqf_case(rng, L)
    return {
        f"lwt_forward K={K}": ("lwt_forward", (c, t, w, z)),
        f"lwt_forward_jacobian K={K}": ("lwt_forward_jacobian", (c, t, w, z)),
        f"lwt_inverse K={K}": ("lwt_inverse", (c, t, w, y)),
        f"gmr_mean k={k}": ("gmr_mean", (x, mu, prec, A, b, log_c)),
        f"wsaqf_value_grad L={L}": ("wsaqf_value_grad", (eps, P0, P, mu_l)),
    }


def per_call_us(fn, args, repeat):
    number = max(1, repeat)
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=5))
    return 1e6 * best / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=150, help="translation steps")
    ap.add_argument("--k", type=int, default=11, help="GMR components")
    ap.add_argument("--L", type=int, default=2, help="asymmetric CLF components")
    ap.add_argument("--number", type=int, default=200, help="calls per timing")
    args = ap.parse_args(argv)
    backends = [("python", kernels.python)]
    if kernels.compiled is not None:
        backends.append(("cython", kernels.compiled))
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name, _ in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    for label, (fn, fargs) in cases(args.K, args.k, args.L).items():
        times = [per_call_us(getattr(mod, fn), fargs, args.number) for _, mod in backends]
        line = f"{label:<28}" + "".join(f"{t:>10.1f}us" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
