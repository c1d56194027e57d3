"""Time the numba kernels against the pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case runs once per backend to warm up (and check the two paths agree),
then reports the best of ``--repeat`` timings.
"""

import argparse
import time

import numpy as np

from spherecrits import _accel, field, kacrice, legendre


def _cases():
    x = np.linspace(-0.999, 0.999, 20001)
    f = field.sample(60, 7)
    th = np.linspace(0.05, np.pi - 0.05, 20000)
    ph = np.linspace(0.0, 2 * np.pi, 20000)
    P = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)
    a = np.full(8, 0.05)
    cfg = kacrice.McConfig(samples=400_000, seed=1)
    return [
        ("legendre p_block l=2000", lambda: legendre.p_block(2000, x, 2)),
        ("legendre jet_ladder l=500", lambda: legendre.jet_ladder(500, x, 4)),
        ("field meridian jets l=60", lambda: field._sph(f, th, ph)),
        ("field 3d jets l=60", lambda: field._euclid_jets(f.degree, f._cc, f._ss, P)),
        ("kac-rice detprod 4e5", lambda: kacrice.q_of_a(a, cfg).value),
        ("field find_critical l=30", lambda: field.find_critical(field.sample(30, 3)).n_c),
    ]


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _same(u, v):
    if isinstance(u, tuple):
        return all(_same(a, b) for a, b in zip(u, v))
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return u.shape == v.shape and np.allclose(u, v, rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':28s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  agree")
    for name, fn in _cases():
        res = {}
        t = {}
        for be in ("numba", "numpy"):
            with _accel.use_backend(be):
                res[be] = fn()
                t[be] = _best(fn, args.repeat)
        ok = _same(res["numba"], res["numpy"])
        print(f"{name:28s} {t['numba']:10.4f} {t['numpy']:10.4f} {t['numpy'] / t['numba']:8.1f}  {ok}")


if __name__ == "__main__":
    main()
