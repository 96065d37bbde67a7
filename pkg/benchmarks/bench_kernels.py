"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Times the raw kernels at a few batch sizes, then one full recourse
batch (VAE decoder + MLP classifier, 200 iterations) under each backend.
"""

import argparse
import time
import timeit

import numpy as np

from latent_recourse import kernels
from latent_recourse.genmodel import train_vae
from latent_recourse.nn import train_classifier
from latent_recourse.revise import ReviseConfig, revise_batch
from latent_recourse.synth import synth_classification


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n, d, h in [(32, 16, 32), (256, 16, 32), (1024, 64, 64)]:
        x = rng.normal(size=(n, d))
        w = rng.normal(size=(d, h))
        b = rng.normal(size=h)
        g = rng.normal(size=(n, h))
        bounds = np.arange(0, h + 1, 4, dtype=np.int64)
        for name in kernels.available_backends():
            k = kernels.load_backend(name)
            out = k.dense_forward(x, w, b, 2)
            t_f = min(timeit.repeat(lambda: k.dense_forward(x, w, b, 2), number=50, repeat=repeat)) / 50
            t_b = min(timeit.repeat(lambda: k.dense_backward(x, w, out, g, 2), number=50, repeat=repeat)) / 50
            t_s = min(timeit.repeat(lambda: k.segment_log_softmax(g, bounds), number=50, repeat=repeat)) / 50
            rows.append((f"{n}x{d}->{h}", name, t_f * 1e6, t_b * 1e6, t_s * 1e6))
    print(f"{'shape':<16}{'backend':<9}{'fwd us':>10}{'bwd us':>10}{'lsm us':>10}")
    for r in rows:
        print(f"{r[0]:<16}{r[1]:<9}{r[2]:>10.1f}{r[3]:>10.1f}{r[4]:>10.1f}")


def recourse_timing():
    ds = synth_classification(3000, seed=0)
    tr, _, te = ds.split(seed=0)
    clf = train_classifier(tr.X, tr.labels, "mlp", epochs=5, seed=0)
    vae = train_vae(tr, latent_dim=2, epochs=5, seed=0, conditional=True)
    x = te.features[te.labels == -1][:256]
    cfg = ReviseConfig(tau_max=200)
    results = {}
    for name in kernels.available_backends():
        prev = kernels.use_backend(name)
        t = time.perf_counter()
        res = revise_batch(x, clf, vae, 0.1, cfg)
        results[name] = (time.perf_counter() - t, np.array([r.x_prime for r in res]))
        kernels.use_backend(prev)
    for name, (sec, _) in results.items():
        print(f"revise 256 rows x 200 it  {name:<8}{sec:8.3f} s")
    if len(results) == 2:
        a, b = (v[1] for v in results.values())
        print(f"max |x' difference| between backends: {np.max(np.abs(a - b)):.3g}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    kernel_table(args.repeat)
    recourse_timing()
