"""Time the numba and numpy paths of every kernel in ``hat.kernels``.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the ``HAT_NUMBA`` flag does not matter
here. Each row also checks that the two paths agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hat import kernels as K


def _best(fn, repeat):
    fn()  # warm-up (and JIT compile for the numba path)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(rng):
    pos = np.round(rng.standard_normal(2000), 2)
    neg = np.round(rng.standard_normal(2000), 2)
    yield "pair_count 2000x2000", (lambda: K._pair_count_nb(pos, neg)), (lambda: K._pair_count_np(pos, neg)), np.array_equal

    lo, hi, rank = K._rank_tables(pos[:300], neg[:300])
    pi = rng.integers(0, 300, size=(512, 300))
    ni = rng.integers(0, 300, size=(512, 300))
    yield (
        "bootstrap 512 resamples",
        lambda: K._bootstrap_counts_nb(lo, hi, rank, pi, ni),
        lambda: K._bootstrap_counts_np(lo, hi, rank, pi, ni),
        np.array_equal,
    )

    outfits = [rng.choice(150, size=rng.integers(2, 5), replace=False) for _ in range(800)]
    groups = [np.concatenate(outfits[20 * g : 20 * g + 20]) for g in range(40)]
    op, oi = K.to_csr(outfits)
    gp, gi = K.to_csr(groups)
    yield (
        "overlap 40 groups x 800 outfits",
        lambda: K._overlap_nb(op, oi, gp, gi, 150),
        lambda: K._overlap_np(op, oi, gp, gi, 150),
        np.array_equal,
    )

    idx = rng.integers(0, 300, size=5000)
    g = rng.standard_normal((5000, 64))

    def scatter_np():
        out = np.zeros((300, 64))
        np.add.at(out, idx, g)
        return out

    def scatter_nb():
        out = np.zeros((300, 64))
        K._scatter_rows_nb(idx, g, out)
        return out

    yield "scatter rows 5000x64", scatter_nb, scatter_np, np.array_equal

    # feed-forward activation at training-batch size
    x = rng.standard_normal((200, 4, 256)) * 2
    gx = rng.standard_normal(x.shape)
    _, t = K._gelu_fwd_np(x)

    def gelu_fwd_nb():
        u = np.empty_like(x)
        K._gelu_inner_nb(x.reshape(-1), u.reshape(-1))
        tt = np.tanh(u, out=u)
        y = np.empty_like(x)
        K._gelu_outer_nb(x.reshape(-1), tt.reshape(-1), y.reshape(-1))
        return y

    def gelu_bwd_nb():
        out = np.empty_like(x)
        K._gelu_bwd_nb(x.reshape(-1), t.reshape(-1), gx.reshape(-1), out.reshape(-1))
        return out

    yield "gelu forward 200x4x256", gelu_fwd_nb, lambda: K._gelu_fwd_np(x)[0], np.array_equal
    yield "gelu backward 200x4x256", gelu_bwd_nb, lambda: K._gelu_bwd_np(x, t, gx), np.array_equal


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if K.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<34}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  agree")
    for name, nb, npf, same in cases(rng):
        t_nb, t_np = _best(nb, args.repeat), _best(npf, args.repeat)
        ok = same(nb(), npf())
        print(f"{name:<34}{1e3 * t_nb:>10.3f}{1e3 * t_np:>10.3f}{t_np / t_nb:>8.1f}x  {ok}")


if __name__ == "__main__":
    main()
