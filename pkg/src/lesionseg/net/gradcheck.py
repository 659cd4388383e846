import numpy as np


def grad_check(f, x, analytic, samples=20, eps=1e-3, rng=None, floor=1e-12):
    """Max relative error between ``analytic`` and central differences of ``f``.

    ``f`` maps an array shaped like ``x`` to a scalar; ``x`` is perturbed on a
    private copy at ``samples`` random coordinates. Relative error is
    ``|a - n| / max(|a|, |n|)``, with ``floor`` guarding the all-zero case.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(x, copy=True)
    analytic = np.asarray(analytic)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} != point shape {x.shape}")
    flat = x.reshape(-1)
    k = min(samples, flat.size)
    idx = rng.choice(flat.size, size=k, replace=False)
    worst = 0.0
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = float(f(x))
        flat[i] = old - eps
        fm = float(f(x))
        flat[i] = old
        num = (fp - fm) / (2 * eps)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - num) / max(abs(a), abs(num), floor)
        worst = max(worst, err)
    return worst
