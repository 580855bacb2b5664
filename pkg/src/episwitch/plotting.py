"""PNG renderings of command outputs (used by ``episwitch ... --figures``)."""

from __future__ import annotations

import numpy as np

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    _pyplot().close(fig)


def _shade_envs(ax, times, env):
    """Light background bands for environments after the first."""
    change = np.flatnonzero(np.diff(env)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(env) - 1]])
    for s, e in zip(starts, ends):
        if env[s] > 0:
            ax.axvspan(times[s], times[e], color=f"C{int(env[s]) % 10}", alpha=0.08, lw=0)


def chain_figure(path, out):
    plt = _pyplot()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        t = np.concatenate([[path.initial.time], path.times])
        x = np.vstack([path.initial.counts / path.sizes, path.counts / path.sizes])
        env = np.concatenate([[path.initial.env], path.envs])
        for i in range(x.shape[1]):
            ax.step(t, x[:, i], where="post", lw=0.8, label=f"group {i + 1}")
        _shade_envs(ax, t, env)
        ax.set_xlabel("time")
        ax.set_ylabel("infected fraction")
        ax.legend(frameon=False)
        _save(fig, out)


def pdmp_figure(path, out):
    plt = _pyplot()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for i in range(path.x.shape[1]):
            ax.plot(path.times, path.x[:, i], lw=0.9, label=f"x_{i + 1}")
        _shade_envs(ax, path.times, path.env)
        ax.set_xlabel("time")
        ax.set_ylabel("state")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        _save(fig, out)


def gcurve_figure(curve, out):
    plt = _pyplot()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if np.any(curve.se > 0):
            ax.errorbar(curve.p, curve.g, yerr=2 * curve.se, fmt="o-", ms=3, lw=0.9, capsize=2)
        else:
            ax.plot(curve.p, curve.g, "o-", ms=3, lw=0.9)
        ax.axhline(0.0, color="0.4", lw=0.6)
        ax.axvline(0.0, color="0.4", lw=0.6)
        ax.set_xlabel("p")
        ax.set_ylabel("g(p)")
        ax.set_title(f"moment exponent ({curve.method})")
        _save(fig, out)


def qsd_figure(result, out):
    plt = _pyplot()
    idx = result.index
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        w = result.weights.reshape(-1, idx.num_env)
        if len(idx.sizes) == 1:
            x = idx.counts()[:, 0] / idx.sizes[0]
            for e in range(idx.num_env):
                ax.plot(x, w[:, e], lw=0.9, label=f"env {e + 1}")
            ax.set_xlabel("infected fraction")
            ax.set_ylabel("weight")
            ax.legend(frameon=False)
        else:
            norms = (idx.counts() / idx.sizes).sum(axis=1)
            ax.hist(norms, bins=50, weights=w.sum(axis=1))
            ax.set_xlabel("|x|_1")
            ax.set_ylabel("mass")
        ax.set_title(f"quasi-stationary distribution, K = {int(idx.sizes.sum())}")
        _save(fig, out)


def scaling_figure(K, lam, mean_tau, out):
    plt = _pyplot()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        K = np.asarray(K, dtype=float)
        lam = np.asarray(lam, dtype=float)
        ok = np.isfinite(lam) & (lam > 0)
        if ok.any():
            ax.loglog(K[ok], 1.0 / lam[ok], "o-", ms=3, label="1 / extinction rate")
        tau = np.asarray(mean_tau, dtype=float)
        ok = np.isfinite(tau)
        if ok.any():
            ax.loglog(K[ok], tau[ok], "s--", ms=3, label="mean extinction time (MC)")
        ax.set_xlabel("K")
        ax.set_ylabel("time")
        ax.legend(frameon=False)
        _save(fig, out)
