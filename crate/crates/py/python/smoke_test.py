"""Smoke test for the pywarpbayes extension.

Build and install first, e.g. `maturin develop --release -m crates/py/Cargo.toml`.
"""

import pywarpbayes as wb


def main():
    sim = wb.simulate_pair(seed=3)
    y1, y2 = sim["y1"], sim["y2"]
    n = len(y1)
    assert n == 101 and len(sim["t"]) == n

    ident = [i / (n - 1) for i in range(n)]
    assert wb.sse(ident, ident) == 0.0
    assert max(abs(a - b) for a, b in zip(wb.tangent_to_warp([0.0] * n), ident)) < 1e-12

    gamma = wb.align_dp(y1, y2)
    assert gamma[0] == 0.0 and abs(gamma[-1] - 1.0) < 1e-12
    assert all(b >= a for a, b in zip(gamma, gamma[1:]))
    assert len(wb.compose(y2, gamma)) == n
    assert len(wb.align_dp(y1, y2, smooth=True)) == n
    assert len(wb.srvf(sim["f1"])) == n

    cfg = wb.RunConfig(seed=1, chains=2, iterations=600, burn_in=200)
    assert cfg.chains == 2 and "iterations = 600" in str(cfg)
    post = wb.align_bayes(y1, y2, cfg)
    assert len(post) == len(post.labels) == len(post.gammas) > 0
    assert post.modes and 0 <= post.best < len(post.modes)
    assert len(post.warp_acceptance) == 2
    mode = post.modes[post.best]
    assert all(lo <= c <= hi + 1e-12 for lo, c, hi in zip(mode.lower, mode.center, mode.upper))

    try:
        wb.RunConfig(not_a_key=1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    print(f"ok: {post!r}, DP SSE vs identity {wb.sse(gamma, ident):.4f}")


if __name__ == "__main__":
    main()
