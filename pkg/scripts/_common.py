import numpy as np

from posfree.stats import combined_z


def by_point(results, a, b):
    out = {}
    for r in results:
        out.setdefault((tuple(r.params.values()), r.theta_i), {})[r.method] = r
    return [(k, v[a], v[b]) for k, v in out.items() if a in v and b in v]


def summarize(results, a, b, label=""):
    """Print per-point agreement and inverse-efficiency wins of ``b`` over ``a``."""
    zs, wins = [], []
    for key, ra, rb in by_point(results, a, b):
        z = combined_z(ra.mean, ra.stderr, rb.mean, rb.stderr)
        zs.append(z)
        line = f"{label}{key}: max z {z.max():6.2f}"
        if np.isfinite(ra.ns_per_eval):
            w = rb.ns_per_eval * rb.variance <= ra.ns_per_eval * ra.variance
            wins.append(w)
            line += f"  {b} wins {w.mean():6.1%}  cost {rb.ns_per_eval:8.0f} vs {ra.ns_per_eval:8.0f} ns"
        print(line)
    z = np.concatenate(zs)
    print(f"{b} vs {a}: {np.mean(z <= 3):.2%} of bins within 3 stderr")
    if wins:
        print(f"{b} inverse efficiency <= {a}: {np.mean(np.concatenate(wins)):.1%} of bins")
