"""Regenerates the toy inputs in this directory (numpy only)."""
import numpy as np

rng = np.random.default_rng(20240611)
p, n_o, n_r = 5, 2000, 200
ids = [f"rs{i + 1}" for i in range(p)]
maf = np.array([0.30, 0.22, 0.41, 0.15, 0.35])
sigma = 0.6 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
chol = np.linalg.cholesky(sigma)


def genotypes(n):
    from math import erf, sqrt
    w = rng.standard_normal((n, p)) @ chol.T
    u = 0.5 * (1 + np.vectorize(erf)(w / sqrt(2)))
    lo, hi = (1 - maf) ** 2, 1 - maf ** 2
    return (u > lo).astype(int) + (u > hi).astype(int)


def standardize(x):
    x = x - x.mean(axis=0)
    return x / np.sqrt((x ** 2).mean(axis=0))


def summary(path, x, beta):
    z = standardize(x.astype(float))
    g = z @ beta
    y = g + rng.standard_normal(len(g)) * (np.std(g) * 3 if np.any(beta) else 1.0)
    y = standardize(y[:, None])[:, 0]
    b = z.T @ y / len(y)
    with open(path, "w") as f:
        f.write("# toy marginal summary\nid\tbeta\tn\n")
        for i, v in zip(ids, b):
            f.write(f"{i}\t{v:.17g}\t{len(y)}\n")


x_o = genotypes(n_o)
summary("summary.tsv", x_o, np.array([0.3, 0.0, 0.0, 0.25, 0.0]))
summary("summary_null.tsv", x_o, np.zeros(p))

panel = genotypes(n_r)
order = [3, 0, 4, 1, 2]  # columns deliberately out of summary order
with open("panel.tsv", "w") as f:
    f.write("\t".join(ids[j] for j in order) + "\n")
    for row in panel:
        f.write("\t".join(str(row[j]) for j in order) + "\n")
