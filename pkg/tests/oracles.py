"""Slow, definitional reference implementations used as test oracles."""

import math


def knn_bruteforce(library, query, k):
    """All-pairs Euclidean distances, ordered by (distance, index)."""
    dists = []
    for i, point in enumerate(library):
        d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(point, query)))
        dists.append((d, i))
    dists.sort()
    return [i for _, i in dists[:k]], [d for d, _ in dists[:k]]


def simplex_predict_bruteforce(library, times, target, query, k):
    idx, dist = knn_bruteforce(library, query, k)
    d_min = dist[0]
    if d_min == 0:
        w = [1.0 if d == 0 else 0.0 for d in dist]
    else:
        w = [math.exp(-d / d_min) for d in dist]
    total = sum(w)
    return sum(wi / total * float(target[times[i]]) for wi, i in zip(w, idx)), idx


def pearson_two_pass(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def silhouette_double_loop(X, labels):
    n = len(X)

    def dist(i, j):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(X[i], X[j])))

    out = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = sum(dist(i, j) for j in own) / len(own)
        b = math.inf
        for c in set(labels) - {labels[i]}:
            members = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(dist(i, j) for j in members) / len(members))
        out.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return out


def auc_mann_whitney(pos, neg):
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part
