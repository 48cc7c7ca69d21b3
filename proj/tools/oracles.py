#!/usr/bin/env python3
# Copyright 2026 The fewshot Authors.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Reference values used by the C++ tests, evaluated in 50-digit arithmetic."""

import itertools

from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 50


def sigmoid(z):
    return 1 / (1 + exp(-z))


def bce(z, t):
    p = sigmoid(z)
    return -(t * log(p) + (1 - t) * log(1 - p))


def entropy(p):
    return -(p * log(p) + (1 - p) * log(1 - p))


def group_weights(d, s):
    n = len(d)
    mu = sum(d) / n
    sigma = sqrt(sum((x - mu) ** 2 for x in d) / n)
    z = [(x - mu) / (sigma + mpf("1e-6")) for x in d]
    return mu, sigma, z, [exp(-zi**2 / (2 * s * s)) for zi in z]


def average_precision(scores, labels):
    """Sum over distinct thresholds t of recall gain times precision of {score >= t}."""
    positives = sum(labels)
    total, prev_tp = mpf(0), 0
    for t in sorted(set(scores), reverse=True):
        picked = [l for s, l in zip(scores, labels) if s >= t]
        tp = sum(picked)
        total += mpf(tp - prev_tp) / positives * mpf(tp) / len(picked)
        prev_tp = tp
    return total


def ranked_average_precision(scores, labels):
    """Mean precision@rank over the positives of one explicit ranking."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, mpf(0)
    for rank, i in enumerate(order, 1):
        if labels[i]:
            hits += 1
            total += mpf(hits) / rank
    return total / hits


def expected_label_count(k, density):
    p = mpf(density) / k
    return k * p / (1 - (1 - p) ** k)


def show(name, value):
    print(f"{name:40s} {mp.nstr(value, 12)}")


def main():
    show("sigmoid(2)", sigmoid(2))
    show("bce(0, 0)", bce(0, 0))
    show("bce(2, 1)", bce(2, 1))
    show("bce(-1, 0)", bce(-1, 0))
    show("anchor [2,-1] vs [1,0]", (bce(2, 1) + bce(-1, 0)) / 2)
    show("H(sigmoid(2))", entropy(sigmoid(2)))
    mu, sigma, z, w = group_weights([mpf("0.2"), mpf("0.6")], mpf("1.5"))
    show("w for d=[0.2,0.6]", w[0])
    mu, sigma, z, w = group_weights([mpf("0.1"), mpf("0.2"), mpf("0.6")], mpf("1.5"))
    show("mu for d=[0.1,0.2,0.6]", mu)
    show("sigma", sigma)
    for i in range(3):
        show(f"z[{i}]", z[i])
        show(f"w[{i}]", w[i])
    show("weighted [[1,2],[3,4]]", (1 * 1 + 2 * mpf("0.5") + 3 * mpf("0.5") + 4 * 1) / 4)
    show("total 2.09 ln2", mpf("2.09") * log(2))
    show("AP [0.9,0.8,0.1]/[1,0,1]", average_precision([0.9, 0.8, 0.1], [1, 0, 1]))
    show("E[labels] K=8 density=1.5", expected_label_count(8, 1.5))
    # AdamW: first step on theta=1, g=1, lr=0.1.
    m = (1 - mpf("0.9")) * 1
    v = (1 - mpf("0.999")) * 1
    step = mpf("0.1") * (m / (1 - mpf("0.9"))) / (sqrt(v / (1 - mpf("0.999"))) + mpf("1e-8"))
    show("adamw first step theta", 1 - step)
    show("lora count toy", 3 * 2 * (4 * 64 + 64 * 4))
    show("film count toy", 8 * 32 + (32 * 64 + 64) + (64 * 128 + 128))
    # Without ties both AP forms agree; duplicated rows keep the threshold form fixed.
    worst = max(
        abs(average_precision(list(p), l) - ranked_average_precision(list(p), l))
        for p in itertools.permutations(range(5))
        for l in itertools.product([0, 1], repeat=5)
        if any(l)
    )
    show("AP forms, no ties, max diff", worst)
    s, l = [0.9, 0.8, 0.2, 0.1], [1, 0, 1, 0]
    show("AP duplicated rows minus AP", average_precision(s + s, l + l) - average_precision(s, l))


if __name__ == "__main__":
    main()
