"""Independent reference computation of the metric fixtures in tests/metrics.rs."""
import math
from collections import Counter

CORPUS = [
    ("a man is cutting bread",
     ["a man is cutting a bread", "a man slices bread", "the man is cutting the bread in the kitchen"]),
    ("a dog is playing a ball",
     ["a dog is playing with a ball", "the dog plays a ball"]),
    ("a woman riding a horse",
     ["a woman is riding a bike", "a lady rides a bicycle on the street"]),
]


def ngrams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(corpus, max_n=4):
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in corpus:
        h = hyp.split()
        rs = [r.split() for r in refs]
        hyp_len += len(h)
        ref_len += min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
        for n in range(1, max_n + 1):
            hc = ngrams(h, n)
            best = Counter()
            for r in rs:
                for g, c in ngrams(r, n).items():
                    best[g] = max(best[g], c)
            matches[n - 1] += sum(min(c, best[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1 - ref_len / hyp_len)
    out = []
    for n in range(1, max_n + 1):
        ps = [matches[k] / totals[k] for k in range(n)]
        if min(ps) == 0:
            out.append(0.0)
        else:
            out.append(100 * bp * math.exp(sum(math.log(p) for p in ps) / n))
    return out


def lcs(a, b):
    t = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            t[i][j] = t[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(t[i - 1][j], t[i][j - 1])
    return t[-1][-1]


def rouge_l(corpus, beta=1.2):
    total = 0.0
    for hyp, refs in corpus:
        h = hyp.split()
        best = 0.0
        for r in refs:
            r = r.split()
            l = lcs(h, r)
            if l == 0:
                continue
            p, rec = l / len(h), l / len(r)
            best = max(best, (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
        total += best
    return 100 * total / len(corpus)


def cider_d(corpus, sigma=6.0):
    docs = len(corpus)
    df = Counter()
    for _, refs in corpus:
        seen = set()
        for r in refs:
            w = r.split()
            for n in range(1, 5):
                seen.update(ngrams(w, n).keys())
        df.update(seen)

    def vec(words):
        v, norms = [], []
        for n in range(1, 5):
            d = {g: c * (math.log(docs) - math.log(max(1.0, df[g]))) for g, c in ngrams(words, n).items()}
            v.append(d)
            norms.append(math.sqrt(sum(x * x for x in d.values())))
        return v, norms, max(len(words) - 1, 0)

    scores = []
    for hyp, refs in corpus:
        hv, hn, hl = vec(hyp.split())
        acc = 0.0
        for r in refs:
            rv, rn, rl = vec(r.split())
            per_n = []
            for n in range(4):
                val = sum(min(x, rv[n].get(g, 0.0)) * rv[n].get(g, 0.0) for g, x in hv[n].items())
                if hn[n] != 0 and rn[n] != 0:
                    val /= hn[n] * rn[n]
                val *= math.exp(-((hl - rl) ** 2) / (2 * sigma ** 2))
                per_n.append(val)
            acc += sum(per_n) / 4
        scores.append(10 * acc / len(refs))
    return sum(scores) / len(scores), scores


if __name__ == "__main__":
    print("bleu", [repr(x) for x in bleu(CORPUS)])
    print("rouge", repr(rouge_l(CORPUS)))
    print("rouge_pair", repr(rouge_l([("a b c d", ["a c d"])])))
    c, per = cider_d(CORPUS)
    print("cider", repr(c), [repr(x) for x in per])
