"""Quick checks of the compiled extension against closed-form values."""

import math

import qmkl


def close(a, b, tol=1e-10):
    assert abs(a - b) < tol, (a, b)


def main():
    specs = qmkl.default_feature_maps()
    assert len(specs) == 26, len(specs)

    fm = qmkl.FeatureMap("Z", 1.3)
    xs = [[0.1], [0.5], [1.7]]
    fq = qmkl.fidelity_kernel(fm, xs)
    pq = qmkl.projected_kernel(fm, xs, gamma=0.5)
    for i, (a,) in enumerate(xs):
        for j, (b,) in enumerate(xs):
            d = 1.3 * (a - b)
            close(fq[i][j], math.cos(d) ** 2)
            close(pq[i][j], math.exp(-2 * 0.5 * math.sin(d) ** 2))

    amps = qmkl.FeatureMap("ZZ", 0.7).encode([0.3, 1.1])
    close(sum(abs(a) ** 2 for a in amps), 1.0)

    labels = [1.0, 1.0, -1.0, -1.0, 1.0, -1.0]
    xs = [[0.1 * i, 0.2 * (i % 3)] for i in range(6)]
    ks = [
        qmkl.fidelity_kernel(qmkl.FeatureMap("Z-ZZ", 1.0), xs),
        qmkl.rbf_kernel(xs, gamma=1.0),
    ]
    for strategy in ["AVE", "SDP", "CENT", "PROJ"]:
        w = qmkl.mkl_weights(ks, labels, strategy)
        close(sum(w.weights), 1.0, 1e-9)
        assert all(v >= 0 for v in w.weights), w

    k = qmkl.combine(ks, [0.5, 0.5])
    model = qmkl.svm_train(k, labels, c=1.0)
    scores = model.decision_function(k)
    auc, _ = qmkl.roc_auc(scores, labels)
    assert 0.0 <= auc <= 1.0
    close(qmkl.roc_auc([0.9, 0.8, 0.1], [1.0, 1.0, -1.0])[0], 1.0)

    try:
        qmkl.mkl_weights(ks, labels, "NOPE")
    except ValueError:
        pass
    else:
        raise AssertionError("bad strategy accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
