"""Published reference results used by the report tables.

Read-only constants so relative-improvement rows never invent numbers.
Comparison methods carry their original publications; the
"adversarial-forgetting" rows are the published results for the method
this package implements. A_s entries of None mean the method reported
no value; MNIST-ROT rows carry extra accuracies on unseen angles.
"""

from types import MappingProxyType

CITATIONS = MappingProxyType({
    "nn+mmd": "Li, Swersky & Zemel (2014), learning unbiased features "
              "with maximum mean discrepancy",
    "vfae": "Louizos et al. (2016), the variational fair autoencoder",
    "cai": "Xie et al. (2017), controllable invariance through "
           "adversarial feature learning",
    "cvib": "Moyer et al. (2018), invariant representations without "
            "adversarial training",
    "uai": "Jaiswal et al. (2018), unsupervised adversarial invariance",
    "adversarial-forgetting": "published results for the adversarial "
                              "forgetting method implemented here",
    "no-adversary": "same architecture with the discriminators, gates "
                    "and decoder removed",
})


def _rows(**methods):
    return MappingProxyType({k: MappingProxyType(v)
                             for k, v in methods.items()})


REFERENCE_RESULTS = MappingProxyType({
    "chairs": {
        "s_kind": "nuisance", "s_optimal": 0.25,
        "rows": _rows(**{
            "nn+mmd": {"a_y": 0.73, "a_s": 0.46},
            "vfae": {"a_y": 0.72, "a_s": 0.37},
            "cai": {"a_y": 0.68, "a_s": 0.69},
            "cvib": {"a_y": 0.67, "a_s": 0.52},
            "uai": {"a_y": 0.74, "a_s": 0.34},
            "adversarial-forgetting": {"a_y": 0.84, "a_s": 0.25}})},
    "extended-yale-b": {
        "s_kind": "nuisance", "s_optimal": 0.20,
        "rows": _rows(**{
            "nn+mmd": {"a_y": 0.82, "a_s": None},
            "vfae": {"a_y": 0.85, "a_s": 0.57},
            "cai": {"a_y": 0.89, "a_s": 0.57},
            "cvib": {"a_y": 0.82, "a_s": 0.45},
            "uai": {"a_y": 0.95, "a_s": 0.24},
            "adversarial-forgetting": {"a_y": 0.95, "a_s": 0.20}})},
    "mnist-rot": {
        "s_kind": "nuisance", "s_optimal": 0.20,
        "rows": _rows(**{
            "nn+mmd": {"a_y": 0.970, "a_s": 0.380,
                       "a_y_unseen_55": 0.831, "a_y_unseen_65": 0.665},
            "vfae": {"a_y": 0.953, "a_s": 0.389,
                     "a_y_unseen_55": None, "a_y_unseen_65": None},
            "cai": {"a_y": 0.958, "a_s": 0.384,
                    "a_y_unseen_55": 0.829, "a_y_unseen_65": 0.663},
            "cvib": {"a_y": 0.960, "a_s": 0.382,
                     "a_y_unseen_55": 0.819, "a_y_unseen_65": 0.674},
            "uai": {"a_y": 0.977, "a_s": 0.338,
                    "a_y_unseen_55": 0.856, "a_y_unseen_65": 0.696},
            "adversarial-forgetting": {"a_y": 0.991, "a_s": 0.201,
                                       "a_y_unseen_55": 0.863,
                                       "a_y_unseen_65": 0.730}})},
    "adult": {
        "s_kind": "bias", "s_optimal": 0.67,
        "rows": _rows(**{
            "nn+mmd": {"a_y": 0.75, "a_s": 0.67},
            "vfae": {"a_y": 0.76, "a_s": 0.67},
            "cai": {"a_y": 0.83, "a_s": 0.89},
            "cvib": {"a_y": 0.69, "a_s": 0.68},
            "adversarial-forgetting": {"a_y": 0.85, "a_s": 0.67}})},
    "german": {
        "s_kind": "bias", "s_optimal": 0.80,
        "rows": _rows(**{
            "nn+mmd": {"a_y": 0.74, "a_s": 0.80},
            "vfae": {"a_y": 0.70, "a_s": 0.80},
            "cai": {"a_y": 0.70, "a_s": 0.81},
            "cvib": {"a_y": 0.74, "a_s": 0.80},
            "adversarial-forgetting": {"a_y": 0.76, "a_s": 0.80}})},
    "shapes": {
        "s_kind": "nuisance", "s_optimal": (0.50, 0.25),
        "multi_task": True,
        "rows": _rows(**{
            "no-adversary": {"a_y": (0.99, 0.99), "a_s": (0.94, 0.40)},
            "adversarial-forgetting": {"a_y": (0.99, 0.99),
                                       "a_s": (0.50, 0.25)}})},
})


def baseline(dataset, method):
    """(a_y, a_s, s_optimal, s_kind) for a reference method, or KeyError."""
    entry = REFERENCE_RESULTS[dataset]
    row = entry["rows"][method]
    return row["a_y"], row["a_s"], entry["s_optimal"], entry["s_kind"]
