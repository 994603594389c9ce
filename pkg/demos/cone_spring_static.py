"""Cone Spring ecosystem at steady state: throughflow attribution and diact flows.

Run with ``python3 demos/cone_spring_static.py``.
"""

import numpy as np

from decompart.io import read_document
from decompart.static import residence_times, static_decompose, static_diact


def main():
    doc = read_document("cone_spring")
    s = doc.static
    np.set_printoptions(precision=2, suppress=True, linewidth=120)
    print("compartments:", ", ".join(doc.labels))
    print(f"balance residual: {s.balance_residual():.1e}")
    X, T = static_decompose(s)
    print("\nsubthroughflows (column k: generated by the input into k)")
    print(T)
    print("\nsubstorages")
    print(X)
    d = static_diact(s)
    for kind, name in (("i", "indirect"), ("t", "transfer")):
        print(f"\n{name} flows")
        print(d.T[kind])
    print("\nsimple acyclic flows, external input counted at the entry")
    print(d.Ttilde_a_entry)
    print("\nresidence times:", residence_times(s).r)
    for note in s.notes:
        print("note:", note)


if __name__ == "__main__":
    main()
