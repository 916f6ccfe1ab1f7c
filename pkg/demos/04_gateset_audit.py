"""
What a leaked qubit does to its partner
=======================================

While one qubit is leaked, two-qubit gates act trivially and the partner
only sees the single-qubit gates of each compiled Clifford. For the
leakage-identity approximation to be reasonable, the partner's net gate
should be close to uniform over the 24 single-qubit Cliffords.
"""

import numpy as np

from leakrb.clifford import get_gateset, leaked_action_histogram, total_variation

uniform = np.full(24, 1 / 24)
for name in ("trapped-ion", "minimal-cnot", "standard-chp"):
    gs = get_gateset(name)
    h0, h1 = (leaked_action_histogram(gs, q) for q in (0, 1))
    print(
        f"{name:13s} TVD to uniform: q0 {total_variation(h0, uniform):.3f}  q1 {total_variation(h1, uniform):.3f}"
        f"   q0 vs q1 {total_variation(h0, h1):.3f}"
    )

# A single compiled word per Clifford depends on how ties between equal-cost
# words are broken, which can make the two qubits look different.
gs = get_gateset("trapped-ion")
h0, h1 = (leaked_action_histogram(gs, q, method="compiled") for q in (0, 1))
print(f"\ntrapped-ion, one word per Clifford: q0 vs q1 {total_variation(h0, h1):.3f}")
