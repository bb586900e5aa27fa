"""
Mean ergodic but not stable
===========================

The swap chain never forgets its start state, yet its Cesaro averages
converge. Mixing it with its fixed state makes it stable, and every chain
close enough to the mixture keeps averaging out.
"""

from dobrushin import (
    classify,
    dobrushin_delta,
    find_contractive_power,
    mixture_with_fixed_point,
    openness_radius,
    power_and_cesaro,
    validate_markov,
)
from dobrushin.spaces import classical, element

space = classical(2)
swap = validate_markov([[0.0, 1.0], [1.0, 0.0]], space)

print("delta(swap) =", dobrushin_delta(swap).value)
print("contracting power up to 64:", find_contractive_power(swap, n_max=64))
_, A2 = power_and_cesaro(swap, 2)
print("A_2 =", A2.matrix.tolist(), " delta(A_2) =", dobrushin_delta(A2).value)
print("classification:", classify(swap, n_check=16).classification)

# a small mixture with the fixed state (1/2, 1/2) contracts in one step
phi = element(space, [0.5, 0.5])
for eps in (0.2, 1.0):
    Te = mixture_with_fixed_point(swap, phi, eps)
    rep = classify(Te, n_check=16, traces=False)
    print(f"eps={eps}: delta={dobrushin_delta(Te).value:.3f} class={rep.classification} n0={rep.n0}")

# radius of a neighbourhood in which A_2 still contracts
print("openness radius at n=2:", openness_radius(swap, 2))
