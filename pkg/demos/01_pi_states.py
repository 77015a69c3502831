"""
Permutationally invariant states
================================

N spin-1/2 particles split into total angular momentum blocks J.  A PI
state only needs one (2J+1) x (2J+1) matrix per block, so the memory cost
grows polynomially instead of as 4^N.
"""

import numpy as np

from spinqec.picore import (
    LogicalQudit,
    collective_expectation,
    decode_logical,
    degeneracy,
    encode_logical,
)

N = 20

# block multiplicities; weighted by block size they fill the 2^N space
for two_j in range(N, -1, -2):
    print(f"J = {two_j / 2:4.1f}   d = {degeneracy(N, two_j / 2)}")
print(sum(degeneracy(N, tj / 2) * (tj + 1) for tj in range(0, N + 1, 2)) == 2**N)

# a logical |+> on the two centred levels of the Dicke block
plus = LogicalQudit.from_ket([1, 1])
rho = encode_logical(plus, N, N / 2)
print("blocks:", list(rho.blocks))
print(f"<Jz> = {collective_expectation(rho, 'Jz'):.3f}")
print(f"<J^2> = {collective_expectation(rho, 'J2'):.3f}")

# decoding returns the logical density matrix and the block weight
qudit, weight = decode_logical(rho, N / 2, dim=2)
print(np.round(qudit.rho.real, 3), weight)
