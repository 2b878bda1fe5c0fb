"""Shared helpers for the test suite."""

import numpy as np

from pshchain import build_hamiltonian, build_parity


def hermitian_reference_indices(spec):
    """Independent gain-free reference: eigh spectrum plus parity expectation.

    Uses the Hermitian solver (a different code path from the package's
    general eigensolver) and reads each level's mirror parity directly from
    the eigenvector, resolving degenerate clusters by diagonalizing the
    parity inside the cluster.
    """
    h = build_hamiltonian(spec)
    assert np.allclose(h, h.conj().T)
    p = build_parity(spec.n)
    evals, vecs = np.linalg.eigh(h.real)
    out = []
    i = 0
    while i < len(evals):
        k = i
        while k + 1 < len(evals) and abs(evals[k + 1] - evals[i]) < 1e-10:
            k += 1
        block = vecs[:, i:k + 1]
        pb = block.conj().T @ p.real @ block
        signs = np.linalg.eigvalsh(0.5 * (pb + pb.T))
        for e, s in zip(evals[i:k + 1], np.sort(signs)):
            out.append((float(e), int(np.sign(s))))
        i = k + 1
    return out


def match_level_sets(reference, computed, energy_tol=1e-8):
    """Compare (energy, index) lists cluster-wise; returns mismatch count.

    Levels closer than ``energy_tol`` on either side are grouped and their
    index multisets compared, so exact and near degeneracies cannot produce
    spurious ordering mismatches.
    """
    ref = sorted(reference)
    got = sorted(computed)
    assert len(ref) == len(got)
    mismatches = 0
    i = 0
    while i < len(ref):
        k = i
        while (k + 1 < len(ref)
               and (ref[k + 1][0] - ref[k][0] < energy_tol
                    or got[k + 1][0] - got[k][0] < energy_tol)):
            k += 1
        for er, eg in zip(ref[i:k + 1], got[i:k + 1]):
            if abs(er[0] - eg[0]) > energy_tol:
                mismatches += 1
        if sorted(x[1] for x in ref[i:k + 1]) != sorted(x[1] for x in got[i:k + 1]):
            mismatches += 1
        i = k + 1
    return mismatches
