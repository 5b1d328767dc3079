import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castmm.corpus import GenConfig, generate_crystal
from castmm.crystal import (
    Lattice,
    RbfSpec,
    StructureError,
    build_periodic_graph,
    permute_structure,
    rbf_expand,
    read_structures,
    write_structures,
)
from conftest import make_structure


def supercell_oracle(structure, cutoff):
    """Brute-force neighbour multiset over a 3x3x3 block of images."""
    basis = structure.lattice.basis
    frac = structure.frac_array()
    out = []
    for i, j in itertools.product(range(len(frac)), repeat=2):
        for off in itertools.product((-1, 0, 1), repeat=3):
            d = float(np.linalg.norm((frac[j] + np.array(off) - frac[i]) @ basis))
            if 1e-8 < d <= cutoff:
                out.append((i, j, round(d, 9), off))
    return sorted(out)


def graph_multiset(g):
    return sorted((i, j, round(d, 9), o) for i, j, d, o in g.edges())


def test_single_atom_cubic_has_six_images():
    s = make_structure(["Na"], [(0, 0, 0)])
    g = build_periodic_graph(s, 4.5)
    assert g.n_edges == 6
    assert np.allclose(g.distance, 4.0)
    assert graph_multiset(g) == supercell_oracle(s, 4.5)


def test_rock_salt_pair_matches_oracle():
    s = make_structure(["Na", "Cl"], [(0, 0, 0), (0.5, 0.5, 0.5)], basis=np.eye(3) * 3.0)
    nn = math.sqrt(3) * 1.5
    g = build_periodic_graph(s, nn + 1e-6)
    assert g.n_edges == 16
    assert graph_multiset(g) == supercell_oracle(s, nn + 1e-6)


def test_cutoff_below_min_distance_gives_no_edges():
    s = make_structure(["Na", "Cl"], [(0, 0, 0), (0.5, 0.5, 0.5)])
    g = build_periodic_graph(s, 1.0)
    assert g.n_edges == 0
    assert g.isolated_nodes == (0, 1)


def test_edges_sorted_and_features():
    s = make_structure(["Na", "Cl"], [(0, 0, 0), (0.3, 0.1, 0.6)])
    rbf = RbfSpec.default(5.0)
    g = build_periodic_graph(s, 5.0, rbf)
    keys = [(i, j, *o) for i, j, _, o in g.edges()]
    assert keys == sorted(keys)
    assert g.edge_features.shape == (g.n_edges, 16)
    assert np.allclose(g.edge_features, rbf_expand(g.distance, rbf.centers, rbf.gamma))


def test_bad_inputs():
    with pytest.raises(StructureError):
        Lattice(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(StructureError):
        Lattice(np.diag([1.0, 1.0, np.inf]))
    with pytest.raises(StructureError):
        make_structure([], [])
    s = make_structure(["Na"], [(0, 0, 0)])
    with pytest.raises(ValueError):
        build_periodic_graph(s, 0.0)
    with pytest.raises(StructureError):
        permute_structure(s, [1])


def test_frac_coords_wrapped():
    s = make_structure(["Na"], [(1.25, -0.25, -1e-18)])
    assert s.sites[0].frac_coords == (0.25, 0.75, 0.0)


def test_rbf_examples():
    assert np.allclose(rbf_expand(2.0, [1, 2, 3], 1.0), [math.exp(-1), 1.0, math.exp(-1)])
    assert rbf_expand(1.5, [1, 2], 1e6).max() < 1e-100
    with pytest.raises(ValueError):
        rbf_expand(1.0, [2, 1], 1.0)
    with pytest.raises(ValueError):
        rbf_expand(1.0, [1, 2], 0.0)


def test_default_rbf_centres():
    spec = RbfSpec.default(5.0)
    assert spec.size == 16 and spec.centers[0] == 0.0 and spec.centers[-1] == 5.0
    assert spec.gamma == pytest.approx((16 / 5.0) ** 2)


def test_permutation_examples():
    s = make_structure(["Na", "Cl", "K", "Br"], [(0, 0, 0), (0.5, 0, 0), (0, 0.5, 0), (0, 0, 0.5)])
    assert permute_structure(s, [0, 1, 2, 3]) == s
    rev = build_periodic_graph(permute_structure(s, [3, 2, 1, 0]), 5.0)
    assert list(rev.node_elements) == list(build_periodic_graph(s, 5.0).node_elements)[::-1]


def test_swap_identical_elements_is_isomorphic():
    s = make_structure(["Na", "Na", "Cl"], [(0, 0, 0), (0.5, 0.5, 0), (0.25, 0.25, 0.5)])
    g = build_periodic_graph(s, 5.0)
    h = build_periodic_graph(permute_structure(s, [1, 0, 2]), 5.0)
    swap = {0: 1, 1: 0, 2: 2}
    mapped = sorted((swap[i], swap[j], round(d, 9), o) for i, j, d, o in g.edges())
    assert mapped == graph_multiset(h)
    assert list(g.node_elements) == list(h.node_elements)


def test_jsonl_round_trip(tmp_path):
    structs = [generate_crystal(k) for k in range(5)]
    write_structures(tmp_path / "s.jsonl", structs)
    back = read_structures(tmp_path / "s.jsonl")
    assert back == structs
    assert [s.symbols for s in back] == [s.symbols for s in structs]


small_gen = GenConfig(min_sites=2, max_sites=6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(2.0, 6.0))
def test_neighbour_list_matches_supercell_oracle(seed, cutoff):
    s = generate_crystal(seed, small_gen)
    # the 3x3x3 block only covers every image when cutoff < smallest plane spacing
    cutoff = min(cutoff, float(s.lattice.plane_spacings().min()) - 1e-6)
    assert graph_multiset(build_periodic_graph(s, cutoff)) == supercell_oracle(s, cutoff)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_directed_pair_symmetry(seed):
    g = build_periodic_graph(generate_crystal(seed), 5.0)
    assert np.all(g.distance > 0) and np.all(g.distance <= 5.0)
    fwd = graph_multiset(g)
    back = sorted((j, i, d, tuple(-x for x in o)) for i, j, d, o in fwd)
    assert fwd == back


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_permutation_equivariance(seed, rnd):
    s = generate_crystal(seed)
    perm = list(range(len(s)))
    rnd.shuffle(perm)
    g = build_periodic_graph(s, 5.0)
    h = build_periodic_graph(permute_structure(s, perm), 5.0)
    inv = {old: new for new, old in enumerate(perm)}
    mapped = sorted((inv[i], inv[j], round(d, 9), o) for i, j, d, o in g.edges())
    assert mapped == graph_multiset(h)
    assert len(h.node_elements) == len(s)
    assert list(h.node_elements) == [g.node_elements[p] for p in perm]
