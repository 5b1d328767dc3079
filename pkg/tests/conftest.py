import numpy as np
import pytest
import torch

from castmm.batch import Sample
from castmm.corpus import CorpusConfig, build_corpus, describe, generate_crystal
from castmm.crystal import AtomSite, CrystalStructure, Lattice, RbfSpec, build_periodic_graph, element_id
from castmm.encoders.vocab import build_vocab, tokenize
from castmm.fusion.models import ModelConfig, build_model
from castmm.tags import GlobalTags

torch.set_num_threads(1)


def make_structure(symbols, fracs, basis=None, sid="t", system="cubic", sg="Pm-3m", **flags):
    basis = np.eye(3) * 4.0 if basis is None else basis
    sites = tuple(AtomSite(element_id(s), tuple(f)) for s, f in zip(symbols, fracs))
    tags = GlobalTags(system, sg, bond_range=flags.pop("bond_range", (2.0, 2.5)), **flags)
    return CrystalStructure(sid, Lattice(basis), sites, tags)


@pytest.fixture(scope="session")
def small_corpus():
    return build_corpus(CorpusConfig(n=40, seed=3))


TINY = dict(node_dim=16, text_dim=12, text_layers=1, text_heads=2, mp_blocks=2, rbf_dim=16,
            fusion_layers=2, fusion_heads=4, attn_dim=16, ffn_dim=24, proj_dim=8)


def tiny_samples(n=3, seed=0, texts=None, desc_dim=4):
    """Samples from generated crystals with a vocabulary over their descriptions."""
    structs = [generate_crystal(seed * 1000 + k, id=f"s{k}") for k in range(n)]
    texts = texts or [describe(s) for s in structs]
    vocab = build_vocab(texts, 1)
    rbf = RbfSpec(tuple(np.linspace(0, 5, 16)), 1.0)
    rng = np.random.default_rng(seed)
    samples = [
        Sample(s.id, build_periodic_graph(s, 5.0, rbf), tokenize(t, vocab), float(rng.normal()),
               rng.normal(size=desc_dim))
        for s, t in zip(structs, texts)
    ]
    return samples, vocab


def tiny_model(kind, vocab_size, seed=0, desc_dim=4, **over):
    cfg = ModelConfig(**{**TINY, **over}, vocab_size=vocab_size, desc_dim=desc_dim)
    return build_model(kind, cfg, seed, torch.float64)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
