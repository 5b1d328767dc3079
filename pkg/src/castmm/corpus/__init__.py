"""Synthetic crystal corpora: generation, text, descriptors, filters, splits."""

from castmm.corpus.build import Corpus, CorpusConfig, Entry, build_corpus
from castmm.corpus.describe import describe
from castmm.corpus.descriptors import (
    DescriptorSchema,
    DescriptorVector,
    SchemaError,
    build_descriptor_schema,
    extract_descriptors,
)
from castmm.corpus.filters import RULES, FilterDecision, apply_filters
from castmm.corpus.generate import GenConfig, generate_crystal, sample_seed
from castmm.corpus.properties import (
    TARGET_KINDS,
    PropertyConfig,
    PropertyRecord,
    ground_truth_property,
    make_property_record,
)
from castmm.corpus.split import DatasetSplit, dataset_stats, split_dataset
from castmm.tags import GlobalTags
