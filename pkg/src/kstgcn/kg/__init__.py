"""City knowledge graph storage and KR-EAR embeddings."""

from .embed import KnowledgeVectors, KrearConfig, extract_knowledge_vectors, train_krear
from .store import TripleStore, build_ckg, load_store, save_store

__all__ = ["KnowledgeVectors", "KrearConfig", "extract_knowledge_vectors", "train_krear", "TripleStore",
           "build_ckg", "load_store", "save_store"]
