import numpy as np

from zoomshot.embeddings import EmbeddingSet, Modality


def make_set(values, modality=Modality.IMAGE, name="test-encoder",
             labels=None, class_names=None) -> EmbeddingSet:
    return EmbeddingSet(modality, name, np.asarray(values, dtype=np.float32),
                        labels=labels, class_names=class_names)
