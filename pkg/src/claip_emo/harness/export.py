"""Exports fused clip vectors for outside analysis."""
import os
from typing import Sequence

import numpy as np
import pandas as pd

from claip_emo.logger import get_logger
from claip_emo.model.claip_model import ClaipEmoModel, ClipBatch

logger = get_logger(__name__)


def feature_matrix(model: ClaipEmoModel, samples: Sequence, batch_size: int = 32) -> np.ndarray:
    """z_o for every sample, computed in eval mode, [N, feature_dim]."""
    samples = list(samples)
    was_training = model.training
    model.eval()
    rows = []
    for start in range(0, len(samples), batch_size):
        batch = ClipBatch.from_samples(samples[start:start + batch_size])
        rows.append(np.asarray(model.features(batch).data, dtype=np.float64))
    model.train(was_training)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, 0))


def export_features(model: ClaipEmoModel, samples: Sequence, path: str, batch_size: int = 32) -> pd.DataFrame:
    """Writes ``id,label,z0..z{n-1}`` rows to ``path`` and returns the frame."""
    samples = list(samples)
    features = feature_matrix(model, samples, batch_size=batch_size)
    frame = pd.DataFrame(features, columns=[f"z{i}" for i in range(features.shape[1])])
    frame.insert(0, "label", [int(s.label) for s in samples])
    frame.insert(0, "id", [s.id for s in samples])
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"exported {len(frame)} feature vectors of width {features.shape[1]} to {path}")
    return frame
