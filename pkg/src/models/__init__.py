"""Learnable pieces: model, optimizer, regularizers and the trainer"""
from .nn import ModelDims, ModelState, embed, init_state, predict
from .optim import OptimConfig, RiemannianSGD
from .hycore import LossWeights, PartSampling, build_triplets, total_loss

__all__ = [
    'ModelDims', 'ModelState', 'embed', 'init_state', 'predict',
    'OptimConfig', 'RiemannianSGD',
    'LossWeights', 'PartSampling', 'build_triplets', 'total_loss',
]
