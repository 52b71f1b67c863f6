"""Core numerical modules"""
from .autodiff import Tensor, backward, check_gradients, no_grad
from .hypgeo import Curvature, PoincareBall, PoincarePoint, EuclideanSpace

__all__ = ['Tensor', 'backward', 'check_gradients', 'no_grad', 'Curvature', 'PoincareBall', 'PoincarePoint', 'EuclideanSpace']
