"""Services module"""
from .data import DatasetSpec, PointCloud, generate_dataset, load_splits

__all__ = ['DatasetSpec', 'PointCloud', 'generate_dataset', 'load_splits']
