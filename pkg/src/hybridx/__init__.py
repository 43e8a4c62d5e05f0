"""Hybrid autism screening: a linear SVM on behaviour scores and a small
DenseNet on face images, combined by weighted late fusion."""

__version__ = "0.1.0"
