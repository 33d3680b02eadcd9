"""Shared exception types.

DataError covers malformed files and records (annotations, checkpoints,
images); numeric failures raise FloatingPointError from the tensor layer.
"""


class DataError(Exception):
    pass
