import numpy as np

from .core import Tensor


class Parameter(Tensor):
    """Trainable leaf with a name and Adam moment buffers.

    ``lr_scale`` multiplies the optimizer learning rate for this parameter
    (a scalar, or an array broadcastable to its shape); ``mask`` (if set)
    marks entries that must stay zero.
    """

    __slots__ = ("name", "m", "v", "lr_scale", "mask")

    def __init__(self, data, name="", lr_scale=1.0, mask=None):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.lr_scale = np.asarray(lr_scale, dtype=np.float64) if np.ndim(lr_scale) else float(lr_scale)
        self.mask = None if mask is None else np.asarray(mask, dtype=self.data.dtype)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"
