"""Hot inner loops with a compiled backend and a pure-numpy fallback.

The compiled module ``_kernels`` is used when it was built; otherwise (or when
``STATICBACKDOOR_PURE=1`` is set) the numpy implementations below are used.
Both produce bit-identical results. Activations are NHWC throughout.
"""
import os

import numpy as np

__all__ = [
    "BACKEND",
    "im2col3x3",
    "col2im3x3",
    "maxpool2_forward",
    "maxpool2_backward",
    "bilinear_resize",
    "numpy_backend",
    "compiled_backend",
]


def _np_im2col3x3(x):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, di, dj, :] = xp[:, di:di + h, dj:dj + w, :]
    return cols


def _np_col2im3x3(dcols):
    n, h, w, _, _, c = dcols.shape
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + h, dj:dj + w, :] += dcols[:, :, :, di, dj, :]
    return np.ascontiguousarray(dxp[:, 1:h + 1, 1:w + 1, :])


def _np_maxpool2_forward(x):
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    x = x[:, :2 * oh, :2 * ow, :]
    cand = np.stack(
        [x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]], axis=0
    )
    # argmax returns the first maximum, matching the strict ">" scan of the compiled path
    arg = np.argmax(cand, axis=0).astype(np.int8)
    out = np.take_along_axis(cand, arg[None].astype(np.intp), axis=0)[0]
    return np.ascontiguousarray(out), arg


def _np_maxpool2_backward(dout, arg, h, w):
    n, oh, ow, c = dout.shape
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    for idx in range(4):
        di, dj = idx >> 1, idx & 1
        view = dx[:, di:2 * oh:2, dj:2 * ow:2, :]
        sel = arg == idx
        view[sel] = dout[sel]
    return dx


def _axis_coords(n_in, n_out):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    lo = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _np_bilinear_resize(img, out_h, out_w):
    _, h, w = img.shape
    y0, y1, ly = _axis_coords(h, out_h)
    x0, x1, lx = _axis_coords(w, out_w)
    ly = ly[:, None]
    top = (1.0 - lx) * img[:, y0][:, :, x0] + lx * img[:, y0][:, :, x1]
    bot = (1.0 - lx) * img[:, y1][:, :, x0] + lx * img[:, y1][:, :, x1]
    return (1.0 - ly) * top + ly * bot


class _Backend:
    def __init__(self, name, im2col, col2im, pool_fwd, pool_bwd, resize):
        self.name = name
        self.im2col3x3 = im2col
        self.col2im3x3 = col2im
        self.maxpool2_forward = pool_fwd
        self.maxpool2_backward = pool_bwd
        self.bilinear_resize = resize


numpy_backend = _Backend(
    "numpy",
    _np_im2col3x3,
    _np_col2im3x3,
    _np_maxpool2_forward,
    _np_maxpool2_backward,
    _np_bilinear_resize,
)

try:
    from . import _kernels as _ext
except ImportError:  # extension not built
    compiled_backend = None
else:

    def _ext_resize(img, out_h, out_w):
        return _ext.bilinear_resize(np.ascontiguousarray(img, dtype=np.float64), out_h, out_w)

    compiled_backend = _Backend(
        "cython",
        lambda x: _ext.im2col3x3(np.ascontiguousarray(x)),
        lambda d: _ext.col2im3x3(np.ascontiguousarray(d)),
        lambda x: _ext.maxpool2_forward(np.ascontiguousarray(x)),
        lambda d, a, h, w: _ext.maxpool2_backward(np.ascontiguousarray(d), np.ascontiguousarray(a), h, w),
        _ext_resize,
    )

if compiled_backend is not None and os.environ.get("STATICBACKDOOR_PURE", "") in ("", "0"):
    _active = compiled_backend
else:
    _active = numpy_backend

BACKEND = _active.name
im2col3x3 = _active.im2col3x3
col2im3x3 = _active.col2im3x3
maxpool2_forward = _active.maxpool2_forward
maxpool2_backward = _active.maxpool2_backward
bilinear_resize = _active.bilinear_resize
