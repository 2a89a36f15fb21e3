"""Straight-line float64 reference implementations.

Deliberately naive and independent of the package: every convolution is an
explicit loop over kernel taps, weights are read from a plain dict keyed by
archive name, and no helper is shared with the library.
"""

import numpy as np
from scipy.special import erf

EPS_BN = 1e-5
EPS_L2 = 1e-6


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def silu(x):
    return x * sigmoid(x)


def hardswish(x):
    return x * np.minimum(np.maximum(x + 3.0, 0.0), 6.0) / 6.0


def conv(x, w, b=None, pad=0, depthwise=False):
    """Stride-1 cross-correlation of (N,Ci,H,W) with (Co,Ci|1,kh,kw)."""
    n, ci, hh, ww = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((n, ci, hh + 2 * pad, ww + 2 * pad))
    xp[:, :, pad : pad + hh, pad : pad + ww] = x
    oh, ow = hh + 2 * pad - kh + 1, ww + 2 * pad - kw + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + oh, j : j + ow]
            if depthwise:
                out += patch * w[None, :, 0, i, j, None, None]
            else:
                for o in range(co):
                    for c in range(ci):
                        out[:, o] += patch[:, c] * w[o, c, i, j]
    if b is not None:
        out += b.reshape(1, co, 1, 1)
    return out


def bn_infer(x, wts, name):
    g = wts[name + ".gamma"].reshape(1, -1, 1, 1)
    be = wts[name + ".beta"].reshape(1, -1, 1, 1)
    m = wts[name + ".running_mean"].reshape(1, -1, 1, 1)
    v = wts[name + ".running_var"].reshape(1, -1, 1, 1)
    return (x - m) / np.sqrt(v + EPS_BN) * g + be


def l2norm(x):
    nrm = np.sqrt((x**2).sum(axis=1, keepdims=True))
    return x / np.maximum(nrm, EPS_L2)


# ---- fusion unit ---------------------------------------------------------

def cam(x, wts, name):
    v = x.mean(axis=(2, 3))  # (N, C)
    k = wts[name + ".weight"].ravel()
    r = len(k) // 2
    c = v.shape[1]
    padded = np.zeros((v.shape[0], c + 2 * r))
    padded[:, r : r + c] = v
    z = np.zeros_like(v)
    for ch in range(c):
        for j in range(len(k)):
            z[:, ch] += k[j] * padded[:, ch + j]
    z += wts[name + ".bias"].ravel()[0]
    return x * sigmoid(z)[:, :, None, None]


def pam(x, wts):
    rows = x.mean(axis=3)  # (N, C, H)
    cols = x.mean(axis=2)  # (N, C, W)
    wh, bh = wts["pam.h.weight"][:, :, 0, 0], wts["pam.h.bias"].ravel()
    wv, bv = wts["pam.v.weight"][:, :, 0, 0], wts["pam.v.bias"].ravel()
    att_h = sigmoid(np.einsum("oc,nch->noh", wh, rows) + bh[None, :, None])
    att_v = sigmoid(np.einsum("oc,ncw->now", wv, cols) + bv[None, :, None])
    return x * att_h[:, :, :, None] * att_v[:, :, None, :]


def pw(x, wts, name, bias=True):
    return conv(x, wts[name + ".weight"], wts[name + ".bias"] if bias else None)


def dw(x, wts, name, bias=True):
    return conv(x, wts[name + ".weight"], wts[name + ".bias"] if bias else None, pad=1, depthwise=True)


def dfm(fa, wts):
    n, c, h, w = fa.shape
    e = pw(l2norm(fa), wts, "dfm.entry")
    X, Y = e[:, :c], e[:, c:]
    pooled = X.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
    xs = dw(pooled, wts, "dfm.global_dw")
    var = X.var(axis=(2, 3), keepdims=True)
    alpha = wts["dfm.modulate.alpha"].reshape(1, c, 1, 1)
    beta = wts["dfm.modulate.beta"].reshape(1, c, 1, 1)
    xm = pw(xs * alpha + var * beta, wts, "dfm.global_mod")
    up = np.repeat(np.repeat(gelu(xm), 2, axis=2), 2, axis=3)
    xg = X * up
    yh = pw(dw(Y, wts, "dfm.local_dw"), wts, "dfm.local_expand")
    yl = pw(gelu(yh), wts, "dfm.local_reduce")
    return pw(xg + yl, wts, "dfm.exit")


def fm(fdr, wts):
    c = fdr.shape[1]
    e = gelu(pw(l2norm(fdr), wts, "fm.expand"))
    f1, f2 = e[:, : c // 2], e[:, c // 2 :]
    t = silu(bn_infer(pw(f1, wts, "fm.cbs1", bias=False), wts, "fm.cbs1_bn"))
    t = bn_infer(dw(t, wts, "fm.dw", bias=False), wts, "fm.dw_bn")
    t = silu(bn_infer(pw(t, wts, "fm.cbs2", bias=False), wts, "fm.cbs2_bn"))
    return pw(np.concatenate([gelu(t), f2], axis=1), wts, "fm.merge")


def shuffle(x, groups):
    n, c, h, w = x.shape
    out = np.empty_like(x)
    for k in range(c):
        out[:, k] = x[:, (k % groups) * (c // groups) + k // groups]
    return out


def asff(rgb, ir, wts, groups):
    m_rgb = dw(rgb + cam(rgb, wts, "cam_rgb"), wts, "dw_rgb")
    m_ir = dw(ir + cam(ir, wts, "cam_ir"), wts, "dw_ir")
    fa = pam(m_rgb + m_ir, wts)
    fdr = dfm(fa, wts) + fa
    fb = fm(fdr, wts) + fdr
    return fa, fb, shuffle(fb, groups)


# ---- transformation block -----------------------------------------------

def fatm(p, wts):
    fh = hardswish(bn_infer(conv(p, wts["cbh.weight"], None, pad=1), wts, "cbh_bn"))
    w1, b1 = wts["lcam.fc1.weight"][:, :, 0, 0], wts["lcam.fc1.bias"].ravel()
    w2, b2 = wts["lcam.fc2.weight"][:, :, 0, 0], wts["lcam.fc2.bias"].ravel()

    def branch(v):
        return sigmoid(np.maximum(v @ w1.T + b1, 0.0) @ w2.T + b2)

    gc = branch(fh.mean(axis=(2, 3))) + branch(fh.max(axis=(2, 3)))
    flc = fh * gc[:, :, None, None]
    maps = np.stack([flc.max(axis=1), flc.mean(axis=1)], axis=1)
    gp = sigmoid(conv(maps, wts["lpam.weight"], wts["lpam.bias"], pad=1))
    return flc * gp
