"""Reference values for test_metrics.cpp.

Straight numpy/scipy transcription of the published MATLAB implementations
of the structure measure, weighted F-measure and enhanced-alignment
measure. Run with python3; prints the constants pinned in the C++ tests.
"""
import numpy as np
from scipy import ndimage

EPS = np.finfo(np.float64).eps


def inputs():
    H, W = 12, 10
    y, x = np.mgrid[0:H, 0:W]
    gt = ((y - 5) ** 2 / 16.0 + (x - 4) ** 2 / 9.0) <= 1.0
    pred = ((y * 7 + x * 13) % 17) / 16.0
    pred_const_fg = np.where(gt, 0.8, pred)
    return gt, pred, pred_const_fg


def s_object_score(pred, gt):
    x = pred[gt].mean()
    sigma = pred[gt].std(ddof=1) if gt.sum() > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def s_object(pred, gt):
    fg = pred.copy(); fg[~gt] = 0
    bg = 1 - pred; bg[gt] = 0
    u = gt.mean()
    return u * s_object_score(fg, gt) + (1 - u) * s_object_score(bg, ~gt)


def ssim(pred, gt):
    gt = gt.astype(np.float64)
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    if b == 0:
        return 1.0
    return 0.0


def s_region(pred, gt):
    rows, cols = gt.shape
    total = gt.sum()
    i = np.arange(1, cols + 1)
    j = np.arange(1, rows + 1)
    X = int(np.floor(gt.sum(0) @ i / total + 0.5))
    Y = int(np.floor(gt.sum(1) @ j / total + 0.5))
    area = rows * cols
    w1 = X * Y / area
    w2 = (cols - X) * Y / area
    w3 = X * (rows - Y) / area
    w4 = 1 - w1 - w2 - w3
    return (w1 * ssim(pred[:Y, :X], gt[:Y, :X]) + w2 * ssim(pred[:Y, X:], gt[:Y, X:]) +
            w3 * ssim(pred[Y:, :X], gt[Y:, :X]) + w4 * ssim(pred[Y:, X:], gt[Y:, X:]))


def s_measure(pred, gt, alpha=0.5):
    y = gt.mean()
    if y == 0:
        return 1 - pred.mean()
    if y == 1:
        return pred.mean()
    return max(0.0, alpha * s_object(pred, gt) + (1 - alpha) * s_region(pred, gt))


def fspecial_gaussian(size=7, sigma=5.0):
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return h / h.sum()


def wfb(pred, gt, beta2=1.0):
    dgt = gt.astype(np.float64)
    e = np.abs(pred - dgt)
    dst, idx = ndimage.distance_transform_edt(~gt, return_indices=True)
    et = e.copy()
    et[~gt] = e[idx[0][~gt], idx[1][~gt]]
    ea = ndimage.correlate(et, fspecial_gaussian(), mode="constant", cval=0.0)
    min_e_ea = e.copy()
    sel = gt & (ea < e)
    min_e_ea[sel] = ea[sel]
    b = np.ones_like(dgt)
    b[~gt] = 2 - np.exp(np.log(0.5) / 5 * dst[~gt])
    ew = min_e_ea * b
    tpw = dgt.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    r = 1 - ew[gt].mean()
    p = tpw / (EPS + tpw + fpw)
    return (1 + beta2) * r * p / (EPS + r + beta2 * p)


def e_binary(fm, gt):
    dfm, dgt = fm.astype(np.float64), gt.astype(np.float64)
    if dgt.sum() == 0:
        m = 1 - dfm
    elif (1 - dgt).sum() == 0:
        m = dfm
    else:
        afm, agt = dfm - dfm.mean(), dgt - dgt.mean()
        align = 2 * agt * afm / (agt * agt + afm * afm + EPS)
        m = (align + 1) ** 2 / 4
    return m.sum() / gt.size


def e_mean(pred, gt):
    return np.mean([e_binary(pred >= t / 255.0, gt) for t in range(256)])


if __name__ == "__main__":
    gt, pred, pred_c = inputs()
    print("s_measure(pred)    = %.17g" % s_measure(pred, gt))
    print("s_measure(pred_c)  = %.17g" % s_measure(pred_c, gt))
    print("wfb(pred_c)        = %.17g" % wfb(pred_c, gt))
    print("e_mean(pred)       = %.17g" % e_mean(pred, gt))
    print("e_mean(pred_c)     = %.17g" % e_mean(pred_c, gt))
