"""Pure-NumPy implementations of the hot kernels.

Signatures match the compiled ``_ckernels`` module exactly; ``_backend``
picks one of the two at import time.
"""

import numpy as np


def _offset_slices(n, off):
    """Slices (source, shifted) pairing index k with k + off inside [0, n)."""
    lo = max(0, -off)
    hi = min(n, n - off)
    return slice(lo, hi), slice(lo + off, hi + off)


_PAIR_BUDGET = 1 << 16  # (i, j) pairs processed per vectorised chunk


def normal_equations(R, t, P, valid, targets, conf, emb, cam, radius, eps_z):
    """Accumulate per-pixel Gauss-Newton normal equations over square neighbourhoods.

    ``R`` (H,W,3,3) and ``t`` (H,W,3) are the current transforms of pixel i,
    ``P`` (H,W,3) the back-projected points of pixel j, ``valid`` (H,W) marks
    usable j, ``targets``/``conf`` (H,W,3), ``emb`` (H,W,E).
    Returns ``(Hm, g, count)`` with shapes (H,W,6,6), (H,W,6), (H,W).

    For each row offset all column offsets are handled at once through
    sliding windows over column-padded copies of the j-side rasters.
    """
    fx, fy, cx, cy = cam
    Himg, Wimg = valid.shape
    Hm = np.zeros((Himg, Wimg, 6, 6))
    g = np.zeros((Himg, Wimg, 6))
    count = np.zeros((Himg, Wimg), dtype=np.int64)
    r_rows = min(radius, Himg - 1)
    r_cols = min(radius, Wimg - 1)
    K = 2 * r_cols + 1

    def windows(a):
        pad = ((0, 0), (r_cols, r_cols)) + ((0, 0),) * (a.ndim - 2)
        w = np.lib.stride_tricks.sliding_window_view(np.pad(a, pad), K, axis=1)
        return np.moveaxis(w, -1, 2)  # (H, W, K, ...)

    Pw, vw, tw, cw, ew = (windows(a) for a in (P, valid, targets, conf, emb))
    Rt = np.swapaxes(R, -1, -2)
    rows_per_chunk = max(1, _PAIR_BUDGET // (Wimg * K))
    for dy in range(-r_rows, r_rows + 1):
        si, _ = _offset_slices(Himg, dy)
        for r0 in range(si.start, si.stop, rows_per_chunk):
            ii = slice(r0, min(si.stop, r0 + rows_per_chunk))
            jj = slice(ii.start + dy, ii.stop + dy)
            Q = np.matmul(Pw[jj], Rt[ii]) + t[ii][:, :, None]
            X, Y, Z = Q[..., 0], Q[..., 1], Q[..., 2]
            ok = vw[jj] & (Z > eps_z)
            if not np.any(ok):
                continue
            du = emb[ii][:, :, None] - ew[jj]
            d2 = np.einsum("...e,...e->...", du, du)
            with np.errstate(over="ignore"):
                a = np.where(ok, 1.0 / (1.0 + np.exp(d2)), 0.0)
            iz = 1.0 / np.where(ok, Z, 1.0)
            res = np.stack([fx * X * iz + cx, fy * Y * iz + cy, iz], axis=-1) - tw[jj]
            res = np.where(ok[..., None], res, 0.0)
            J = np.zeros(Q.shape[:3] + (3, 6))
            J[..., 0, 0] = fx * iz
            J[..., 0, 2] = -fx * X * iz * iz
            J[..., 1, 1] = fy * iz
            J[..., 1, 2] = -fy * Y * iz * iz
            J[..., 2, 2] = -iz * iz
            J[..., 3:] = np.cross(Q[..., None, :], J[..., :3])
            n = J.shape[0]
            J = J.reshape(n, Wimg, 3 * K, 6)
            WJ = J * (a[..., None] * cw[jj]).reshape(n, Wimg, 3 * K, 1)
            Hm[ii] += np.matmul(np.swapaxes(WJ, -1, -2), J)
            g[ii] += np.matmul(np.swapaxes(WJ, -1, -2), res.reshape(n, Wimg, 3 * K, 1))[..., 0]
            count[ii] += ok.sum(axis=-1)
    return Hm, g, count


def smoothing_apply(u, wx, wy):
    """Matrix-free ``(I + Dx^T Wx Dx + Dy^T Wy Dy) u`` for (H,W,C) rasters.

    ``wx[:, -1]`` and ``wy[-1, :]`` are ignored (Neumann boundary).
    """
    out = u.copy()
    ddx = (u[:, 1:] - u[:, :-1]) * wx[:, :-1, None]
    out[:, :-1] -= ddx
    out[:, 1:] += ddx
    ddy = (u[1:] - u[:-1]) * wy[:-1, :, None]
    out[:-1] -= ddy
    out[1:] += ddy
    return out


def _sample_zero(img, x, y):
    """Bilinear sample of (H,W,D) with zero contribution from out-of-range corners."""
    H, W = img.shape[:2]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    out = np.zeros(x.shape + img.shape[2:])
    for oy, ox, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + ox
        yi = y0 + oy
        ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        vals = img[np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1)]
        if img.ndim == 3:
            out += np.where(ok, wgt, 0.0)[..., None] * vals
        else:
            out += np.where(ok, wgt, 0.0) * vals
    return out


def lookup_on_demand(f1, f2_levels, coords, radius, norm):
    """Correlation lookup computing costs from features at query time."""
    H, W, _ = f1.shape
    K = 2 * radius + 1
    out = np.zeros((H, W, len(f2_levels) * K * K))
    x = coords[..., 0]
    y = coords[..., 1]
    col = 0
    for lvl, f2 in enumerate(f2_levels):
        s = 2.0**lvl
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                feat = _sample_zero(f2, x / s + dx, y / s + dy)
                out[..., col] = np.einsum("hwd,hwd->hw", f1, feat) * norm
                col += 1
    return out


def lookup_volume(volume_levels, coords, radius):
    """Correlation lookup from materialised volumes (H*W, H2l, W2l) per level."""
    H, W = coords.shape[:2]
    K = 2 * radius + 1
    out = np.zeros((H, W, len(volume_levels) * K * K))
    x = coords[..., 0].reshape(-1)
    y = coords[..., 1].reshape(-1)
    n = np.arange(H * W)
    col = 0
    for lvl, vol in enumerate(volume_levels):
        s = 2.0**lvl
        H2, W2 = vol.shape[1:]
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                xs = x / s + dx
                ys = y / s + dy
                x0 = np.floor(xs).astype(np.int64)
                y0 = np.floor(ys).astype(np.int64)
                fx = xs - x0
                fy = ys - y0
                acc = np.zeros(H * W)
                for oy, ox, wgt in (
                    (0, 0, (1 - fx) * (1 - fy)),
                    (0, 1, fx * (1 - fy)),
                    (1, 0, (1 - fx) * fy),
                    (1, 1, fx * fy),
                ):
                    xi = x0 + ox
                    yi = y0 + oy
                    ok = (xi >= 0) & (xi < W2) & (yi >= 0) & (yi < H2)
                    acc += np.where(ok, wgt * vol[n, np.clip(yi, 0, H2 - 1), np.clip(xi, 0, W2 - 1)], 0.0)
                out[..., col] = acc.reshape(H, W)
                col += 1
    return out
