"""Fused per-pixel warping loop (numba)."""

import numba
import numpy as np


@numba.njit(cache=True)
def warp_pixels(
    depth, rays, R, t, fx, fy, cx, cy, z_min, bound_tol, identity, src, n_img, cells_x, cells_y, use_cells, with_grad,
    points, points_src, coords, z_out, x0_out, y0_out, values, grad_u, grad_v, valid,
):
    H, W = depth.shape
    n_ch = src.shape[1]
    for y in range(H):
        for x in range(W):
            i = y * W + x
            d = depth[y, x]
            tgt_ok = np.isfinite(d) and d > 0.0
            if not tgt_ok:
                d = 1.0
            X0 = rays[y, x, 0] * d
            X1 = rays[y, x, 1] * d
            X2 = rays[y, x, 2] * d
            points[i, 0] = X0
            points[i, 1] = X1
            points[i, 2] = X2
            Y0 = R[0, 0] * X0 + R[0, 1] * X1 + R[0, 2] * X2 + t[0]
            Y1 = R[1, 0] * X0 + R[1, 1] * X1 + R[1, 2] * X2 + t[1]
            Y2 = R[2, 0] * X0 + R[2, 1] * X1 + R[2, 2] * X2 + t[2]
            points_src[i, 0] = Y0
            points_src[i, 1] = Y1
            points_src[i, 2] = Y2
            z_out[i] = Y2
            front = Y2 > z_min
            inv_z = 1.0 / Y2 if front else 1.0
            if identity:
                # exact grid; the projection of an unprojected pixel rounds
                u = float(x)
                v = float(y)
            else:
                u = fx * Y0 * inv_z + cx
                v = fy * Y1 * inv_z + cy
            coords[i, 0] = u
            coords[i, 1] = v
            if use_cells:
                cx0 = cells_x[i]
                cy0 = cells_y[i]
            else:
                fu_ = np.floor(u) if np.isfinite(u) else 0.0
                fv_ = np.floor(v) if np.isfinite(v) else 0.0
                cx0 = int(min(max(fu_, 0.0), max(W - 2, 0)))
                cy0 = int(min(max(fv_, 0.0), max(H - 2, 0)))
            x0_out[i] = cx0
            y0_out[i] = cy0
            inside = u >= -bound_tol and u <= W - 1 + bound_tol and v >= -bound_tol and v <= H - 1 + bound_tol
            valid[i] = tgt_ok and front and inside
            fu = u - cx0
            fv = v - cy0
            idx = cy0 * W + cx0
            dx = 1 if W > 1 else 0
            dy = W if H > 1 else 0
            for c in range(n_ch):
                a = src[idx, c]
                b = src[idx + dx, c]
                e = src[idx + dy, c]
                f = src[idx + dx + dy, c]
                top = a + fu * (b - a)
                bot = e + fu * (f - e)
                values[i, c] = top + fv * (bot - top)
                if with_grad and c < n_img:
                    grad_u[i, c] = (1.0 - fv) * (b - a) + fv * (f - e)
                    grad_v[i, c] = bot - top
