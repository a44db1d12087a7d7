"""Independent reference implementations the tests check the library against.

Everything here is deliberately written the slow, obvious way (index loops,
dense matrices, explicit formulas) and never calls into the code paths it is
used to verify.
"""

import math

import numpy as np


def brute_correlate2d(x, w, padding="same", stride=1):
    """Quadruple-loop sliding inner products with zero padding."""
    b, c, h, wid = x.shape
    o, _, k, _ = w.shape
    pad = k // 2 if padding == "same" else 0
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wid + 2 * pad - k) // stride + 1
    out = np.zeros((b, o, ho, wo), dtype=np.float64)
    for bi in range(b):
        for oi in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                sy = y * stride + u - pad
                                sx = xx * stride + v - pad
                                if 0 <= sy < h and 0 <= sx < wid:
                                    acc += float(x[bi, ci, sy, sx]) * float(w[oi, ci, u, v])
                    out[bi, oi, y, xx] = acc
    return out


def conv_dense_matrix(in_shape, w, padding="same", stride=1):
    """The correlation as an explicit dense matrix on the flattened input."""
    c, h, wid = in_shape
    o, _, k, _ = w.shape
    pad = k // 2 if padding == "same" else 0
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wid + 2 * pad - k) // stride + 1
    m = np.zeros((o * ho * wo, c * h * wid), dtype=np.float64)
    for oi in range(o):
        for y in range(ho):
            for xx in range(wo):
                row = (oi * ho + y) * wo + xx
                for ci in range(c):
                    for u in range(k):
                        for v in range(k):
                            sy = y * stride + u - pad
                            sx = xx * stride + v - pad
                            if 0 <= sy < h and 0 <= sx < wid:
                                col = (ci * h + sy) * wid + sx
                                m[row, col] += float(w[oi, ci, u, v])
    return m


def rotation_dense_matrix(size, angle, method="gaussian", sigma=0.5, kernel_size=3):
    """Dense interpolated-rotation operator built from the definition."""
    c = (size - 1) / 2.0
    m = np.zeros((size * size, size * size), dtype=np.float64)
    quarter = angle / (math.pi / 2.0)
    if abs(quarter - round(quarter)) < 1e-12:
        q = int(round(quarter)) % 4
        for y in range(size):
            for x in range(size):
                sy, sx = y, x
                for _ in range(q):
                    sy, sx = sx, size - 1 - sy
                m[y * size + x, sy * size + sx] = 1.0
        return m
    cos, sin = math.cos(angle), math.sin(angle)
    half = kernel_size // 2
    for y in range(size):
        for x in range(size):
            dy, dx = y - c, x - c
            sy = c + cos * dy + sin * dx
            sx = c - sin * dy + cos * dx
            if method == "gaussian":
                cy, cx = round(sy), round(sx)
                cand = [(cy + a, cx + b) for a in range(-half, half + 1)
                        for b in range(-half, half + 1)]
                weights = [math.exp(-((gy - sy) ** 2 + (gx - sx) ** 2)
                                    / (2 * sigma * sigma)) for gy, gx in cand]
            else:
                fy, fx = math.floor(sy), math.floor(sx)
                ay, ax = sy - fy, sx - fx
                cand = [(fy, fx), (fy, fx + 1), (fy + 1, fx), (fy + 1, fx + 1)]
                weights = [(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax]
            pairs = [(wgt, gy, gx) for wgt, (gy, gx) in zip(weights, cand)
                     if 0 <= gy < size and 0 <= gx < size and wgt > 0]
            total = sum(p[0] for p in pairs)
            if total <= 0:
                continue
            for wgt, gy, gx in pairs:
                m[y * size + x, gy * size + gx] = wgt / total
    return m


# -- p4-style periodic group convolution, fully independent --------------------------


def p4_rotate_point(y, x, q, n):
    for _ in range(q % 4):
        y, x = (-x) % n, y
    return y, x


def p4_inverse(t, n):
    q, zy, zx = t
    qi = (-q) % 4
    ry, rx = p4_rotate_point((-zy) % n, (-zx) % n, qi, n)
    return qi, ry, rx


def p4_compose(a, b, n):
    qa, ya, xa = a
    qb, yb, xb = b
    ry, rx = p4_rotate_point(yb, xb, qa, n)
    return (qa + qb) % 4, (ry + ya) % n, (rx + xa) % n


def p4_signal_transform(f, t, n):
    """L_t[f](x) = f(t^-1 x) on the periodic n x n grid."""
    ti = p4_inverse(t, n)
    out = np.empty_like(f)
    for y in range(n):
        for x in range(n):
            ry, rx = p4_rotate_point(y, x, ti[0], n)
            out[y, x] = f[(ry + ti[1]) % n, (rx + ti[2]) % n]
    return out


def p4_elements(n):
    return [(q, zy, zx) for q in range(4) for zy in range(n) for zx in range(n)]


def p4_permutation_indices(n):
    """perm[g][i] = j with L_g[psi].flat[i] == psi.flat[j]."""
    grid = np.arange(n * n, dtype=np.int64).reshape(n, n)
    return np.stack([p4_signal_transform(grid, t, n).reshape(-1)
                     for t in p4_elements(n)])


def p4_group_correlate(f, psi, n, perms=None):
    """[f *_G psi](t) = sum_x f(x) L_t[psi](x) over quarter turns and shifts."""
    if perms is None:
        perms = p4_permutation_indices(n)
    transformed = psi.reshape(-1)[perms]
    return (transformed @ f.reshape(-1).astype(np.float64)).reshape(4, n, n)


def p4_response_transform(resp, t, n):
    """L_t[F](g) = F(t^-1 g) on the group-valued response."""
    out = np.empty_like(resp)
    ti = p4_inverse(t, n)
    for q in range(4):
        for zy in range(n):
            for zx in range(n):
                gq, gy, gx = p4_compose(ti, (q, zy, zx), n)
                out[q, zy, zx] = resp[gq, gy, gx]
    return out


def gradcheck_catalog(seed=0):
    """(name, scalar-builder, input arrays) for every differentiable operation."""
    from rotoconv import tensor as T
    from rotoconv.basis import populate_partial
    from rotoconv.groups import RotationOperators
    from rotoconv.network import gconv_input, gconv_intermediate

    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    labels = np.array([0, 2, 1])
    elements = populate_partial(rng.uniform(-1, 1, (2, 3, 3, 3))).elements
    ones_el = np.ones((8, 1, 1, 1))
    ops = RotationOperators(6, 8, "gaussian")

    def rot(x):
        return T.spatial_linear_map(x, lambda m: ops.apply_flat(m, 1),
                                    lambda m: ops.apply_flat_t(m, 1), (6, 6))

    return [
        ("add_broadcast", lambda a, b: T.l1_norm(a + b), [r((3, 4)), r(4)]),
        ("sub", lambda a, b: T.l1_norm(a - b), [r((2, 3)), r((2, 3))]),
        ("mul_broadcast", lambda a, b: T.l1_norm(a * b), [r((2, 3)), r(3)]),
        ("scale", lambda a: T.l1_norm(T.scale(a, -2.5)), [r((2, 3))]),
        ("matmul", lambda a, b: T.l1_norm(T.matmul(a, b)), [r((3, 4)), r((4, 2))]),
        ("matmul_batched", lambda a, b: T.l1_norm(T.matmul(a, b)),
         [r((2, 3, 4)), r((4, 2))]),
        ("reshape", lambda a: T.l1_norm(T.reshape(a, (6,))), [r((2, 3))]),
        ("transpose", lambda a: T.l1_norm(T.transpose(a, (1, 2, 0))), [r((2, 3, 4))]),
        ("flip_spatial", lambda a: T.l1_norm(T.flip_spatial(a)), [r((2, 3, 3))]),
        ("rot90_spatial", lambda a: T.l1_norm(T.rot90_spatial(a, 3)), [r((2, 4, 4))]),
        ("roll_axis", lambda a: T.l1_norm(T.roll_axis(a, 2, -3)), [r((5, 3, 3))]),
        ("take_slot", lambda a: T.l1_norm(T.take_slot(a, 1)), [r((3, 2, 2))]),
        ("crop2d", lambda a: T.l1_norm(T.crop2d(a, 1, 1)), [r((2, 5, 5))]),
        ("relu", lambda a: T.l1_norm(T.relu(a)), [r((3, 4)) + 0.2]),
        ("l1_norm", lambda a: T.l1_norm(a), [r((3, 3)) + 0.1]),
        ("softmax_cross_entropy",
         lambda a: T.softmax_cross_entropy(a, labels), [r((3, 4))]),
        ("correlate2d_same", lambda a, b: T.l1_norm(T.correlate2d(a, b)),
         [r((2, 2, 5, 5)), r((3, 2, 3, 3))]),
        ("correlate2d_valid_stride2",
         lambda a, b: T.l1_norm(T.correlate2d(a, b, "valid", 2)),
         [r((1, 2, 7, 7)), r((2, 2, 3, 3))]),
        ("transpose_correlate2d",
         lambda a, b: T.l1_norm(T.transpose_correlate2d(a, b)),
         [r((2, 3, 5, 5)), r((3, 2, 3, 3))]),
        ("maxpool2x2", lambda a: T.l1_norm(T.maxpool2x2(a)), [r((2, 2, 4, 4))]),
        ("global_maxpool", lambda a: T.l1_norm(T.global_maxpool(a, 2)),
         [r((2, 3, 4, 4))]),
        ("batchnorm_train",
         lambda a, g, b: T.l1_norm(T.batchnorm_train(a, g, b, (0, 2, 3))[0]),
         [r((4, 3, 3, 3)), r(3) + 1.5, r(3)]),
        ("batchnorm_eval",
         lambda a, g, b: T.l1_norm(T.batchnorm_eval(a, g, b, (0, 2, 3),
                                                    np.zeros(3), np.ones(3))),
         [r((4, 3, 3, 3)), r(3) + 1.5, r(3)]),
        ("spatial_linear_map", lambda a: T.l1_norm(rot(a)), [r((2, 6, 6))]),
        ("gconv_input", lambda a, b: T.l1_norm(gconv_input(a, b, elements)),
         [r((2, 2, 5, 5)), r((2, 2, 3))]),
        ("gconv_intermediate",
         lambda a, b: T.l1_norm(gconv_intermediate(a, b, elements)),
         [r((1, 2, 8, 4, 4)), r((2, 2, 8, 3))]),
        ("gconv_1x1", lambda a, b: T.l1_norm(gconv_intermediate(a, b, ones_el)),
         [r((1, 2, 8, 3, 3)), r((2, 2, 8, 1))]),
        ("composite_conv_relu_l1",
         lambda a, b: T.l1_norm(T.relu(T.correlate2d(a, b))),
         [r((1, 1, 5, 5)), r((2, 1, 3, 3))]),
    ]
