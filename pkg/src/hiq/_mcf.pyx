# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled level solver; a port of ``_mcf_py.solve_level`` (see there for the algorithm)."""

import numpy as np
from libc.stdint cimport int32_t, int64_t, uint8_t

cdef int64_t INF = (<int64_t>1) << 62


cdef inline void _heap_push(int64_t* hk, int32_t* hv, Py_ssize_t* size,
                            int64_t key, int32_t node) noexcept nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if hk[parent] < key or (hk[parent] == key and hv[parent] <= node):
            break
        hk[i] = hk[parent]
        hv[i] = hv[parent]
        i = parent
    hk[i] = key
    hv[i] = node


cdef inline void _heap_pop(int64_t* hk, int32_t* hv, Py_ssize_t* size) noexcept nogil:
    cdef Py_ssize_t n = size[0] - 1
    cdef int64_t key = hk[n]
    cdef int32_t node = hv[n]
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t child
    size[0] = n
    if n == 0:
        return
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        if child + 1 < n and (hk[child + 1] < hk[child] or
                              (hk[child + 1] == hk[child] and hv[child + 1] < hv[child])):
            child += 1
        if key < hk[child] or (key == hk[child] and node <= hv[child]):
            break
        hk[i] = hk[child]
        hv[i] = hv[child]
        i = child
    hk[i] = key
    hv[i] = node


cdef struct Level:
    Py_ssize_t n_c, d, n_groups, n_cells
    int64_t* U
    uint8_t* z
    int64_t* grp
    int64_t* y
    int64_t* y0
    int64_t* cell_off      # start of each cell's member slots
    int64_t* cell_cnt
    int32_t* mem           # member slots
    int64_t* mpos          # slot index of (p, q) while p sits in cell (grp[p], q)
    int64_t* row_of        # cache row of each cell, -1 while the cell is empty
    int64_t* free_rows
    Py_ssize_t n_free
    int64_t* best_key      # best_key[row * d + q2]
    int32_t* best_mem
    int64_t* act           # act[q * n_groups + i]: groups with y[r, q] > 0
    int64_t* act_cnt
    int64_t* act_pos


cdef void _rescan(Level* L, Py_ssize_t cell, Py_ssize_t q2) noexcept nogil:
    cdef Py_ssize_t d = L.d
    cdef Py_ssize_t q = cell % d
    cdef Py_ssize_t i, p
    cdef int64_t key, key_best = INF
    cdef int32_t mem_best = -1
    for i in range(L.cell_off[cell], L.cell_off[cell] + L.cell_cnt[cell]):
        p = L.mem[i]
        if L.z[p * d + q2]:
            continue
        key = L.U[p * d + q2] - L.U[p * d + q]
        if key < key_best or (key == key_best and p < mem_best):
            key_best = key
            mem_best = <int32_t>p
    L.best_key[L.row_of[cell] * d + q2] = key_best
    L.best_mem[L.row_of[cell] * d + q2] = mem_best


cdef inline void _offer(Level* L, Py_ssize_t cell, Py_ssize_t p, Py_ssize_t q2) noexcept nogil:
    cdef Py_ssize_t d = L.d
    cdef int64_t key = L.U[p * d + q2] - L.U[p * d + cell % d]
    cdef Py_ssize_t j = L.row_of[cell] * d + q2
    if key < L.best_key[j] or (key == L.best_key[j] and p < L.best_mem[j]):
        L.best_key[j] = key
        L.best_mem[j] = <int32_t>p


cdef void _add_member(Level* L, Py_ssize_t cell, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t d = L.d
    cdef Py_ssize_t slot = L.cell_off[cell] + L.cell_cnt[cell]
    cdef Py_ssize_t q2, row
    if L.cell_cnt[cell] == 0:
        L.n_free -= 1
        row = L.free_rows[L.n_free]
        L.row_of[cell] = row
        for q2 in range(d):
            L.best_key[row * d + q2] = INF
            L.best_mem[row * d + q2] = -1
    L.mem[slot] = <int32_t>p
    L.mpos[p * d + cell % d] = slot
    L.cell_cnt[cell] += 1
    for q2 in range(d):
        if not L.z[p * d + q2]:
            _offer(L, cell, p, q2)


cdef void _drop_member(Level* L, Py_ssize_t cell, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t d = L.d
    cdef Py_ssize_t q = cell % d
    cdef Py_ssize_t slot = L.mpos[p * d + q]
    cdef Py_ssize_t last = L.cell_off[cell] + L.cell_cnt[cell] - 1
    cdef Py_ssize_t other = L.mem[last]
    cdef Py_ssize_t q2
    L.mem[slot] = <int32_t>other
    L.mpos[other * d + q] = slot
    L.cell_cnt[cell] -= 1
    if L.cell_cnt[cell] == 0:
        L.free_rows[L.n_free] = L.row_of[cell]
        L.n_free += 1
        L.row_of[cell] = -1
        return
    for q2 in range(d):
        if L.best_mem[L.row_of[cell] * d + q2] == p:
            _rescan(L, cell, q2)


cdef inline void _bump_ladder(Level* L, Py_ssize_t r, Py_ssize_t q, int64_t delta) noexcept nogil:
    cdef Py_ssize_t ng = L.n_groups
    cdef Py_ssize_t cell = r * L.d + q
    cdef int64_t before = L.y[cell]
    cdef Py_ssize_t i, last
    L.y[cell] = before + delta
    if before == 0 and delta > 0:
        L.act[q * ng + L.act_cnt[q]] = r
        L.act_pos[cell] = L.act_cnt[q]
        L.act_cnt[q] += 1
    elif L.y[cell] == 0:
        i = L.act_pos[cell]
        L.act_cnt[q] -= 1
        last = L.act[q * ng + L.act_cnt[q]]
        if i < L.act_cnt[q]:
            L.act[q * ng + i] = last
            L.act_pos[last * L.d + q] = i


def solve_level(unary, group_of, group_size, Py_ssize_t s_v, int64_t alpha_fp, int64_t beta_fp, order):
    """Same contract as :func:`hiq._mcf_py.solve_level`; returns numpy arrays."""
    cdef int64_t[::1] U_arr = np.ascontiguousarray(unary, dtype=np.int64).ravel()
    cdef int64_t[::1] grp_arr = np.ascontiguousarray(group_of, dtype=np.int64)
    cdef int64_t[::1] gsize = np.ascontiguousarray(group_size, dtype=np.int64)
    cdef int64_t[::1] order_arr = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n_c = grp_arr.shape[0]
    cdef Py_ssize_t d = U_arr.shape[0] // n_c if n_c else 0
    cdef Py_ssize_t n_groups = gsize.shape[0]
    cdef Py_ssize_t n_cells = n_groups * d
    cdef Py_ssize_t sink = n_cells
    cdef Py_ssize_t n_nodes = n_cells + 1
    cdef int64_t two_a = 2 * alpha_fp
    cdef int64_t two_b = 2 * beta_fp

    z_out = np.zeros(n_c * d, dtype=np.uint8)
    y_out = np.zeros(n_cells, dtype=np.int64)
    y0_out = np.zeros(d, dtype=np.int64)
    cdef uint8_t[::1] z = z_out
    cdef int64_t[::1] y = y_out
    cdef int64_t[::1] y0 = y0_out

    goff_np = np.concatenate(([0], np.cumsum(gsize))).astype(np.int64)
    cell_off_np = (goff_np[:-1, None] * d + np.arange(d)[None, :] * np.asarray(gsize)[:, None]).ravel()
    cdef int64_t[::1] cell_off = np.ascontiguousarray(cell_off_np, dtype=np.int64)
    cdef int64_t[::1] cell_cnt = np.zeros(n_cells, dtype=np.int64)
    cdef int32_t[::1] mem = np.zeros(max(n_c * d, 1), dtype=np.int32)
    cdef int64_t[::1] mpos = np.zeros(max(n_c * d, 1), dtype=np.int64)
    # a class occupies s_v cells, so at most n_c * s_v cells hold members at once
    cdef Py_ssize_t n_rows = max(1, min(n_cells, n_c * s_v))
    cdef int64_t[::1] row_of = np.full(max(n_cells, 1), -1, dtype=np.int64)
    cdef int64_t[::1] free_rows = np.arange(n_rows - 1, -1, -1, dtype=np.int64)
    cdef int64_t[::1] best_key = np.empty(n_rows * max(d, 1), dtype=np.int64)
    cdef int32_t[::1] best_mem = np.empty(n_rows * max(d, 1), dtype=np.int32)
    cdef int64_t[::1] act = np.zeros(max(d * n_groups, 1), dtype=np.int64)
    cdef int64_t[::1] act_cnt = np.zeros(max(d, 1), dtype=np.int64)
    cdef int64_t[::1] act_pos = np.zeros(max(n_cells, 1), dtype=np.int64)

    cdef int64_t[::1] pi = np.zeros(n_nodes, dtype=np.int64)
    cdef int64_t[::1] dist = np.full(n_nodes, INF, dtype=np.int64)
    cdef uint8_t[::1] done = np.zeros(n_nodes, dtype=np.uint8)
    cdef int64_t[::1] pred_node = np.full(n_nodes, -1, dtype=np.int64)
    cdef int64_t[::1] pred_kind = np.full(n_nodes, -1, dtype=np.int64)
    cdef int64_t[::1] pred_mem = np.full(n_nodes, -1, dtype=np.int64)
    cdef int32_t[::1] touched = np.empty(n_nodes, dtype=np.int32)
    cdef int32_t[::1] finalized = np.empty(n_nodes, dtype=np.int32)
    # path steps: (tail, head, kind, member)
    cdef int64_t[:, ::1] path = np.empty((n_nodes + 1, 4), dtype=np.int64)
    cdef Py_ssize_t heap_cap = n_nodes * (d + n_groups + 2) + d + 1
    cdef int64_t[::1] hk = np.empty(heap_cap, dtype=np.int64)
    cdef int32_t[::1] hv = np.empty(heap_cap, dtype=np.int32)

    cdef Level L
    L.n_c = n_c
    L.d = d
    L.n_groups = n_groups
    L.n_cells = n_cells
    L.U = &U_arr[0] if n_c else NULL
    L.z = &z[0] if n_c else NULL
    L.grp = &grp_arr[0] if n_c else NULL
    L.y = &y[0] if n_cells else NULL
    L.y0 = &y0[0] if d else NULL
    L.cell_off = &cell_off[0] if n_cells else NULL
    L.cell_cnt = &cell_cnt[0] if n_cells else NULL
    L.mem = &mem[0]
    L.mpos = &mpos[0]
    L.row_of = &row_of[0]
    L.free_rows = &free_rows[0]
    L.n_free = n_rows
    L.best_key = &best_key[0]
    L.best_mem = &best_mem[0]
    L.act = &act[0]
    L.act_cnt = &act_cnt[0]
    L.act_pos = &act_pos[0]

    cdef Py_ssize_t row, n_rev
    cdef Py_ssize_t oi, src, r_src, unit, q, q2, r, r2, u, v, kind, m, i, j, k, cell
    cdef Py_ssize_t hsize, n_touched, n_final, n_path, n_order = order_arr.shape[0]
    cdef int64_t lo, val, nd, du, base, c, dt
    cdef int64_t total = 0
    cdef Py_ssize_t n_aug = 0
    cdef int failed = -1
    cdef bint found

    with nogil:
        for oi in range(n_order):
            src = order_arr[oi]
            r_src = grp_arr[src]
            for unit in range(s_v):
                lo = INF
                for q in range(d):
                    if not z[src * d + q]:
                        val = U_arr[src * d + q] - pi[r_src * d + q]
                        if val < lo:
                            lo = val
                hsize = 0
                n_touched = 0
                n_final = 0
                for q in range(d):
                    if z[src * d + q]:
                        continue
                    v = r_src * d + q
                    nd = U_arr[src * d + q] - pi[v] - lo
                    if nd < dist[v]:
                        if dist[v] == INF:
                            touched[n_touched] = <int32_t>v
                            n_touched += 1
                        dist[v] = nd
                        pred_node[v] = -1
                        pred_kind[v] = 0
                        _heap_push(&hk[0], &hv[0], &hsize, nd, <int32_t>v)
                found = False
                while hsize > 0:
                    du = hk[0]
                    u = hv[0]
                    _heap_pop(&hk[0], &hv[0], &hsize)
                    if done[u] or du > dist[u]:
                        continue
                    done[u] = 1
                    finalized[n_final] = <int32_t>u
                    n_final += 1
                    if u == sink:
                        found = True
                        break
                    r = u // d
                    q = u % d
                    base = du + pi[u]
                    # Arc order matches the Python kernel: ladder/sink, reverse ladders, moves.
                    row = row_of[u]
                    n_rev = act_cnt[q] if r == 0 else 0
                    for k in range(-1, n_rev + (d if row >= 0 else 0)):
                        if k == -1:
                            if r == 0:
                                v = sink
                                c = two_b * y0[q]
                                kind = 3
                            else:
                                v = q
                                c = two_a * y[u]
                                kind = 1
                            m = -1
                        elif k < n_rev:
                            r2 = act[q * n_groups + k]
                            v = r2 * d + q
                            c = -two_a * (y[v] - 1)
                            kind = 2
                            m = -1
                        else:
                            q2 = k - n_rev
                            m = best_mem[row * d + q2]
                            if m < 0:
                                continue
                            v = r * d + q2
                            c = best_key[row * d + q2]
                            kind = 4
                        if done[v]:
                            continue
                        nd = base + c - pi[v]
                        if nd < dist[v] and nd < dist[sink]:
                            if dist[v] == INF:
                                touched[n_touched] = <int32_t>v
                                n_touched += 1
                            dist[v] = nd
                            pred_node[v] = u
                            pred_kind[v] = kind
                            pred_mem[v] = m
                            _heap_push(&hk[0], &hv[0], &hsize, nd, <int32_t>v)
                if not found:
                    failed = src
                    break

                dt = dist[sink]
                for i in range(n_final):
                    v = finalized[i]
                    pi[v] += dist[v] - dt

                n_path = 0
                v = sink
                while v != -1:
                    path[n_path, 0] = pred_node[v]
                    path[n_path, 1] = v
                    path[n_path, 2] = pred_kind[v]
                    path[n_path, 3] = pred_mem[v]
                    n_path += 1
                    v = pred_node[v]
                for i in range(n_path // 2):
                    for k in range(4):
                        c = path[i, k]
                        path[i, k] = path[n_path - 1 - i, k]
                        path[n_path - 1 - i, k] = c
                n_path = _shortcut(path, n_path)

                for i in range(n_path):
                    u = path[i, 0]
                    v = path[i, 1]
                    kind = path[i, 2]
                    if kind == 0:
                        q = v % d
                        z[src * d + q] = 1
                        total += U_arr[src * d + q]
                    elif kind == 1:
                        total += two_a * y[u]
                        _bump_ladder(&L, u // d, u % d, 1)
                    elif kind == 2:
                        _bump_ladder(&L, v // d, v % d, -1)
                        total -= two_a * y[v]
                    elif kind == 3:
                        q = u % d
                        total += two_b * y0[q]
                        y0[q] += 1
                    else:
                        m = path[i, 3]
                        q = u % d
                        q2 = v % d
                        z[m * d + q] = 0
                        z[m * d + q2] = 1
                        total += U_arr[m * d + q2] - U_arr[m * d + q]
                        _drop_member(&L, u, m)
                        _add_member(&L, v, m)
                        r = grp_arr[m]
                        for k in range(d):
                            if z[m * d + k] and k != q2:
                                cell = r * d + k
                                _offer(&L, cell, m, q)
                                if best_mem[row_of[cell] * d + q2] == m:
                                    _rescan(&L, cell, q2)
                n_aug += 1

                for i in range(n_touched):
                    v = touched[i]
                    dist[v] = INF
                    done[v] = 0
                    pred_node[v] = -1
                    pred_kind[v] = -1
                    pred_mem[v] = -1
            if failed >= 0:
                break

            for q in range(d):
                if z[src * d + q]:
                    _add_member(&L, r_src * d + q, src)

    if failed >= 0:
        raise RuntimeError(f"no augmenting path for class {failed}")
    return z_out.reshape(n_c, d), y_out.reshape(n_groups, d), y0_out, int(total), int(n_aug)


cdef Py_ssize_t _shortcut(int64_t[:, ::1] path, Py_ssize_t n) noexcept nogil:
    # Merge two moves of the same member into one; the segment between them is
    # a zero reduced-cost cycle.
    cdef Py_ssize_t i, j, k, shift
    cdef bint hit = True
    while hit:
        hit = False
        for j in range(n):
            if path[j, 2] != 4:
                continue
            for i in range(j):
                if path[i, 2] == 4 and path[i, 3] == path[j, 3]:
                    hit = True
                    break
            if hit:
                break
        if hit:
            path[i, 1] = path[j, 1]
            shift = j - i
            for k in range(j + 1, n):
                path[k - shift, 0] = path[k, 0]
                path[k - shift, 1] = path[k, 1]
                path[k - shift, 2] = path[k, 2]
                path[k - shift, 3] = path[k, 3]
            n -= shift
    return n
