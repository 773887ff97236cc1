"""Pure-Python level solver; ``_mcf.pyx`` is a statement-for-statement port.

Successive shortest augmenting paths on the level network, one unit at a
time, with Dijkstra on reduced costs. The search runs on a contracted graph:

* one vertex per cell ``(r, q)`` (dimension vertex ``b_{r,q}``), plus the sink;
* class vertices are eliminated. A residual detour ``b_{r,q} -> a_p -> b_{r,q'}``
  (move class ``p`` from dimension ``q`` to ``q'``) becomes a single arc of
  cost ``U[p,q'] - U[p,q]``. The class potential cancels out of the reduced
  cost, so only dimension vertices and the sink carry potentials.
* for every occupied cell and target dimension the cheapest movable member is
  cached (``best_key``/``best_mem``), so expanding a cell costs O(d),
  independent of how many classes sit in it. Rows exist only while a cell has
  members, which keeps memory at O(n_c * s_v * d).

The class currently being routed (the source) is kept out of the cell member
lists until all its units are placed; a simple path never re-enters it.

Unary costs are absorbed by a per-source potential, and every other arc starts
at cost 0 on an empty network, so all-zero initial potentials are feasible.

Arc kinds stored in ``pred_kind``::

    0  source -> b_{r,q}          unary forward, cost U[src, q]
    1  b_{r,q} -> b_{0,q}         sibling ladder forward, cost 2*alpha*y[r,q]
    2  b_{0,q} -> b_{r,q}         sibling ladder reverse, cost -2*alpha*(y[r,q]-1)
    3  b_{0,q} -> t               sink ladder forward, cost 2*beta*y0[q]
    4  b_{r,q} -> b_{r,q'}        move member p: cost U[p,q'] - U[p,q]
"""

from __future__ import annotations

import heapq

INF = 1 << 62


def solve_level(unary, group_of, group_size, s_v, alpha_fp, beta_fp, order):
    """Assign ``s_v`` dimensions to every class at minimum total cost.

    ``unary`` is an ``n_c x d`` int64 matrix of arc costs (negated fixed-point
    activations). Group 0 is the singleton pool; ``group_size[r]`` is its size.
    Classes are routed in ``order``. Returns ``(z, y, y0, total_cost, n_aug)``
    where ``z`` is the 0/1 assignment, ``y[r][q]`` the sibling-ladder fill and
    ``y0[q]`` the sink-ladder fill. Raises ``RuntimeError`` if a unit cannot
    be routed.
    """
    n_c = len(unary)
    d = len(unary[0]) if n_c else 0
    n_groups = len(group_size)
    U = [list(map(int, row)) for row in unary]
    grp = [int(g) for g in group_of]
    n_cells = n_groups * d
    sink = n_cells
    n_nodes = n_cells + 1
    two_a = 2 * int(alpha_fp)
    two_b = 2 * int(beta_fp)

    z = [[0] * d for _ in range(n_c)]
    y = [[0] * d for _ in range(n_groups)]
    y0 = [0] * d
    members = [[] for _ in range(n_cells)]
    best_key = [None] * n_cells
    best_mem = [None] * n_cells
    # groups r >= 1 with y[r][q] > 0, per q (reverse sibling ladders out of b_{0,q})
    active = [[] for _ in range(d)]

    pi = [0] * n_nodes
    dist = [INF] * n_nodes
    done = [False] * n_nodes
    pred_node = [-1] * n_nodes
    pred_kind = [-1] * n_nodes
    pred_mem = [-1] * n_nodes

    def rescan(cell, q2):
        # Cheapest member of ``cell`` that can move to dimension q2 (ties: lowest id).
        q = cell % d
        key_best, mem_best = INF, -1
        for p in members[cell]:
            if z[p][q2]:
                continue
            key = U[p][q2] - U[p][q]
            if key < key_best or (key == key_best and p < mem_best):
                key_best, mem_best = key, p
        best_key[cell][q2] = key_best
        best_mem[cell][q2] = mem_best

    def offer(cell, p, q2):
        key = U[p][q2] - U[p][cell % d]
        keys = best_key[cell]
        mems = best_mem[cell]
        if key < keys[q2] or (key == keys[q2] and p < mems[q2]):
            keys[q2] = key
            mems[q2] = p

    def add_member(cell, p):
        if not members[cell]:
            best_key[cell] = [INF] * d
            best_mem[cell] = [-1] * d
        members[cell].append(p)
        zp = z[p]
        for q2 in range(d):
            if not zp[q2]:
                offer(cell, p, q2)

    def drop_member(cell, p):
        members[cell].remove(p)
        if not members[cell]:
            best_key[cell] = best_mem[cell] = None
            return
        mems = best_mem[cell]
        for q2 in range(d):
            if mems[q2] == p:
                rescan(cell, q2)

    def bump_ladder(r, q, delta):
        before = y[r][q]
        y[r][q] = before + delta
        if before == 0 and delta > 0:
            active[q].append(r)
        elif y[r][q] == 0:
            # swap-remove, matching the compiled kernel's list order
            lst = active[q]
            i = lst.index(r)
            last = lst.pop()
            if i < len(lst):
                lst[i] = last

    total = 0
    n_aug = 0

    for src in order:
        r_src = grp[src]
        for _unit in range(s_v):
            # Source potential: shift so the cheapest unused dimension is at distance 0.
            Us = U[src]
            zs = z[src]
            lo = INF
            for q in range(d):
                if not zs[q]:
                    val = Us[q] - pi[r_src * d + q]
                    if val < lo:
                        lo = val
            heap = []
            touched = []
            for q in range(d):
                if zs[q]:
                    continue
                v = r_src * d + q
                nd = Us[q] - pi[v] - lo
                if nd < dist[v]:
                    if dist[v] == INF:
                        touched.append(v)
                    dist[v] = nd
                    pred_node[v] = -1
                    pred_kind[v] = 0
                    heapq.heappush(heap, (nd, v))
            finalized = []
            found = False
            while heap:
                du, u = heapq.heappop(heap)
                if done[u] or du > dist[u]:
                    continue
                done[u] = True
                finalized.append(u)
                if u == sink:
                    found = True
                    break
                r, q = divmod(u, d)
                base = du + pi[u]
                # Arcs out of u as (head, cost, kind, member).
                if r == 0:
                    arcs = [(sink, two_b * y0[q], 3, -1)]
                    for r2 in active[q]:
                        arcs.append((r2 * d + q, -two_a * (y[r2][q] - 1), 2, -1))
                else:
                    arcs = [(q, two_a * y[r][q], 1, -1)]
                keys = best_key[u]
                mems = best_mem[u]
                if mems is not None:
                    for q2 in range(d):
                        if mems[q2] >= 0:
                            arcs.append((r * d + q2, keys[q2], 4, mems[q2]))
                for v, c, kind, mem in arcs:
                    if done[v]:
                        continue
                    nd = base + c - pi[v]
                    # nothing at or beyond the sink's tentative distance can shorten the path
                    if nd < dist[v] and nd < dist[sink]:
                        if dist[v] == INF:
                            touched.append(v)
                        dist[v] = nd
                        pred_node[v] = u
                        pred_kind[v] = kind
                        pred_mem[v] = mem
                        heapq.heappush(heap, (nd, v))
            if not found:
                raise RuntimeError(f"no augmenting path for class {src}")

            dt = dist[sink]
            for v in finalized:
                pi[v] += dist[v] - dt

            # Collect the path back to the source, then apply it.
            path = []
            v = sink
            while v != -1:
                path.append((pred_node[v], v, pred_kind[v], pred_mem[v]))
                v = pred_node[v]
            path.reverse()
            path = _shortcut(path, d)
            for u, v, kind, mem in path:
                if kind == 0:
                    q = v % d
                    z[src][q] = 1
                    total += U[src][q]
                elif kind == 1:
                    r, q = divmod(u, d)
                    total += two_a * y[r][q]
                    bump_ladder(r, q, +1)
                elif kind == 2:
                    r, q = divmod(v, d)
                    bump_ladder(r, q, -1)
                    total -= two_a * y[r][q]
                elif kind == 3:
                    q = u % d
                    total += two_b * y0[q]
                    y0[q] += 1
                else:
                    q_from = u % d
                    q_to = v % d
                    zm = z[mem]
                    zm[q_from] = 0
                    zm[q_to] = 1
                    total += U[mem][q_to] - U[mem][q_from]
                    drop_member(u, mem)
                    add_member(v, mem)
                    # the member's other cells see q_from freed and q_to taken
                    r = grp[mem]
                    for q in range(d):
                        if zm[q] and q != q_to:
                            cell = r * d + q
                            offer(cell, mem, q_from)
                            if best_mem[cell][q_to] == mem:
                                rescan(cell, q_to)
            n_aug += 1

            for v in touched:
                dist[v] = INF
                done[v] = False
                pred_node[v] = -1
                pred_kind[v] = -1
                pred_mem[v] = -1

        # The source joins its cells now that all its units are placed.
        for q in range(d):
            if z[src][q]:
                add_member(r_src * d + q, src)

    return z, y, y0, total, n_aug


def _shortcut(path, d):
    """Drop zero-cost detours that would route one member through two moves.

    Only possible with multi-unit classes: a shortest contracted path may move
    member ``p`` out of two of its dimensions. The segment between the two
    moves is a zero reduced-cost cycle, so a single move from the first origin
    to the last destination costs the same.
    """
    while True:
        seen = {}
        hit = None
        for i, step in enumerate(path):
            if step[2] == 4:
                if step[3] in seen:
                    hit = (seen[step[3]], i)
                    break
                seen[step[3]] = i
        if hit is None:
            return path
        i, j = hit
        u = path[i][0]
        v = path[j][1]
        path = path[:i] + [(u, v, 4, path[i][3])] + path[j + 1 :]
