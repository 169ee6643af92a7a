# cython: language_level=3
"""Compiled kernels: bond hash and breadth-first cluster exploration.

Mirrors ``configuration.edge_hash`` and ``explorer._explore_python`` exactly;
the test suite checks the two backends for identical output.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy
from libc.math cimport sqrt

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t KEY_SALT = 0x2545F4914F6CDD1DULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def mix64_py(uint64_t z):
    return mix64(z)


cdef inline double uniform_uv(uint64_t h0, const int64_t* u, const int64_t* off,
                              bint positive, int d) noexcept nogil:
    cdef uint64_t h = h0
    cdef int i
    cdef int64_t w
    for i in range(d):
        if positive:
            w = 256 * u[i] + off[i] + 128
        else:
            w = 256 * (u[i] + off[i]) - off[i] + 128
        h = mix64(h ^ <uint64_t>w)
    h = mix64(h + GOLDEN)
    return <double>(h >> 11) * INV53


def edge_uniform_words(uint64_t word, int64_t[::1] a, int64_t[::1] b):
    """U(key, (a, b)) for a canonical bond; used to cross-check the Python hash."""
    cdef int d = a.shape[0]
    cdef int64_t off[64]
    cdef int i
    if d > 64:
        raise ValueError("dimension too large")
    for i in range(d):
        off[i] = b[i] - a[i]
    return uniform_uv(mix64(word ^ KEY_SALT), &a[0], off, True, d)


cdef inline int64_t shell_of(const int64_t* c, int d, int norm) noexcept nogil:
    cdef int64_t s = 0, k, x
    cdef int i
    if norm == 0:
        for i in range(d):
            s += c[i] * c[i]
        k = <int64_t>sqrt(<double>s)
        while k * k < s:
            k += 1
        while k > 0 and (k - 1) * (k - 1) >= s:
            k -= 1
        return k
    elif norm == 1:
        for i in range(d):
            x = c[i]
            s += x if x >= 0 else -x
        return s
    else:
        for i in range(d):
            x = c[i]
            if x < 0:
                x = -x
            if x > s:
                s = x
        return s


cdef inline uint64_t hash_coords(const int64_t* c, int d) noexcept nogil:
    cdef uint64_t h = 0x243F6A8885A308D3ULL
    cdef int i
    for i in range(d):
        h = (h ^ <uint64_t>c[i]) * 0x100000001B3ULL
        h ^= h >> 29
    return mix64(h)


cdef struct Buf:
    int d
    int64_t n
    int64_t cap
    int64_t* coords
    int64_t* dist
    int64_t* shell
    int64_t m
    int64_t ecap
    int64_t* edges
    int64_t tcap
    int64_t* table


cdef int buf_init(Buf* b, int d) except -1:
    b.d = d
    b.n = 0
    b.cap = 1024
    b.m = 0
    b.ecap = 1024
    b.tcap = 4096
    b.coords = <int64_t*>malloc(b.cap * d * sizeof(int64_t))
    b.dist = <int64_t*>malloc(b.cap * sizeof(int64_t))
    b.shell = <int64_t*>malloc(b.cap * sizeof(int64_t))
    b.edges = <int64_t*>malloc(b.ecap * 2 * sizeof(int64_t))
    b.table = <int64_t*>malloc(b.tcap * sizeof(int64_t))
    if not (b.coords and b.dist and b.shell and b.edges and b.table):
        raise MemoryError()
    cdef int64_t i
    for i in range(b.tcap):
        b.table[i] = -1
    return 0


cdef void buf_free(Buf* b) noexcept:
    free(b.coords)
    free(b.dist)
    free(b.shell)
    free(b.edges)
    free(b.table)


cdef inline int64_t lookup(Buf* b, const int64_t* c) noexcept nogil:
    cdef uint64_t mask = <uint64_t>(b.tcap - 1)
    cdef uint64_t slot = hash_coords(c, b.d) & mask
    cdef int64_t idx
    cdef int i
    cdef bint same
    while True:
        idx = b.table[slot]
        if idx < 0:
            return -1
        same = True
        for i in range(b.d):
            if b.coords[idx * b.d + i] != c[i]:
                same = False
                break
        if same:
            return idx
        slot = (slot + 1) & mask


cdef int rehash(Buf* b) except -1:
    cdef int64_t newcap = b.tcap * 2
    cdef int64_t* t = <int64_t*>malloc(newcap * sizeof(int64_t))
    if not t:
        raise MemoryError()
    cdef int64_t i
    cdef uint64_t mask = <uint64_t>(newcap - 1), slot
    for i in range(newcap):
        t[i] = -1
    for i in range(b.n):
        slot = hash_coords(&b.coords[i * b.d], b.d) & mask
        while t[slot] >= 0:
            slot = (slot + 1) & mask
        t[slot] = i
    free(b.table)
    b.table = t
    b.tcap = newcap
    return 0


cdef int add_vertex(Buf* b, const int64_t* c, int64_t dist, int64_t shell) except -1:
    cdef void* p
    if b.n == b.cap:
        b.cap *= 2
        p = realloc(b.coords, b.cap * b.d * sizeof(int64_t))
        if not p:
            raise MemoryError()
        b.coords = <int64_t*>p
        p = realloc(b.dist, b.cap * sizeof(int64_t))
        if not p:
            raise MemoryError()
        b.dist = <int64_t*>p
        p = realloc(b.shell, b.cap * sizeof(int64_t))
        if not p:
            raise MemoryError()
        b.shell = <int64_t*>p
    if 2 * (b.n + 1) > b.tcap:
        rehash(b)
    memcpy(&b.coords[b.n * b.d], c, b.d * sizeof(int64_t))
    b.dist[b.n] = dist
    b.shell[b.n] = shell
    cdef uint64_t mask = <uint64_t>(b.tcap - 1)
    cdef uint64_t slot = hash_coords(c, b.d) & mask
    while b.table[slot] >= 0:
        slot = (slot + 1) & mask
    b.table[slot] = b.n
    b.n += 1
    return 0


cdef int add_edge(Buf* b, int64_t i, int64_t j) except -1:
    cdef void* p
    if b.m == b.ecap:
        b.ecap *= 2
        p = realloc(b.edges, b.ecap * 2 * sizeof(int64_t))
        if not p:
            raise MemoryError()
        b.edges = <int64_t*>p
    b.edges[2 * b.m] = i
    b.edges[2 * b.m + 1] = j
    b.m += 1
    return 0


def explore_random(int64_t[::1] origin, int64_t[:, ::1] offsets,
                   int norm, int64_t R, int64_t cap, int64_t budget,
                   bint stop_on_arm, uint64_t word, double p):
    """Breadth-first exploration of the open cluster of ``origin`` inside Q_R.

    ``cap`` / ``budget`` of -1 mean "no limit".  Returns
    ``(coords, dist, shell, edges, flags, max_shell)`` where ``flags`` is
    ``(hit_extrinsic_boundary, hit_intrinsic_cap, hit_budget, stopped_on_arm)``.
    """
    cdef int d = origin.shape[0]
    cdef int k = offsets.shape[0]
    cdef int i, j
    if d > 64:
        raise ValueError("dimension too large for the compiled kernel")
    cdef Buf b
    buf_init(&b, d)
    cdef int64_t v[64]
    cdef bint* positive = <bint*>malloc(k * sizeof(bint))
    cdef int64_t* offs = <int64_t*>malloc(k * d * sizeof(int64_t))
    if not positive or not offs:
        buf_free(&b)
        free(positive)
        free(offs)
        raise MemoryError()
    for j in range(k):
        positive[j] = False
        for i in range(d):
            offs[j * d + i] = offsets[j, i]
        for i in range(d):
            if offsets[j, i] != 0:
                positive[j] = offsets[j, i] > 0
                break
    cdef uint64_t h0 = mix64(word ^ KEY_SALT)
    cdef bint hit_ext = False, hit_cap = False, hit_budget = False, stopped = False
    cdef int64_t head = 0, du, idx, sv, max_shell
    cdef int64_t* u
    for i in range(d):
        v[i] = origin[i]
    max_shell = shell_of(v, d, norm)
    try:
        add_vertex(&b, v, 0, max_shell)
        if stop_on_arm and max_shell >= R:
            stopped = True
        while head < b.n and not stopped:
            du = b.dist[head]
            for j in range(k):
                u = &b.coords[head * d]
                for i in range(d):
                    v[i] = u[i] + offs[j * d + i]
                idx = lookup(&b, v)
                if idx >= 0:
                    if idx > head and uniform_uv(h0, u, &offs[j * d], positive[j], d) < p:
                        add_edge(&b, head, idx)
                    continue
                sv = shell_of(v, d, norm)
                if sv > R:
                    if not hit_ext and uniform_uv(h0, u, &offs[j * d], positive[j], d) < p:
                        hit_ext = True
                    continue
                if cap >= 0 and du >= cap:
                    if not hit_cap and uniform_uv(h0, u, &offs[j * d], positive[j], d) < p:
                        hit_cap = True
                    continue
                if uniform_uv(h0, u, &offs[j * d], positive[j], d) < p:
                    if budget >= 0 and b.n >= budget:
                        hit_budget = True
                        continue
                    add_vertex(&b, v, du + 1, sv)
                    add_edge(&b, head, b.n - 1)
                    if sv > max_shell:
                        max_shell = sv
                    if stop_on_arm and sv >= R:
                        stopped = True
                        break
            head += 1
        coords = np.empty((b.n, d), dtype=np.int64)
        dist = np.empty(b.n, dtype=np.int64)
        shell = np.empty(b.n, dtype=np.int64)
        edges = np.empty((b.m, 2), dtype=np.int64)
        if b.n:
            memcpy(cnp.PyArray_DATA(coords), b.coords, b.n * d * sizeof(int64_t))
            memcpy(cnp.PyArray_DATA(dist), b.dist, b.n * sizeof(int64_t))
            memcpy(cnp.PyArray_DATA(shell), b.shell, b.n * sizeof(int64_t))
        if b.m:
            memcpy(cnp.PyArray_DATA(edges), b.edges, b.m * 2 * sizeof(int64_t))
    finally:
        buf_free(&b)
        free(positive)
        free(offs)
    return coords, dist, shell, edges, (hit_ext, hit_cap, hit_budget, stopped), max_shell



cdef inline bint heap_less(int64_t* key, int64_t a, int64_t b) noexcept nogil:
    # larger shell first, then earlier insertion
    if key[a] != key[b]:
        return key[a] > key[b]
    return a < b


def arm_depth(int64_t[::1] origin, int64_t[:, ::1] offsets, int norm, int64_t R,
              int64_t budget, uint64_t word, double p):
    """Best-first search of the Q_R-confined cluster, farthest shell first.

    Stops at the first vertex of shell R.  Returns ``(max_shell, visited,
    hit_budget)``; ``max_shell`` is exact when R is not reached.
    """
    cdef int d = origin.shape[0]
    cdef int k = offsets.shape[0]
    cdef int i, j
    if d > 64:
        raise ValueError("dimension too large for the compiled kernel")
    cdef Buf b
    buf_init(&b, d)
    cdef int64_t v[64]
    cdef int64_t* u
    cdef bint* positive = <bint*>malloc(k * sizeof(bint))
    cdef int64_t* offs = <int64_t*>malloc(k * d * sizeof(int64_t))
    cdef int64_t hcap = 1024, hn = 0, pos, child, parent, top, sv, max_shell
    cdef int64_t* heap = <int64_t*>malloc(hcap * sizeof(int64_t))
    cdef void* tmp
    cdef bint hit_budget = False, done = False
    cdef uint64_t h0 = mix64(word ^ KEY_SALT)
    if not positive or not offs or not heap:
        buf_free(&b)
        free(positive)
        free(offs)
        free(heap)
        raise MemoryError()
    for j in range(k):
        positive[j] = False
        for i in range(d):
            offs[j * d + i] = offsets[j, i]
        for i in range(d):
            if offsets[j, i] != 0:
                positive[j] = offsets[j, i] > 0
                break
    for i in range(d):
        v[i] = origin[i]
    max_shell = shell_of(v, d, norm)
    try:
        add_vertex(&b, v, 0, max_shell)
        if max_shell >= R:
            done = True
        heap[0] = 0
        hn = 1
        while hn > 0 and not done:
            top = heap[0]
            hn -= 1
            heap[0] = heap[hn]
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= hn:
                    break
                if child + 1 < hn and heap_less(b.shell, heap[child + 1], heap[child]):
                    child += 1
                if heap_less(b.shell, heap[child], heap[pos]):
                    heap[child], heap[pos] = heap[pos], heap[child]
                    pos = child
                else:
                    break
            for j in range(k):
                u = &b.coords[top * d]
                for i in range(d):
                    v[i] = u[i] + offs[j * d + i]
                if lookup(&b, v) >= 0:
                    continue
                sv = shell_of(v, d, norm)
                if sv > R:
                    continue
                if uniform_uv(h0, u, &offs[j * d], positive[j], d) < p:
                    if budget >= 0 and b.n >= budget:
                        hit_budget = True
                        done = True
                        break
                    add_vertex(&b, v, 0, sv)
                    if sv > max_shell:
                        max_shell = sv
                    if sv >= R:
                        done = True
                        break
                    if hn == hcap:
                        hcap *= 2
                        tmp = realloc(heap, hcap * sizeof(int64_t))
                        if not tmp:
                            raise MemoryError()
                        heap = <int64_t*>tmp
                    pos = hn
                    heap[hn] = b.n - 1
                    hn += 1
                    while pos > 0:
                        parent = (pos - 1) // 2
                        if heap_less(b.shell, heap[pos], heap[parent]):
                            heap[pos], heap[parent] = heap[parent], heap[pos]
                            pos = parent
                        else:
                            break
        visited = b.n
    finally:
        buf_free(&b)
        free(positive)
        free(offs)
        free(heap)
    return max_shell, visited, hit_budget
