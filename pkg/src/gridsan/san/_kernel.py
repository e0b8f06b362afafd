"""Compiled event loop for models built only from fixed descriptors.

``lower`` turns a :class:`SanModel` into flat arrays; it returns ``None`` when a
model uses callbacks or channel operations, in which case callers fall back to
the reference engine. The loop mirrors ``engine.Simulator.simulate`` step for
step, including the order of random draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gridsan._jit import njit
from gridsan.san.model import (
    CMP_CODES,
    TOKEN,
    Add,
    Cmp,
    Const,
    Copy,
    Deterministic,
    Exponential,
    Instantaneous,
    Layout,
    Linear,
    SanModel,
    Set,
    Share,
)

OK, NEG_TOKENS, BAD_RATE, INST_LOOP = 0, 1, 2, 3
_EXP, _INST, _DET = 0, 1, 2
_ADD, _SET, _COPY, _SHARE = 0, 1, 2, 3
MAX_INSTANTANEOUS = 1_000_000


@dataclass
class LoweredModel:
    layout: Layout
    names: list[str]
    m0: np.ndarray
    kind: np.ndarray
    rate_slot: np.ndarray
    rate_a: np.ndarray
    rate_b: np.ndarray
    pred_ptr: np.ndarray
    pred_slot: np.ndarray
    pred_op: np.ndarray
    pred_val: np.ndarray
    case_ptr: np.ndarray
    case_prob: np.ndarray
    prog_base: np.ndarray
    prog_ptr: np.ndarray
    op_code: np.ndarray
    op_a: np.ndarray
    op_b: np.ndarray
    op_val: np.ndarray
    op_tptr: np.ndarray
    tgt: np.ndarray
    aff_ptr: np.ndarray
    aff: np.ndarray
    tok_ptr: np.ndarray
    tok: np.ndarray

    def arrays(self) -> tuple:
        return (self.kind, self.rate_slot, self.rate_a, self.rate_b, self.pred_ptr, self.pred_slot, self.pred_op,
                self.pred_val, self.case_ptr, self.case_prob, self.prog_base, self.prog_ptr, self.op_code, self.op_a,
                self.op_b, self.op_val, self.op_tptr, self.tgt, self.aff_ptr, self.aff, self.tok_ptr, self.tok)


def lower(model: SanModel, affected=None) -> LoweredModel | None:
    lay = Layout(model.places)
    i64 = lambda xs: np.asarray(xs, dtype=np.int64)
    f64 = lambda xs: np.asarray(xs, dtype=np.float64)
    kind, rslot, ra, rb = [], [], [], []
    pred_ptr, pslot, pop, pval = [0], [], [], []
    case_ptr, cprob = [0], []
    prog_base, prog_ptr = [], [0]
    code, oa, ob, oval, tptr, tgt = [], [], [], [], [0], []

    def emit(effects) -> bool:
        for e in effects:
            if isinstance(e, Add):
                code.append(_ADD); oa.append(lay.scalar_slot(e.place)); ob.append(-1); oval.append(e.amount)
            elif isinstance(e, Set):
                code.append(_SET); oa.append(lay.scalar_slot(e.place)); ob.append(-1); oval.append(e.value)
            elif isinstance(e, Copy):
                code.append(_COPY); oa.append(lay.scalar_slot(e.dst)); ob.append(lay.scalar_slot(e.src)); oval.append(0.0)
            elif isinstance(e, Share):
                code.append(_SHARE); oa.append(lay.scalar_slot(e.src)); ob.append(lay.scalar_slot(e.lost)); oval.append(0.0)
                tgt.extend(lay.scalar_slot(t) for t in e.targets)
            else:
                return False
            tptr.append(len(tgt))
        prog_ptr.append(len(code))
        return True

    try:
        for a in model.activities:
            t = a.timing
            if isinstance(t, Instantaneous):
                kind.append(_INST); rslot.append(-1); ra.append(0.0); rb.append(0.0)
            elif isinstance(t, Exponential) and isinstance(t.rate, Const):
                kind.append(_EXP); rslot.append(-1); ra.append(t.rate.value); rb.append(0.0)
            elif isinstance(t, Exponential) and isinstance(t.rate, Linear):
                kind.append(_EXP); rslot.append(lay.scalar_slot(t.rate.place)); ra.append(t.rate.intercept)
                rb.append(t.rate.slope)
            elif isinstance(t, Deterministic) and isinstance(t.delay, Const):
                kind.append(_DET); rslot.append(-1); ra.append(t.delay.value); rb.append(0.0)
            else:
                return None
            for g in a.input_gates:
                for p in g.predicates:
                    if not isinstance(p, Cmp):
                        return None
                    pslot.append(lay.scalar_slot(p.place)); pop.append(CMP_CODES[p.op]); pval.append(p.value)
            pred_ptr.append(len(pslot))
            probs = []
            for c in a.cases:
                if not isinstance(c.probability, Const):
                    return None
                probs.append(c.probability.value)
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                return None
            cprob.extend(probs)
            case_ptr.append(len(cprob))
            prog_base.append(len(prog_ptr) - 1)
            if not emit([e for g in a.input_gates for e in g.effects]):
                return None
            for c in a.cases:
                if not emit(c.gate.effects):
                    return None
    except Exception:
        return None

    if affected is None:
        from gridsan.san.engine import CompiledModel
        affected = CompiledModel(model).affected
    aff_ptr, aff, tok_ptr, tok = [0], [], [0], []
    for k, a in enumerate(model.activities):
        for c in range(len(a.cases)):
            aff.extend(affected[k][c])
            aff_ptr.append(len(aff))
            tok.extend(lay.slot(p) for p in a.writes(c) if lay.kind[p] == TOKEN)
            tok_ptr.append(len(tok))
    return LoweredModel(
        layout=lay, names=[a.name for a in model.activities], m0=lay.initial(),
        kind=i64(kind), rate_slot=i64(rslot), rate_a=f64(ra), rate_b=f64(rb),
        pred_ptr=i64(pred_ptr), pred_slot=i64(pslot), pred_op=i64(pop), pred_val=f64(pval),
        case_ptr=i64(case_ptr), case_prob=f64(cprob), prog_base=i64(prog_base), prog_ptr=i64(prog_ptr),
        op_code=i64(code), op_a=i64(oa), op_b=i64(ob), op_val=f64(oval), op_tptr=i64(tptr), tgt=i64(tgt),
        aff_ptr=i64(aff_ptr), aff=i64(aff), tok_ptr=i64(tok_ptr), tok=i64(tok),
    )


# -- indexed binary heap keyed by (sched[a], a) --------------------------------

@njit(cache=True, nogil=True)
def _less(sched, a, b):
    return sched[a] < sched[b] or (sched[a] == sched[b] and a < b)


@njit(cache=True, nogil=True)
def _sift_up(heap, hpos, sched, i):
    a = heap[i]
    while i > 0:
        parent = (i - 1) >> 1
        b = heap[parent]
        if _less(sched, a, b):
            heap[i] = b
            hpos[b] = i
            i = parent
        else:
            break
    heap[i] = a
    hpos[a] = i


@njit(cache=True, nogil=True)
def _sift_down(heap, hpos, sched, i, size):
    a = heap[i]
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and _less(sched, heap[c + 1], heap[c]):
            c += 1
        b = heap[c]
        if _less(sched, b, a):
            heap[i] = b
            hpos[b] = i
            i = c
        else:
            break
    heap[i] = a
    hpos[a] = i


@njit(cache=True, nogil=True)
def _heap_remove(heap, hpos, sched, a, size):
    i = hpos[a]
    size -= 1
    hpos[a] = -1
    if i != size:
        last = heap[size]
        heap[i] = last
        hpos[last] = i
        _sift_down(heap, hpos, sched, i, size)
        _sift_up(heap, hpos, sched, hpos[last])
    return size


@njit(cache=True, nogil=True)
def _heap_set(heap, hpos, sched, a, size):
    """Insert ``a`` or restore heap order after ``sched[a]`` changed."""
    if hpos[a] < 0:
        heap[size] = a
        hpos[a] = size
        size += 1
        _sift_up(heap, hpos, sched, size - 1)
    else:
        i = hpos[a]
        _sift_up(heap, hpos, sched, i)
        _sift_down(heap, hpos, sched, hpos[a], size)
    return size


# -- event loop --------------------------------------------------------------

@njit(cache=True, nogil=True)
def _enabled(a, m, pred_ptr, pred_slot, pred_op, pred_val):
    for k in range(pred_ptr[a], pred_ptr[a + 1]):
        x = m[pred_slot[k]]
        v = pred_val[k]
        op = pred_op[k]
        if op == 0:
            ok = x >= v
        elif op == 1:
            ok = x > v
        elif op == 2:
            ok = x <= v
        elif op == 3:
            ok = x < v
        elif op == 4:
            ok = x == v
        else:
            ok = x != v
        if not ok:
            return False
    return True


@njit(cache=True, nogil=True)
def _run_program(p, m, prog_ptr, op_code, op_a, op_b, op_val, op_tptr, tgt):
    for k in range(prog_ptr[p], prog_ptr[p + 1]):
        c = op_code[k]
        if c == 0:
            m[op_a[k]] += op_val[k]
        elif c == 1:
            m[op_a[k]] = op_val[k]
        elif c == 2:
            m[op_a[k]] = m[op_b[k]]
        else:
            src = op_a[k]
            amount = m[src]
            alive = 0
            first = -1
            for j in range(op_tptr[k], op_tptr[k + 1]):
                if m[tgt[j]] > 0:
                    alive += 1
                    if first < 0:
                        first = tgt[j]
            if alive > 0:
                share = math.floor(amount / alive)
                rem = amount - share * alive
                for j in range(op_tptr[k], op_tptr[k + 1]):
                    if m[tgt[j]] > 0:
                        m[tgt[j]] += share
                m[first] += rem
            else:
                m[op_b[k]] += amount
            m[src] = 0.0


@njit(cache=True, nogil=True)
def _evaluate(b, now, m, sched, heap, hpos, size, inst_on, kind, rate_slot, rate_a, rate_b,
              pred_ptr, pred_slot, pred_op, pred_val):
    """Re-evaluate one activity; returns (ok, heap size)."""
    en = _enabled(b, m, pred_ptr, pred_slot, pred_op, pred_val)
    k = kind[b]
    if k == _INST:
        inst_on[b] = en
    elif not en:
        if hpos[b] >= 0:
            sched[b] = np.inf
            size = _heap_remove(heap, hpos, sched, b, size)
    elif k == _EXP:
        rs = rate_slot[b]
        rate = rate_a[b] + (rate_b[b] * m[rs] if rs >= 0 else 0.0)
        if not (rate > 0.0) or not np.isfinite(rate):
            return False, size
        sched[b] = now + (-math.log(1.0 - np.random.random())) / rate
        size = _heap_set(heap, hpos, sched, b, size)
    elif hpos[b] < 0:
        sched[b] = now + rate_a[b]
        size = _heap_set(heap, hpos, sched, b, size)
    return True, size


@njit(cache=True, nogil=True)
def _choose_case(a, case_ptr, case_prob):
    c0 = case_ptr[a]
    nc = case_ptr[a + 1] - c0
    if nc == 1:
        return 0
    u = np.random.random()
    acc = 0.0
    for c in range(nc):
        acc += case_prob[c0 + c]
        if u < acc:
            return c
    last = 0
    for c in range(nc):
        if case_prob[c0 + c] > 0:
            last = c
    return last


@njit(cache=True, nogil=True)
def run_one(seed, stop_time, m0, record, max_events,
            kind, rate_slot, rate_a, rate_b, pred_ptr, pred_slot, pred_op, pred_val, case_ptr, case_prob,
            prog_base, prog_ptr, op_code, op_a, op_b, op_val, op_tptr, tgt, aff_ptr, aff, tok_ptr, tok):
    """One trajectory. Returns (status, detail, marking, n_events, last_time, ev_t, ev_a, ev_c)."""
    np.random.seed(seed)
    m = m0.copy()
    n_act = kind.shape[0]
    sched = np.full(n_act, np.inf)
    heap = np.empty(n_act, dtype=np.int64)
    hpos = np.full(n_act, -1, dtype=np.int64)
    size = 0
    inst_on = np.zeros(n_act, dtype=np.bool_)
    ev_t = np.empty(64 if record else 0)
    ev_a = np.empty(ev_t.shape[0], dtype=np.int64)
    ev_c = np.empty(ev_t.shape[0], dtype=np.int64)
    now = 0.0
    n_events = 0
    last = 0.0
    status = OK
    detail = -1

    for b in range(n_act):
        ok, size = _evaluate(b, now, m, sched, heap, hpos, size, inst_on, kind, rate_slot, rate_a, rate_b,
                             pred_ptr, pred_slot, pred_op, pred_val)
        if not ok:
            status = BAD_RATE
            detail = b
            break

    count = 0
    while status == OK:
        a = -1
        for b in range(n_act):
            if inst_on[b]:
                a = b
                break
        if a >= 0:
            inst_on[a] = False
            count += 1
            if count > MAX_INSTANTANEOUS:
                status = INST_LOOP
                detail = a
                break
        else:
            count = 0
            if n_events >= max_events or size == 0:
                break
            a = heap[0]
            if sched[a] >= stop_time:
                break
            now = sched[a]
            sched[a] = np.inf
            size = _heap_remove(heap, hpos, sched, a, size)

        case = _choose_case(a, case_ptr, case_prob)
        base = prog_base[a]
        _run_program(base, m, prog_ptr, op_code, op_a, op_b, op_val, op_tptr, tgt)
        _run_program(base + 1 + case, m, prog_ptr, op_code, op_a, op_b, op_val, op_tptr, tgt)
        idx = case_ptr[a] + case
        for j in range(tok_ptr[idx], tok_ptr[idx + 1]):
            if m[tok[j]] < 0:
                status = NEG_TOKENS
                detail = tok[j]
        if status != OK:
            break
        if record:
            if n_events >= ev_t.shape[0]:
                ev_t = np.concatenate((ev_t, np.empty(ev_t.shape[0])))
                ev_a = np.concatenate((ev_a, np.empty(ev_a.shape[0], dtype=np.int64)))
                ev_c = np.concatenate((ev_c, np.empty(ev_c.shape[0], dtype=np.int64)))
            ev_t[n_events] = now
            ev_a[n_events] = a
            ev_c[n_events] = case
        n_events += 1
        last = now
        for j in range(aff_ptr[idx], aff_ptr[idx + 1]):
            b = aff[j]
            ok, size = _evaluate(b, now, m, sched, heap, hpos, size, inst_on, kind, rate_slot, rate_a, rate_b,
                                 pred_ptr, pred_slot, pred_op, pred_val)
            if not ok:
                status = BAD_RATE
                detail = b
                break
    k = n_events if record else 0
    return status, detail, m, n_events, last, ev_t[:k], ev_a[:k], ev_c[:k]
