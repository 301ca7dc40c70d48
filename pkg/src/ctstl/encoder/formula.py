"""Big-M encoding of a grounded formula.

Literals are either a variable index or a Python bool; constants fold
through the boolean connectives so trivially decided subformulas emit
nothing.
"""
from ..stl import (Always, And, Eventually, FalseF, Not, Or, Predicate, TrueF, Until,
                   is_temporal_free, to_nnf)
from .cbf import encode_cbf_window, encode_ecbf


class FormulaEncoder:
    def __init__(self, enc, grounded):
        self.enc = enc
        self.model = enc.model
        self.g = grounded
        self.memo = {}
        self.window_memo = {}
        self.count = 0

    def _binary(self, kind, i):
        self.count += 1
        b = self.model.add_binary(f"z{self.count}_{kind}_t{i}", priority=1)
        self.enc.formula_binaries.append(b)
        return b

    # -- connectives on literals
    def and_(self, lits, i, kind="and"):
        if any(l is False for l in lits):
            return False
        lits = list(dict.fromkeys(l for l in lits if l is not True))
        if not lits:
            return True
        if len(lits) == 1:
            return lits[0]
        z = self._binary(kind, i)
        for l in lits:
            self.model.add_row({z: 1.0, l: -1.0}, "<=", 0.0)
        row = {z: 1.0}
        for l in lits:
            row[l] = row.get(l, 0.0) - 1.0
        self.model.add_row(row, ">=", 1.0 - len(lits))
        return z

    def or_(self, lits, i, kind="or"):
        if any(l is True for l in lits):
            return True
        lits = list(dict.fromkeys(l for l in lits if l is not False))
        if not lits:
            return False
        if len(lits) == 1:
            return lits[0]
        z = self._binary(kind, i)
        for l in lits:
            self.model.add_row({z: 1.0, l: -1.0}, ">=", 0.0)
        row = {z: 1.0}
        for l in lits:
            row[l] = row.get(l, 0.0) - 1.0
        self.model.add_row(row, "<=", 0.0)
        return z

    def not_(self, lit, i):
        if isinstance(lit, bool):
            return not lit
        z = self._binary("not", i)
        self.model.add_row({z: 1.0, lit: 1.0}, "=", 1.0)
        return z

    # -- node literals
    def literal(self, f, i):
        key = (f, i)
        if key not in self.memo:
            self.memo[key] = self._literal(f, i)
        return self.memo[key]

    def _literal(self, f, i):
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, Predicate):
            return self.predicate(f, i)
        if isinstance(f, Not):
            return self.not_(self.literal(f.child, i), i)
        if isinstance(f, And):
            return self.and_([self.literal(c, i) for c in f.children], i)
        if isinstance(f, Or):
            return self.or_([self.literal(c, i) for c in f.children], i)
        nodes = self.g.nodes_for(f, i)
        if isinstance(f, Eventually):
            return self.or_([self.literal(f.child, j) for j in nodes], i, "F")
        if isinstance(f, Always):
            lits = [self.literal(f.child, j) for j in nodes]
            if self.enc.config.always_mode != "none" and is_temporal_free(f.child):
                lits += [self.window_literal(f.child, k) for k in self.g.windows_for(f, i)]
            return self.and_(lits, i, "G")
        if isinstance(f, Until):
            opts = []
            for j in nodes:
                left = [self.literal(f.left, k) for k in range(i, j + 1)]
                opts.append(self.and_([self.literal(f.right, j)] + left, i, "Uj"))
            return self.or_(opts, i, "U")
        raise TypeError(f"not a formula: {f!r}")

    def predicate(self, p, i):
        enc = self.enc
        row = p.vec
        lo, hi = enc.part_range("x", i, row)
        lo, hi = lo + p.offset, hi + p.offset
        if lo >= 0:
            return True
        if hi < 0:
            return False
        z = self._binary("p", i)
        M = enc.big_m(lo, hi)
        xv = enc.x[i]
        up = {v: c for v, c in zip(xv, row) if c}
        up[z] = -M
        # y <= M z and -y <= M (1 - z)
        self.model.add_bigm_row(up, "<=", -p.offset, z, M, 1, f"pu_{z}")
        dn = {v: -c for v, c in zip(xv, row) if c}
        dn[z] = M
        self.model.add_bigm_row(dn, "<=", M + p.offset, z, M, 0, f"pl_{z}")
        return z

    # -- whole-window literals for temporal-free bodies of G
    def window_literal(self, f, k):
        key = (f, k)
        if key not in self.window_memo:
            self.window_memo[key] = self._window(f, k)
        return self.window_memo[key]

    def _window(self, f, k):
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, And):
            return self.and_([self.window_literal(c, k) for c in f.children], k, "wand")
        if isinstance(f, Or):
            return self.or_([self.window_literal(c, k) for c in f.children], k, "wor")
        if isinstance(f, Not):
            return self.window_literal(to_nnf(f, self.enc.config.eps_strict), k)
        if isinstance(f, Predicate):
            enc = self.enc
            gate = self._binary("win", k)
            label = f"g{gate}"
            if enc.config.always_mode == "ecbf":
                spec = enc.ecbf_for(f)
                encode_ecbf(enc, spec, k, gate, label)
            else:
                encode_cbf_window(enc, enc.direct_for(f), k, gate, "direct", label)
            return gate
        raise TypeError(f"window literal for temporal operator {f!r}")


def encode_formula(enc, grounded):
    """Encode ``grounded`` into ``enc.model`` and return the root literal."""
    fe = FormulaEncoder(enc, grounded)
    return fe.literal(grounded.formula, 0), fe

