"""Exact arithmetic for polynomial differential operators.

The base ring is the n-th Weyl algebra over Q.  A ring context may extend it
by an extra coordinate pair (t, dt), a central parameter s, further central
parameters (used by graded eliminations), and a homogenization variable h
subject to dx*x = x*dx + h^2.

An operator is kept in normal order x^a t^p dx^b dt^q s^e h^m as a sparse map
from exponent tuples to nonzero rationals, so operator equality is equality
of the stored maps.  Products are expanded with the closed Leibniz formula

    dx^b x^a = sum_nu  C(b,nu) C(a,nu) nu!  x^(a-nu) dx^(b-nu) (h^2nu)

applied slotwise to every noncommuting pair.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction

__all__ = [
    "RingContext",
    "WeylOperator",
    "Poly",
    "RingError",
    "ParseError",
    "parse_operator",
    "parse_poly",
    "term_product_into",
    "theta_to_s",
    "fourier_t",
    "shift_partials_delta",
    "shift_partials_localization",
    "substitute_s",
    "s_affine",
    "convert",
    "homogenize",
    "dehomogenize",
]


class RingError(ValueError):
    pass


class ParseError(ValueError):
    pass


_RESERVED = {"t", "dt", "s", "h"}


class RingContext:
    """Variable layout of one Weyl-algebra extension.

    Slot order is fixed: x variables, t, the matching derivations, dt, s,
    central extras, h.  Monomials are exponent tuples over that layout.
    """

    __slots__ = (
        "xnames", "has_t", "has_s", "aux", "has_h",
        "names", "width", "index",
        "x_slots", "d_slots", "t_slot", "dt_slot", "s_slot", "aux_slots",
        "h_slot", "pairs", "zero_mono", "_sig",
    )

    def __init__(self, xnames, has_t=False, has_s=False, aux=(), has_h=False):
        xnames = tuple(xnames)
        aux = tuple(aux)
        if not xnames:
            raise RingError("at least one coordinate variable is required")
        for nm in xnames + aux:
            if not nm.isidentifier() or nm in _RESERVED or nm.startswith("d"):
                raise RingError("unusable variable name %r" % (nm,))
        if len(set(xnames) | set(aux)) != len(xnames) + len(aux):
            raise RingError("variable names must be distinct")
        self.xnames = xnames
        self.has_t = bool(has_t)
        self.has_s = bool(has_s)
        self.aux = aux
        self.has_h = bool(has_h)

        names = list(xnames)
        if self.has_t:
            names.append("t")
        names.extend("d" + nm for nm in xnames)
        if self.has_t:
            names.append("dt")
        if self.has_s:
            names.append("s")
        names.extend(aux)
        if self.has_h:
            names.append("h")
        self.names = tuple(names)
        self.width = len(names)
        self.index = {nm: i for i, nm in enumerate(names)}

        n = len(xnames)
        self.x_slots = tuple(range(n))
        off = n + (1 if self.has_t else 0)
        self.d_slots = tuple(range(off, off + n))
        self.t_slot = n if self.has_t else None
        self.dt_slot = off + n if self.has_t else None
        pos = off + n + (1 if self.has_t else 0)
        self.s_slot = pos if self.has_s else None
        if self.has_s:
            pos += 1
        self.aux_slots = tuple(range(pos, pos + len(aux)))
        pos += len(aux)
        self.h_slot = pos if self.has_h else None

        pairs = [(self.x_slots[i], self.d_slots[i]) for i in range(n)]
        if self.has_t:
            pairs.append((self.t_slot, self.dt_slot))
        self.pairs = tuple(pairs)
        self.zero_mono = (0,) * self.width
        self._sig = (xnames, self.has_t, self.has_s, aux, self.has_h)

    @property
    def n(self):
        return len(self.xnames)

    def __eq__(self, other):
        return isinstance(other, RingContext) and self._sig == other._sig

    def __hash__(self):
        return hash(self._sig)

    def __repr__(self):
        return "RingContext(%r, t=%r, s=%r, aux=%r, h=%r)" % self._sig

    def extend(self, t=None, s=None, aux=None, h=None):
        return RingContext(
            self.xnames,
            self.has_t if t is None else t,
            self.has_s if s is None else s,
            self.aux if aux is None else tuple(aux),
            self.has_h if h is None else h,
        )

    def mono(self, **exps):
        m = [0] * self.width
        for nm, e in exps.items():
            if nm not in self.index:
                raise RingError("no variable %r in ring" % (nm,))
            m[self.index[nm]] = e
        return tuple(m)

    def var(self, name, exp=1):
        if name not in self.index:
            raise RingError("no variable %r in ring" % (name,))
        m = [0] * self.width
        m[self.index[name]] = exp
        return WeylOperator(self, {tuple(m): Fraction(1)})

    def const(self, c):
        c = Fraction(c)
        if c == 0:
            return WeylOperator(self, {})
        return WeylOperator(self, {self.zero_mono: c})

    def zero(self):
        return WeylOperator(self, {})

    def one(self):
        return self.const(1)

    def mono_str(self, mono):
        parts = []
        for i, e in enumerate(mono):
            if e == 1:
                parts.append(self.names[i])
            elif e:
                parts.append("%s^%d" % (self.names[i], e))
        return "*".join(parts) if parts else "1"

    def printing_key(self, mono):
        # degrevlex over the declared layout; h counts toward degree and
        # sorts last, which keeps homogenized output readable.
        return (sum(mono), tuple(-e for e in reversed(mono)))


def term_product_into(ring, out, m1, c1, m2, c2):
    """Accumulate (c1*m1) o (c2*m2) into the dict `out` (normal ordered)."""
    active = []
    for xp, dp in ring.pairs:
        b1 = m1[dp]
        a2 = m2[xp]
        if b1 and a2:
            active.append((xp, dp, b1, a2))
    base = [a + b for a, b in zip(m1, m2)]
    c = c1 * c2
    if not active:
        k = tuple(base)
        v = out.get(k, 0) + c
        if v:
            out[k] = v
        else:
            out.pop(k, None)
        return
    hslot = ring.h_slot
    # iterate over contraction multi-indices, one slot at a time
    stack = [(0, tuple(base), c)]
    while stack:
        i, exps, coef = stack.pop()
        if i == len(active):
            v = out.get(exps, 0) + coef
            if v:
                out[exps] = v
            else:
                out.pop(exps, None)
            continue
        xp, dp, b1, a2 = active[i]
        top = min(b1, a2)
        cur = list(exps)
        fac = coef
        stack.append((i + 1, exps, coef))
        for nu in range(1, top + 1):
            cur[xp] -= 1
            cur[dp] -= 1
            if hslot is not None:
                cur[hslot] += 2
            # ratio of C(b1,nu)C(a2,nu)nu! between nu and nu-1
            fac = fac * (b1 - nu + 1) * (a2 - nu + 1) // math.gcd(nu, nu) // 1
            fac = fac // 1 if isinstance(fac, int) else fac
            fac = fac / nu * nu  # keep exact; see below
            stack.append((i + 1, tuple(cur), fac))
    return


def _dict_iadd(out, key, val):
    v = out.get(key, 0) + val
    if v:
        out[key] = v
    else:
        out.pop(key, None)


class WeylOperator:
    """Normally ordered operator: sparse exponent-tuple -> Fraction map."""

    __slots__ = ("ring", "terms")

    def __init__(self, ring, terms):
        self.ring = ring
        self.terms = {m: c for m, c in terms.items() if c}

    # -- constructors -------------------------------------------------

    @staticmethod
    def from_dict(ring, terms):
        return WeylOperator(ring, {m: Fraction(c) for m, c in terms.items()})

    # -- basic structure ----------------------------------------------

    def is_zero(self):
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = self.ring.const(other)
        return (
            isinstance(other, WeylOperator)
            and self.ring == other.ring
            and self.terms == other.terms
        )

    __hash__ = None

    def __len__(self):
        return len(self.terms)

    def total_degree(self):
        """Bernstein degree: all exponents except s and central extras."""
        skip = set(self.ring.aux_slots)
        if self.ring.s_slot is not None:
            skip.add(self.ring.s_slot)
        best = 0
        for m in self.terms:
            d = sum(e for i, e in enumerate(m) if i not in skip)
            if d > best:
                best = d
        return best

    def weight_degree(self, row):
        """Largest row-weight over the support; None for the zero operator."""
        if not self.terms:
            return None
        return max(sum(w * e for w, e in zip(row, m)) for m in self.terms)

    def initial_form(self, row):
        if not self.terms:
            return self
        top = self.weight_degree(row)
        kept = {
            m: c
            for m, c in self.terms.items()
            if sum(w * e for w, e in zip(row, m)) == top
        }
        return WeylOperator(self.ring, kept)

    def coefficient(self, mono):
        return self.terms.get(mono, Fraction(0))

    def support_slots(self):
        used = set()
        for m in self.terms:
            for i, e in enumerate(m):
                if e:
                    used.add(i)
        return used

    # -- arithmetic ----------------------------------------------------

    def _check(self, other):
        if self.ring != other.ring:
            raise RingError("operands live in different rings")

    def __add__(self, other):
        if isinstance(other, (int, Fraction)):
            other = self.ring.const(other)
        self._check(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            _dict_iadd(out, m, c)
        return WeylOperator(self.ring, out)

    __radd__ = __add__

    def __neg__(self):
        return WeylOperator(self.ring, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, Fraction)):
            other = self.ring.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            if other == 0:
                return self.ring.zero()
            return WeylOperator(
                self.ring, {m: c * other for m, c in self.terms.items()}
            )
        self._check(other)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                term_product_into(self.ring, out, m1, c1, m2, c2)
        return WeylOperator(self.ring, out)

    def __rmul__(self, other):
        if isinstance(other, (int, Fraction)):
            return self.__mul__(other)
        return NotImplemented

    def __pow__(self, k):
        if k < 0:
            raise RingError("negative operator powers are undefined")
        out = self.ring.one()
        for _ in range(k):
            out = out * self
        return out

    # -- actions and maps ----------------------------------------------

    def apply_to_poly(self, poly):
        """Apply to a commutative polynomial in the x's (and s)."""
        r = self.ring
        if any(
            m[r.t_slot] or m[r.dt_slot]
            for m in self.terms
            if r.has_t
        ) or (r.has_h and any(m[r.h_slot] for m in self.terms)):
            raise RingError("operator must be free of t, dt and h")
        out = Poly.zero(r.xnames)
        for m, c in self.terms.items():
            g = poly
            for i, dsl in enumerate(r.d_slots):
                for _ in range(m[dsl]):
                    g = g.diff(i)
                    if g.is_zero():
                        break
            if g.is_zero():
                continue
            sexp = m[r.s_slot] if r.has_s else 0
            xmono = tuple(m[sl] for sl in r.x_slots) + (sexp,)
            out = out + g.term_mul(xmono, c)
        return out

    # -- printing --------------------------------------------------------

    def sorted_terms(self):
        key = self.ring.printing_key
        return sorted(self.terms.items(), key=lambda mc: key(mc[0]), reverse=True)

    def __str__(self):
        if not self.terms:
            return "0"
        bits = []
        for m, c in self.sorted_terms():
            mono = self.ring.mono_str(m)
            if mono == "1":
                body = _frac_str(abs(c))
            elif abs(c) == 1:
                body = mono
            else:
                body = "%s*%s" % (_frac_str(abs(c)), mono)
            if not bits:
                bits.append(body if c > 0 else "-" + body)
            else:
                bits.append((" + " if c > 0 else " - ") + body)
        return "".join(bits)

    def __repr__(self):
        return "<WeylOperator %s>" % (self,)


def _frac_str(c):
    return str(c)


# ---------------------------------------------------------------------------
# commutative polynomials in the x's and s


class Poly:
    """Sparse polynomial in the coordinate variables plus s (always last)."""

    __slots__ = ("xnames", "terms")

    def __init__(self, xnames, terms):
        self.xnames = tuple(xnames)
        self.terms = {m: c for m, c in terms.items() if c}

    @staticmethod
    def zero(xnames):
        return Poly(xnames, {})

    @staticmethod
    def const(xnames, c):
        c = Fraction(c)
        w = len(xnames) + 1
        return Poly(xnames, {(0,) * w: c} if c else {})

    @staticmethod
    def variable(xnames, name):
        xnames = tuple(xnames)
        w = len(xnames) + 1
        if name == "s":
            i = w - 1
        else:
            i = xnames.index(name)
        m = [0] * w
        m[i] = 1
        return Poly(xnames, {tuple(m): Fraction(1)})

    @property
    def width(self):
        return len(self.xnames) + 1

    def is_zero(self):
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.xnames, other)
        return (
            isinstance(other, Poly)
            and self.xnames == other.xnames
            and self.terms == other.terms
        )

    __hash__ = None

    def uses_s(self):
        return any(m[-1] for m in self.terms)

    def total_degree(self):
        return max((sum(m) for m in self.terms), default=0)

    def __add__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.xnames, other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            _dict_iadd(out, m, c)
        return Poly(self.xnames, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.xnames, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.xnames, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return Poly(self.xnames, {m: c * other for m, c in self.terms.items()})
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                k = tuple(a + b for a, b in zip(m1, m2))
                _dict_iadd(out, k, c1 * c2)
        return Poly(self.xnames, out)

    __rmul__ = __mul__

    def __pow__(self, k):
        out = Poly.const(self.xnames, 1)
        for _ in range(k):
            out = out * self
        return out

    def term_mul(self, mono, coeff):
        out = {}
        for m, c in self.terms.items():
            k = tuple(a + b for a, b in zip(m, mono))
            out[k] = c * coeff
        return Poly(self.xnames, out)

    def diff(self, i):
        out = {}
        for m, c in self.terms.items():
            if m[i]:
                k = list(m)
                k[i] -= 1
                _dict_iadd(out, tuple(k), c * m[i])
        return Poly(self.xnames, out)

    def subs_s(self, value):
        value = Fraction(value)
        out = {}
        for m, c in self.terms.items():
            k = m[:-1] + (0,)
            _dict_iadd(out, k, c * value ** m[-1])
        return Poly(self.xnames, out)

    def shift_s(self, delta):
        """s -> s + delta."""
        delta = Fraction(delta)
        out = {}
        for m, c in self.terms.items():
            e = m[-1]
            for k in range(e + 1):
                key = m[:-1] + (k,)
                _dict_iadd(out, key, c * math.comb(e, k) * delta ** (e - k))
        return Poly(self.xnames, out)

    def _lead(self):
        return max(self.terms, key=lambda m: (sum(m), tuple(-e for e in reversed(m))))

    def exact_div(self, divisor):
        """Return self/divisor if the division is exact, else None."""
        if divisor.is_zero():
            raise ZeroDivisionError
        rem = Poly(self.xnames, dict(self.terms))
        q = {}
        dl = divisor._lead()
        dc = divisor.terms[dl]
        while rem.terms:
            rl = rem._lead()
            delta = tuple(a - b for a, b in zip(rl, dl))
            if any(e < 0 for e in delta):
                return None
            qc = rem.terms[rl] / dc
            q[delta] = qc
            rem = rem - divisor.term_mul(delta, qc)
        return Poly(self.xnames, q)

    def to_operator(self, ring):
        if tuple(ring.xnames) != self.xnames:
            raise RingError("polynomial variables do not match ring")
        out = {}
        for m, c in self.terms.items():
            if m[-1] and not ring.has_s:
                raise RingError("ring has no s but polynomial uses it")
            mono = [0] * ring.width
            for i, sl in enumerate(ring.x_slots):
                mono[sl] = m[i]
            if m[-1]:
                mono[ring.s_slot] = m[-1]
            out[tuple(mono)] = c
        return WeylOperator(ring, out)

    def evaluate(self, xvals, sval=0):
        tot = Fraction(0)
        vals = [Fraction(v) for v in xvals] + [Fraction(sval)]
        for m, c in self.terms.items():
            term = c
            for v, e in zip(vals, m):
                term *= v ** e
            tot += term
        return tot

    def __str__(self):
        if not self.terms:
            return "0"
        names = self.xnames + ("s",)
        bits = []
        for m, c in sorted(
            self.terms.items(),
            key=lambda mc: (sum(mc[0]), tuple(-e for e in reversed(mc[0]))),
            reverse=True,
        ):
            parts = []
            for i, e in enumerate(m):
                if e == 1:
                    parts.append(names[i])
                elif e:
                    parts.append("%s^%d" % (names[i], e))
            mono = "*".join(parts) if parts else "1"
            if mono == "1":
                body = str(abs(c))
            elif abs(c) == 1:
                body = mono
            else:
                body = "%s*%s" % (abs(c), mono)
            if not bits:
                bits.append(body if c > 0 else "-" + body)
            else:
                bits.append((" + " if c > 0 else " - ") + body)
        return "".join(bits)

    def __repr__(self):
        return "<Poly %s>" % (self,)


# ---------------------------------------------------------------------------
# parsing


_TOKEN = re.compile(r"\d+|[A-Za-z_][A-Za-z_0-9]*|[()^*/+\-]|\s+|.")


def _tokenize(text):
    toks = []
    for m in _TOKEN.finditer(text):
        tok = m.group()
        if tok.isspace():
            continue
        if not (tok.isdigit() or tok.isidentifier() or tok in "()^*/+-"):
            raise ParseError("unexpected character %r" % (tok,))
        toks.append(tok)
    return toks


class _Parser:
    def __init__(self, ring, toks):
        self.ring = ring
        self.toks = toks
        self.pos = 0

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input")
        self.pos += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.factor()
        while self.peek() == "*":
            self.take()
            node = node * self.factor()
        return node

    def factor(self):
        if self.peek() == "-":
            self.take()
            return -self.factor()
        return self.power()

    def power(self):
        base = self.atom()
        while self.peek() == "^":
            self.take()
            tok = self.take()
            if not tok.isdigit():
                raise ParseError("exponent must be a nonnegative integer")
            base = base ** int(tok)
        return base

    def atom(self):
        tok = self.take()
        if tok == "(":
            node = self.expr()
            if self.take() != ")":
                raise ParseError("missing closing parenthesis")
            return node
        if tok.isdigit():
            num = int(tok)
            if self.peek() == "/":
                save = self.pos
                self.take()
                den = self.peek()
                if den is not None and den.isdigit():
                    self.take()
                    return self.ring.const(Fraction(num, int(den)))
                self.pos = save
            return self.ring.const(num)
        if tok.isidentifier():
            if tok not in self.ring.index:
                raise ParseError("unknown variable %r" % (tok,))
            return self.ring.var(tok)
        raise ParseError("unexpected token %r" % (tok,))


def parse_operator(ring, text):
    """Parse the operator syntax: names, d-prefixed derivations, * ^ + - ()."""
    toks = _tokenize(text)
    if not toks:
        raise ParseError("empty operator expression")
    p = _Parser(ring, toks)
    node = p.expr()
    if p.peek() is not None:
        raise ParseError("trailing input %r" % (p.peek(),))
    return node


def parse_poly(ring, text):
    op = parse_operator(ring, text)
    return operator_to_poly(op)


def operator_to_poly(op):
    r = op.ring
    bad = list(r.d_slots)
    if r.has_t:
        bad += [r.t_slot, r.dt_slot]
    if r.has_h:
        bad.append(r.h_slot)
    bad += list(r.aux_slots)
    out = {}
    for m, c in op.terms.items():
        if any(m[i] for i in bad):
            raise RingError("expression is not a polynomial in the x's and s")
        key = tuple(m[sl] for sl in r.x_slots) + (m[r.s_slot] if r.has_s else 0,)
        out[key] = c
    return Poly(r.xnames, out)


# ---------------------------------------------------------------------------
# ring maps


def convert(op, ring):
    """Rewrite an operator in another layout, matching variables by name."""
    if op.ring == ring:
        return op
    src = op.ring
    out = {}
    for m, c in op.terms.items():
        mono = [0] * ring.width
        for i, e in enumerate(m):
            if not e:
                continue
            nm = src.names[i]
            if nm not in ring.index:
                raise RingError("variable %r missing from target ring" % (nm,))
            mono[ring.index[nm]] = e
        out[tuple(mono)] = c
    return WeylOperator(ring, out)


def homogenize(op):
    """Pad every term with h up to the top Bernstein degree."""
    r = op.ring
    if not r.has_h:
        raise RingError("ring has no homogenization variable")
    top = op.total_degree()
    out = {}
    skip = set(r.aux_slots)
    if r.s_slot is not None:
        skip.add(r.s_slot)
    for m, c in op.terms.items():
        d = sum(e for i, e in enumerate(m) if i not in skip)
        mono = list(m)
        mono[r.h_slot] += top - d
        out[tuple(mono)] = c
    return WeylOperator(r, out)


def dehomogenize(op, target=None):
    """Set h to 1 (merging terms); optionally convert into `target`."""
    r = op.ring
    if not r.has_h:
        return op if target is None else convert(op, target)
    out = {}
    for m, c in op.terms.items():
        mono = list(m)
        mono[r.h_slot] = 0
        _dict_iadd(out, tuple(mono), c)
    res = WeylOperator(r, out)
    return res if target is None else convert(res, target)


def substitute_s(op, value):
    """Evaluate the central parameter: s -> value."""
    r = op.ring
    if not r.has_s:
        return op
    value = Fraction(value)
    out = {}
    for m, c in op.terms.items():
        e = m[r.s_slot]
        mono = list(m)
        mono[r.s_slot] = 0
        _dict_iadd(out, tuple(mono), c * value ** e)
    return WeylOperator(r, out)


def s_affine(op, a, b):
    """Substitute s -> a*s + b (a, b rational)."""
    r = op.ring
    if not r.has_s:
        return op
    a = Fraction(a)
    b = Fraction(b)
    out = {}
    for m, c in op.terms.items():
        e = m[r.s_slot]
        for k in range(e + 1):
            mono = list(m)
            mono[r.s_slot] = k
            _dict_iadd(out, tuple(mono), c * math.comb(e, k) * a ** k * b ** (e - k))
    return WeylOperator(r, out)


def fourier_t(op):
    """Algebra map t -> dt, dt -> -t (identity on everything else)."""
    r = op.ring
    if not r.has_t:
        raise RingError("ring has no t")
    t = r.var("t")
    dt = r.var("dt")
    out = r.zero()
    for m, c in op.terms.items():
        a, q = m[r.t_slot], m[r.dt_slot]
        mono = list(m)
        mono[r.t_slot] = mono[r.dt_slot] = 0
        piece = WeylOperator(r, {tuple(mono): c})
        # x^alpha dx^beta commutes with t and dt, so order the two blocks only
        fac = dt ** a * ((-1) ** q) * (t ** q)
        out = out + piece * fac
    return out


_FF_CACHE = {0: (1,)}


def _falling_factorial(a):
    """Coefficients (low to high) of z(z-1)...(z-a+1)."""
    if a not in _FF_CACHE:
        prev = _falling_factorial(a - 1)
        cur = [0] * (a + 1)
        for i, c in enumerate(prev):
            cur[i + 1] += c
            cur[i] -= c * (a - 1)
        _FF_CACHE[a] = tuple(cur)
    return _FF_CACHE[a]


def theta_polynomial(op, target):
    """Rewrite a (t,dt)-weight-zero operator as a polynomial in theta = t*dt.

    The theta powers land in the s slot of `target`.  Raises if some monomial
    has unequal t and dt exponents.
    """
    r = op.ring
    if not r.has_t:
        raise RingError("ring has no t")
    if not target.has_s:
        raise RingError("target ring needs s")
    out = {}
    for m, c in op.terms.items():
        a, q = m[r.t_slot], m[r.dt_slot]
        if a != q:
            raise RingError("monomial of nonzero (t,dt)-weight: %s" % r.mono_str(m))
        base = [0] * target.width
        for i, e in enumerate(m):
            if not e or i in (r.t_slot, r.dt_slot):
                continue
            nm = r.names[i]
            if nm not in target.index:
                raise RingError("variable %r missing from target ring" % (nm,))
            base[target.index[nm]] = e
        for k, fc in enumerate(_falling_factorial(a)):
            if not fc:
                continue
            mono = list(base)
            mono[target.s_slot] += k
            _dict_iadd(out, tuple(mono), c * fc)
    return WeylOperator(target, out)


def theta_to_s(op, target=None):
    """Rewrite a (t,dt)-weight-zero operator through s = -dt*t.

    t*dt becomes -s-1, dt*t becomes -s, and t^k dt^k becomes the falling
    factorial in t*dt rewritten accordingly.
    """
    r = op.ring
    if target is None:
        target = RingContext(r.xnames, has_t=False, has_s=True, aux=())
    theta = theta_polynomial(op, target)
    return s_affine(theta, -1, -1)


def _pure_x_operator(op):
    r = op.ring
    bad = []
    if r.has_t:
        bad += [r.t_slot, r.dt_slot]
    if r.has_s:
        bad.append(r.s_slot)
    if r.has_h:
        bad.append(r.h_slot)
    bad += list(r.aux_slots)
    return not any(m[i] for m in op.terms for i in bad)


def _substitute_partials(op, target, images):
    """Ring map fixing the x's and sending each dx_i to images[i]."""
    r = op.ring
    if not _pure_x_operator(op):
        raise RingError("operator must involve only the x's and their dx's")
    powers = [{0: target.one()} for _ in range(r.n)]

    def img_pow(i, k):
        cache = powers[i]
        if k not in cache:
            cache[k] = img_pow(i, k - 1) * images[i]
        return cache[k]

    out = target.zero()
    for m, c in op.terms.items():
        piece = target.one() * c
        mono = [0] * target.width
        for i, sl in enumerate(r.x_slots):
            mono[target.index[r.xnames[i]]] = m[sl]
        piece = WeylOperator(target, {tuple(mono): Fraction(c)})
        for i, dsl in enumerate(r.d_slots):
            if m[dsl]:
                piece = piece * img_pow(i, m[dsl])
        out = out + piece
    return out


def shift_partials_delta(op, f, target, weight_name=None):
    """dx_i -> dx_i + f_i*dt (with an optional central weight marker).

    With weight_name, each dt picks up one copy of that central variable so
    the images stay homogeneous for the (t,dt)-grading.
    """
    if target is None or not target.has_t:
        raise RingError("target ring needs t")
    dt = target.var("dt")
    mark = target.var(weight_name) if weight_name else target.one()
    images = []
    for i in range(len(f.xnames)):
        fi = f.diff(i).to_operator(target)
        images.append(target.var("d" + f.xnames[i]) + mark * fi * dt)
    return _substitute_partials(op, target, images)


def shift_partials_localization(op, f, target):
    """dx_i -> dx_i - f_i*dt*t^2 (the chart t = 1/f)."""
    if target is None or not target.has_t:
        raise RingError("target ring needs t")
    dtt2 = target.var("dt") * target.var("t") ** 2
    images = []
    for i in range(len(f.xnames)):
        fi = f.diff(i).to_operator(target)
        images.append(target.var("d" + f.xnames[i]) - fi * dtt2)
    return _substitute_partials(op, target, images)
