"""Leading-term bookkeeping for behaviour as ``|x| -> infinity``.

A coefficient functional is declared to behave like ``sign * |x|**exponent``
for large ``|x|``. Sums of such terms are compared by their largest
exponent; a tie between opposite signs cannot be decided without
coefficients and yields ``None``.
"""

from dataclasses import dataclass
import math

BOUNDED = "bounded"
UNBOUNDED = "unbounded"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Growth:
    sign: int
    exponent: float = 0.0

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"growth sign must be -1, 0 or 1, got {self.sign}")
        if not math.isfinite(self.exponent):
            raise ValueError("growth exponent must be finite")

    @classmethod
    def parse(cls, text):
        """``"+ 2"``, ``"-1 4.5"``, ``"0"`` -> Growth."""
        parts = str(text).replace(",", " ").split()
        if not parts or len(parts) > 2:
            raise ValueError(f"cannot parse growth {text!r}; expected 'SIGN [EXPONENT]'")
        s = parts[0]
        sign = {"+": 1, "+1": 1, "1": 1, "-": -1, "-1": -1, "0": 0}.get(s)
        if sign is None:
            raise ValueError(f"growth sign must be one of + - 0, got {s!r}")
        exponent = float(parts[1]) if len(parts) == 2 else 0.0
        return cls(sign, exponent)

    def __str__(self):
        return f"{'+' if self.sign > 0 else '-' if self.sign < 0 else '0'} {self.exponent:g}"

    def times(self, sign=1, shift=0.0):
        return Growth(self.sign * sign, self.exponent + shift)


ZERO = Growth(0, 0.0)


def leading_limit(terms):
    """Limit of a sum of declared terms.

    Returns ``+1`` (-> +inf), ``-1`` (-> -inf), ``0`` (bounded) or ``None``
    (undecidable tie, or a missing term).
    """
    if any(t is None for t in terms):
        return None
    live = [t for t in terms if t.sign != 0]
    if not live:
        return 0
    top = max(t.exponent for t in live)
    if top <= 0:
        return 0
    signs = {t.sign for t in live if t.exponent == top}
    if len(signs) > 1:
        return None
    return signs.pop()


def bounded_above(terms):
    lim = leading_limit(terms)
    if lim is None:
        return UNKNOWN
    return UNBOUNDED if lim > 0 else BOUNDED


def bounded_below(terms):
    lim = leading_limit(terms)
    if lim is None:
        return UNKNOWN
    return UNBOUNDED if lim < 0 else BOUNDED


def blows_up(terms):
    """True iff the sum provably tends to ``+inf``."""
    return leading_limit(terms) == 1
