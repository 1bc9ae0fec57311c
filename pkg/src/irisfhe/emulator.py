"""Plaintext-twin CKKS emulator.

Each ciphertext carries its exact message next to the metadata a real CKKS
ciphertext would have: ring degree, encoding, level, scaling factor and a
worst-case noise bound.  Operations update both and enforce level discipline.

Conventions
-----------
* ``noise_bound_bits`` is log2 of the worst-case absolute error in the scaled
  domain, so the message-domain error is at most 2^(noise_bound_bits - scale_bits).
* Messages may carry leading batch axes.  A value with message shape
  (a, b, slots) stands for a*b ciphertexts sharing the same metadata; counters
  are weighted accordingly.
* With noise injection off, messages are bit-identical to the same arithmetic
  done on plain numpy arrays.  With injection on, every op adds uniform noise
  inside the fresh term of its bound, and plaintexts are really rounded.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import (ConfigError, EncodingMismatch, LevelMismatch, ModulusBudget,
                     ModulusExhausted, NonRealMessage, ProfileMismatch, ScaleMismatch,
                     ShapeMismatch)

NEG_INF = float("-inf")
SCALE_TOL = 1e-9


def log2_sum(*bits: float) -> float:
    """log2 of a sum of powers of two given by their exponents."""
    vals = [b for b in bits if b != NEG_INF]
    if not vals:
        return NEG_INF
    return float(np.logaddexp2.reduce(vals)) if len(vals) > 1 else float(vals[0])


def log2_abs(x: float) -> float:
    return math.log2(x) if x > 0 else NEG_INF


class Encoding(str, Enum):
    SLOT = "Slot"
    COEFF = "Coeff"


class BtsVariant(str, Enum):
    CTS_FIRST = "CtSFirst"
    STC_FIRST = "StCFirst"
    HALF = "Half"
    SI_HALF = "SIHalf"


@dataclass(frozen=True)
class ModulusChain:
    """Per-level prime sizes in bits; index 0 is the bottom modulus."""

    levels: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(b) for b in self.levels))
        if not self.levels:
            raise ConfigError("modulus chain must be nonempty")
        if any(b <= 0 for b in self.levels):
            raise ConfigError("modulus chain bit sizes must be positive")

    @property
    def top_level(self) -> int:
        return len(self.levels) - 1

    def bits(self, level: int) -> float:
        return self.levels[level]

    def modulus_bits(self, level: int) -> float:
        """log2 Q_level = sum of prime sizes up to and including level."""
        return float(sum(self.levels[: level + 1]))


@dataclass(frozen=True)
class BtsProfile:
    """Input contract and output metadata of one bootstrapping variant.

    ``e_bts_bits`` is log2 of the added message-domain error.
    """

    variant: BtsVariant
    input_level: int
    output_level: int
    input_encoding: Encoding
    output_encoding: Encoding
    output_scale_bits: float
    e_bts_bits: float

    @classmethod
    def from_dict(cls, d: dict) -> "BtsProfile":
        return cls(BtsVariant(d["variant"]), int(d["input_level"]), int(d["output_level"]),
                   Encoding(d["input_encoding"]), Encoding(d["output_encoding"]),
                   float(d["output_scale_bits"]), float(d["e_bts_bits"]))

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "input_level": self.input_level,
                "output_level": self.output_level, "input_encoding": self.input_encoding.value,
                "output_encoding": self.output_encoding.value,
                "output_scale_bits": self.output_scale_bits, "e_bts_bits": self.e_bts_bits}


@dataclass(frozen=True)
class NoiseConstants:
    """Fresh-noise terms (log2, scaled domain) added by each op."""

    fresh_bits: float = 3.0
    mult_bits: float = 4.0
    rescale_bits: float = 3.0
    rot_bits: float = 4.0
    const_bits: float = -1.0  # rounding an encoded constant to the nearest integer
    const_precision_bits: float = 40.0  # relative precision of level-free constants


@dataclass(frozen=True)
class EmulatorConfig:
    chain: ModulusChain
    noise: NoiseConstants = NoiseConstants()
    profiles: dict = field(default_factory=dict)
    stc_levels: int = 1
    bitext_levels: int = 4
    conversion_levels: int = 1
    bitext_error_bits: float = -20.0  # message-domain error of extracted bits

    def profile(self, name: str) -> BtsProfile:
        try:
            return self.profiles[name]
        except KeyError:
            raise ConfigError(f"unknown bootstrapping profile {name!r}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "EmulatorConfig":
        try:
            chain = ModulusChain(tuple(d["chain_bits"]))
            noise = NoiseConstants(**d.get("noise", {}))
            profiles = {k: BtsProfile.from_dict(v) for k, v in d.get("profiles", {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad emulator config: {exc}") from exc
        for name, p in profiles.items():
            if not 0 <= p.output_level <= chain.top_level or not 0 <= p.input_level <= chain.top_level:
                raise ConfigError(f"profile {name} levels outside chain")
        return cls(chain, noise, profiles, int(d.get("stc_levels", 1)),
                   int(d.get("bitext_levels", 4)), int(d.get("conversion_levels", 1)),
                   float(d.get("bitext_error_bits", -20.0)))

    def to_dict(self) -> dict:
        return {"chain_bits": list(self.chain.levels), "noise": vars(self.noise).copy(),
                "profiles": {k: p.to_dict() for k, p in self.profiles.items()},
                "stc_levels": self.stc_levels, "bitext_levels": self.bitext_levels,
                "conversion_levels": self.conversion_levels,
                "bitext_error_bits": self.bitext_error_bits}


def load_config(path=None) -> EmulatorConfig:
    """Read a JSON emulator config; the packaged default when path is None."""
    if path is None:
        text = resources.files("irisfhe.data").joinpath("emulator_default.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return EmulatorConfig.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class EmulatedCiphertext:
    message: np.ndarray
    encoding: Encoding
    ci: bool
    log_ring_degree: int
    level: int
    scale_bits: float
    noise_bound_bits: float

    @property
    def slots(self) -> int:
        return self.message.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.message.shape[:-1]

    @property
    def count(self) -> int:
        return int(np.prod(self.batch_shape, dtype=np.int64))

    @property
    def error_bound(self) -> float:
        """Worst-case message-domain error."""
        return 2.0 ** (self.noise_bound_bits - self.scale_bits)

    def __getitem__(self, idx) -> "EmulatedCiphertext":
        """Select ciphertexts along the batch axes."""
        msg = self.message[idx]
        if msg.ndim < 1 or msg.shape[-1] != self.slots:
            raise ShapeMismatch("indexing must keep the slot axis")
        return replace(self, message=msg)


def expected_slots(encoding: Encoding, ci: bool, log_n: int) -> int:
    if encoding is Encoding.SLOT and not ci:
        return 1 << (log_n - 1)
    return 1 << log_n


def stack_cts(cts: Sequence[EmulatedCiphertext]) -> EmulatedCiphertext:
    """Stack same-metadata ciphertexts along a new leading batch axis."""
    base = cts[0]
    for c in cts[1:]:
        if (c.level, c.encoding, c.ci, c.log_ring_degree) != \
                (base.level, base.encoding, base.ci, base.log_ring_degree):
            raise LevelMismatch("stacked ciphertexts must share metadata")
        if abs(c.scale_bits - base.scale_bits) > SCALE_TOL:
            raise ScaleMismatch("stacked ciphertexts must share the scale")
    return replace(base, message=np.stack([c.message for c in cts]),
                   noise_bound_bits=max(c.noise_bound_bits for c in cts))


@dataclass
class EncryptedDb:
    """Database matrix (rows = entries) encrypted at a large modulus for CCMM."""

    matrix: np.ndarray
    log_n_db: int
    modulus_bits: float
    scale_bits: float

    @property
    def n_db(self) -> int:
        return self.matrix.shape[0]


@dataclass
class TraceRow:
    op: str
    count: int
    level_before: int
    level_after: int
    scale_bits: float
    noise_bound_bits: float
    phase: str


class Emulator:
    """Evaluates CKKS operations on plaintext twins with metadata bookkeeping."""

    def __init__(self, config: EmulatorConfig | None = None, inject: bool = False,
                 seed: int | None = 0, trace: bool = False):
        self.config = config if config is not None else load_config()
        self.chain = self.config.chain
        self.noise = self.config.noise
        self.inject = inject
        self.rng = np.random.default_rng(seed)
        self.ops: Counter = Counter()
        self.bts_by_phase: Counter = Counter()
        self.trace: list[TraceRow] | None = [] if trace else None
        self._phase = "main"

    # --- bookkeeping -----------------------------------------------------

    @contextmanager
    def phase(self, name: str):
        prev, self._phase = self._phase, name
        try:
            yield
        finally:
            self._phase = prev

    @property
    def current_phase(self) -> str:
        return self._phase

    def _record(self, op: str, before: EmulatedCiphertext | None, after: EmulatedCiphertext,
                count: int | None = None):
        n = after.count if count is None else count
        self.ops[op] += n
        if op == "bts":
            self.bts_by_phase[self._phase] += n
        if self.trace is not None:
            lb = before.level if before is not None else after.level
            self.trace.append(TraceRow(op, n, lb, after.level, after.scale_bits,
                                       after.noise_bound_bits, self._phase))

    def bts_count(self, phase: str | None = None) -> int:
        if phase is None:
            return sum(self.bts_by_phase.values())
        return self.bts_by_phase[phase]

    def reset_counters(self):
        self.ops.clear()
        self.bts_by_phase.clear()
        if self.trace is not None:
            self.trace.clear()

    def write_trace(self, path) -> None:
        if self.trace is None:
            raise ValueError("tracing is disabled")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["op", "count", "level_before", "level_after", "scale_bits",
                        "noise_bound_bits", "phase"])
            for r in self.trace:
                w.writerow([r.op, r.count, r.level_before, r.level_after,
                            f"{r.scale_bits:.6g}", f"{r.noise_bound_bits:.6g}", r.phase])

    def _noise(self, msg: np.ndarray, fresh_bits: float, scale_bits: float) -> np.ndarray:
        """Add uniform noise bounded by 2^(fresh_bits - scale_bits) when injecting."""
        if not self.inject or fresh_bits == NEG_INF:
            return msg
        amp = 2.0 ** (fresh_bits - scale_bits)
        if np.iscomplexobj(msg):
            amp /= math.sqrt(2)
            return msg + amp * (self.rng.uniform(-1, 1, msg.shape)
                                + 1j * self.rng.uniform(-1, 1, msg.shape))
        return msg + amp * self.rng.uniform(-1, 1, msg.shape)

    def _require_level(self, ct: EmulatedCiphertext, op: str, need: int = 1):
        if ct.level < need:
            raise ModulusExhausted(f"{op} needs {need} level(s), ciphertext is at level {ct.level}")

    def _check_scale(self, scale_bits: float, level: int):
        if scale_bits > self.chain.modulus_bits(level) + SCALE_TOL:
            raise ModulusExhausted(
                f"scale 2^{scale_bits:g} exceeds the modulus 2^{self.chain.modulus_bits(level):g}")

    @staticmethod
    def _maxabs(msg: np.ndarray) -> float:
        return float(np.max(np.abs(msg))) if msg.size else 0.0

    # --- encoding --------------------------------------------------------

    def ecd(self, v, encoding: Encoding = Encoding.SLOT, scale_bits: float = 40.0,
            level: int | None = None, log_ring_degree: int | None = None,
            ci: bool | None = None) -> EmulatedCiphertext:
        """Fresh encryption of v (last axis = slots)."""
        encoding = Encoding(encoding)
        v = np.array(v)
        if v.ndim == 0:
            raise ShapeMismatch("message must have a slot axis")
        if not np.iscomplexobj(v):
            v = v.astype(np.float64)
        if ci is None:
            ci = encoding is Encoding.SLOT and not np.iscomplexobj(v)
        slots = v.shape[-1]
        if log_ring_degree is None:
            per = 2 if (encoding is Encoding.SLOT and not ci) else 1
            log_ring_degree = int(round(math.log2(slots * per)))
        if slots != expected_slots(encoding, ci, log_ring_degree):
            raise ShapeMismatch(f"{slots} entries do not fit {encoding.value} encoding "
                                f"with log N = {log_ring_degree}")
        if ci and np.iscomplexobj(v):
            raise NonRealMessage("conjugate-invariant encoding needs real messages")
        level = self.chain.top_level if level is None else level
        if not 0 <= level <= self.chain.top_level:
            raise LevelMismatch(f"level {level} outside chain")
        self._check_scale(scale_bits, level)
        nb = self.noise.fresh_bits
        msg = self._noise(v, nb, scale_bits)
        ct = EmulatedCiphertext(msg, encoding, ci, log_ring_degree, level, float(scale_bits), nb)
        self._record("ecd", None, ct)
        return ct

    def dcd(self, ct: EmulatedCiphertext) -> np.ndarray:
        return ct.message.copy()

    # --- arithmetic ------------------------------------------------------

    def _same_layout(self, a: EmulatedCiphertext, b: EmulatedCiphertext):
        if (a.log_ring_degree, a.encoding, a.ci) != (b.log_ring_degree, b.encoding, b.ci):
            raise EncodingMismatch("operands differ in ring degree or encoding")
        if a.level != b.level:
            raise LevelMismatch(f"levels differ: {a.level} != {b.level}")

    def add(self, a: EmulatedCiphertext, b: EmulatedCiphertext) -> EmulatedCiphertext:
        self._same_layout(a, b)
        if abs(a.scale_bits - b.scale_bits) > SCALE_TOL:
            raise ScaleMismatch(f"scales differ: {a.scale_bits} != {b.scale_bits}")
        out = replace(a, message=a.message + b.message,
                      noise_bound_bits=log2_sum(a.noise_bound_bits, b.noise_bound_bits))
        self._record("add", a, out)
        return out

    def sub(self, a: EmulatedCiphertext, b: EmulatedCiphertext) -> EmulatedCiphertext:
        self._same_layout(a, b)
        if abs(a.scale_bits - b.scale_bits) > SCALE_TOL:
            raise ScaleMismatch(f"scales differ: {a.scale_bits} != {b.scale_bits}")
        out = replace(a, message=a.message - b.message,
                      noise_bound_bits=log2_sum(a.noise_bound_bits, b.noise_bound_bits))
        self._record("sub", a, out)
        return out

    def add_const(self, a: EmulatedCiphertext, c) -> EmulatedCiphertext:
        c = np.asarray(c)
        fresh = self.noise.const_bits if np.any(c != 0) else NEG_INF
        msg = self._noise(a.message + c, fresh, a.scale_bits)
        out = replace(a, message=msg, noise_bound_bits=log2_sum(a.noise_bound_bits, fresh))
        self._record("add_const", a, out)
        return out

    def mult_const(self, a: EmulatedCiphertext, c: float) -> EmulatedCiphertext:
        """Multiply by a scalar without consuming a level.

        The constant is folded into the next rescale (lazy scaling), so the
        scale is unchanged; its finite precision adds a relative error term.
        """
        self._require_level(a, "mult_const")
        c = float(c)
        ma = self._maxabs(a.message)
        fresh = log2_abs(abs(c) * ma) + a.scale_bits - self.noise.const_precision_bits
        msg = self._noise(a.message * c, fresh, a.scale_bits)
        nb = log2_sum(a.noise_bound_bits + log2_abs(abs(c)) if c else NEG_INF, fresh)
        out = replace(a, message=msg, noise_bound_bits=nb)
        self._record("mult_const", a, out)
        return out

    def mult(self, a: EmulatedCiphertext, b: EmulatedCiphertext) -> EmulatedCiphertext:
        """Ciphertext product with relinearization; the caller rescales."""
        self._same_layout(a, b)
        self._require_level(a, "mult")
        scale = a.scale_bits + b.scale_bits
        self._check_scale(scale, a.level)
        ea, eb = a.error_bound, b.error_bound
        ma, mb = self._maxabs(a.message), self._maxabs(b.message)
        prop = log2_abs(ma * eb + mb * ea + ea * eb) + scale
        fresh = self.noise.mult_bits
        msg = self._noise(a.message * b.message, fresh, scale)
        out = replace(a, message=msg, scale_bits=scale, noise_bound_bits=log2_sum(prop, fresh))
        self._record("mult", a, out)
        return out

    def pmult(self, a: EmulatedCiphertext, pt, pt_scale_bits: float | None = None) -> EmulatedCiphertext:
        """Product with a plaintext vector encoded at scale 2^pt_scale_bits."""
        self._require_level(a, "pmult")
        pt = np.asarray(pt)
        if pt.shape[-1:] != (a.slots,):
            raise ShapeMismatch("plaintext length differs from slot count")
        ps = self.chain.bits(a.level) if pt_scale_bits is None else float(pt_scale_bits)
        scale = a.scale_bits + ps
        self._check_scale(scale, a.level)
        if self.inject:
            pt = np.round(pt * 2.0**ps) / 2.0**ps
        ea, ma = a.error_bound, self._maxabs(a.message)
        mp = float(np.max(np.abs(pt))) if pt.size else 0.0
        rnd = 2.0 ** (-ps - 1)
        prop = log2_abs(mp * ea + ma * rnd + ea * rnd) + scale
        out = replace(a, message=a.message * pt, scale_bits=scale, noise_bound_bits=prop)
        self._record("pmult", a, out)
        return out

    def rescale(self, a: EmulatedCiphertext, drop_bits: float | None = None) -> EmulatedCiphertext:
        """Divide by the current prime (or 2^drop_bits) and move one level down."""
        self._require_level(a, "rescale")
        drop = self.chain.bits(a.level) if drop_bits is None else float(drop_bits)
        scale = a.scale_bits - drop
        if scale <= 0:
            raise ScaleMismatch(f"rescale by 2^{drop:g} leaves no scale")
        fresh = self.noise.rescale_bits
        msg = self._noise(a.message, fresh, scale)
        out = replace(a, message=msg, level=a.level - 1, scale_bits=scale,
                      noise_bound_bits=log2_sum(a.noise_bound_bits - drop, fresh))
        self._check_scale(scale, out.level)
        self._record("rescale", a, out)
        return out

    def level_down(self, a: EmulatedCiphertext, level: int) -> EmulatedCiphertext:
        """Drop moduli without dividing (free; noise unchanged)."""
        if level > a.level:
            raise LevelMismatch("level_down cannot raise the level")
        if level == a.level:
            return a
        if level < 0:
            raise ModulusExhausted("target level below 0")
        self._check_scale(a.scale_bits, level)
        out = replace(a, level=level)
        self._record("level_down", a, out)
        return out

    def match_levels(self, *cts: EmulatedCiphertext) -> list[EmulatedCiphertext]:
        low = min(c.level for c in cts)
        return [self.level_down(c, low) for c in cts]

    def rot(self, a: EmulatedCiphertext, r: int) -> EmulatedCiphertext:
        """Rot_r: slot i receives slot i + r (cyclic)."""
        if a.encoding is not Encoding.SLOT:
            raise EncodingMismatch("rotation needs slot encoding")
        self._require_level(a, "rot")
        r = int(r) % a.slots
        if r == 0:
            return a
        fresh = self.noise.rot_bits
        msg = self._noise(np.roll(a.message, -r, axis=-1), fresh, a.scale_bits)
        out = replace(a, message=msg, noise_bound_bits=log2_sum(a.noise_bound_bits, fresh))
        self._record("rot", a, out)
        return out

    # --- bootstrapping and conversions ------------------------------------

    def bts(self, a: EmulatedCiphertext, profile: BtsProfile | str) -> EmulatedCiphertext:
        if isinstance(profile, str):
            profile = self.config.profile(profile)
        if a.level != profile.input_level or a.encoding is not profile.input_encoding:
            raise ProfileMismatch(
                f"{profile.variant.value} expects level {profile.input_level} "
                f"{profile.input_encoding.value}, got level {a.level} {a.encoding.value}")
        s_out = profile.output_scale_bits
        e_bts = profile.e_bts_bits
        if profile.variant in (BtsVariant.HALF, BtsVariant.SI_HALF):
            # the bottom-modulus coefficients are rounded to integers at scale
            # 2^s_in (Half) or to integer messages (SIHalf); errors under half a
            # unit vanish, larger ones survive up to half a unit more
            unit = 2.0 ** -a.scale_bits if profile.variant is BtsVariant.HALF else 1.0
            msg = np.round(a.message / unit) * unit
            e_in = a.error_bound
            err = e_bts if e_in < unit / 2 else log2_sum(log2_abs(e_in + unit / 2), e_bts)
        else:
            msg = a.message
            err = log2_sum(a.noise_bound_bits - a.scale_bits, e_bts)
        msg = self._noise(msg, e_bts + s_out, s_out)
        out = replace(a, message=msg, encoding=profile.output_encoding, level=profile.output_level,
                      scale_bits=s_out, noise_bound_bits=err + s_out)
        self._check_scale(s_out, out.level)
        self._record("bts", a, out)
        return out

    def slot_to_coeff(self, a: EmulatedCiphertext, levels: int | None = None) -> EmulatedCiphertext:
        """Homomorphic SlotToCoeff: slot i becomes coefficient i."""
        if a.encoding is not Encoding.SLOT:
            raise EncodingMismatch("slot_to_coeff needs slot encoding")
        cost = self.config.stc_levels if levels is None else levels
        self._require_level(a, "slot_to_coeff", cost)
        fresh = self.noise.rot_bits + 2
        msg = self._noise(a.message, fresh, a.scale_bits)
        out = replace(a, message=msg, encoding=Encoding.COEFF, level=a.level - cost,
                      noise_bound_bits=log2_sum(a.noise_bound_bits, fresh))
        self._record("slot_to_coeff", a, out)
        return out

    def consume_levels(self, a: EmulatedCiphertext, levels: int, op: str = "consume") -> EmulatedCiphertext:
        """Account for a black-box sub-circuit of the given depth."""
        self._require_level(a, op, levels)
        out = replace(a, level=a.level - levels)
        self._record(op, a, out)
        return out

    def extract_bits(self, a: EmulatedCiphertext, width: int) -> EmulatedCiphertext:
        """Split integer messages into `width` binary digits (new axis before the slots).

        The extraction circuit is a black box of bitext_levels levels whose
        outputs are bits up to 2^bitext_error_bits; the message must be integral
        within half a unit.
        """
        if a.error_bound >= 0.5:
            raise ScaleMismatch("messages are not integral within half a unit")
        cost = self.config.bitext_levels
        self._require_level(a, "extract_bits", cost)
        ints = np.rint(np.real(a.message)).astype(np.int64)
        if np.any(ints < 0) or np.any(ints >= 1 << width):
            raise ShapeMismatch(f"messages do not fit {width} bits")
        digits = np.stack([(ints >> i) & 1 for i in range(width)], axis=-2).astype(np.float64)
        fresh = self.config.bitext_error_bits + a.scale_bits
        msg = self._noise(digits, fresh, a.scale_bits)
        out = replace(a, message=msg, level=a.level - cost, noise_bound_bits=fresh)
        self._record("extract_bits", a, out)
        return out

    def to_ci(self, a: EmulatedCiphertext) -> EmulatedCiphertext:
        """Complex ring 2N with N slots -> conjugate-invariant ring N with N real slots."""
        if a.ci:
            raise EncodingMismatch("ciphertext is already conjugate-invariant")
        self._require_level(a, "to_ci", self.config.conversion_levels)
        msg = a.message
        if np.iscomplexobj(msg):
            if np.any(msg.imag != 0):
                raise NonRealMessage("to_ci needs a real message")
            msg = msg.real.copy()
        out = replace(a, message=msg, ci=True, log_ring_degree=a.log_ring_degree - 1,
                      level=a.level - self.config.conversion_levels)
        self._record("to_ci", a, out)
        return out

    def from_ci(self, a: EmulatedCiphertext) -> EmulatedCiphertext:
        if not a.ci:
            raise EncodingMismatch("ciphertext is not conjugate-invariant")
        self._require_level(a, "from_ci", self.config.conversion_levels)
        out = replace(a, message=a.message.astype(np.complex128), ci=False,
                      log_ring_degree=a.log_ring_degree + 1,
                      level=a.level - self.config.conversion_levels)
        self._record("from_ci", a, out)
        return out

    def ring_pack(self, cts: Sequence[EmulatedCiphertext]) -> EmulatedCiphertext:
        """Pack 2^k same-ring ciphertexts into one ciphertext of ring 2^k N.

        Each input is embedded in the large ring, masked to its block and the
        masked ciphertexts are summed; the masking costs one level.
        """
        n = len(cts)
        k = n.bit_length() - 1
        if n < 1 or 1 << k != n:
            raise ShapeMismatch("ring_pack needs a power-of-two number of ciphertexts")
        base = cts[0]
        for c in cts:
            self._same_layout(base, c)
            if abs(c.scale_bits - base.scale_bits) > SCALE_TOL or c.batch_shape != base.batch_shape:
                raise ScaleMismatch("ring_pack inputs must share scale and batch shape")
        self._require_level(base, "ring_pack")
        s = base.slots
        total = np.zeros(base.batch_shape + (s * n,), dtype=base.message.dtype)
        for j, c in enumerate(cts):
            mask = np.zeros(s * n)
            mask[j * s:(j + 1) * s] = 1.0
            total = total + np.tile(c.message, n) * mask
        nb = log2_sum(*[c.noise_bound_bits for c in cts])
        out = replace(base, message=total, log_ring_degree=base.log_ring_degree + k,
                      level=base.level - 1, noise_bound_bits=nb)
        self._record("ring_pack", base, out, count=base.count * n)
        return out

    def ring_switch_down(self, a: EmulatedCiphertext, target_log_n: int) -> list[EmulatedCiphertext]:
        """Split into consecutive slot blocks, one ciphertext of ring 2^target_log_n each."""
        if a.encoding is not Encoding.SLOT:
            raise EncodingMismatch("ring_switch_down needs slot encoding")
        k = a.log_ring_degree - target_log_n
        if k < 0:
            raise ShapeMismatch("target ring is larger than the source ring")
        self._require_level(a, "ring_switch_down")
        n = 1 << k
        s = a.slots // n
        outs = [replace(a, message=a.message[..., j * s:(j + 1) * s].copy(),
                        log_ring_degree=target_log_n, level=a.level - 1) for j in range(n)]
        for o in outs:
            self._record("ring_switch_down", a, o)
        return outs

    # --- encrypted matrix product -----------------------------------------

    def ccmm_twin(self, db: EncryptedDb, qry: Sequence[EmulatedCiphertext] | EmulatedCiphertext,
                  ) -> EmulatedCiphertext:
        """Scores M_db . M_qry for query columns given as ciphertexts.

        qry holds d3 column ciphertexts (a batch axis of length d3, or a list) with
        d slots each.  The result has batch shape (d3, n_db / N_db) and N_db slots:
        ciphertext (r, l) holds entries l*N_db .. (l+1)*N_db - 1 of column r.
        The output sits one level below the query; its scale is
        query scale + database scale - size of the query-level prime.
        """
        q = stack_cts(list(qry)) if not isinstance(qry, EmulatedCiphertext) else qry
        if q.message.ndim != 2:
            raise ShapeMismatch("query must be a flat batch of column ciphertexts")
        d3, d = q.message.shape
        M = np.asarray(db.matrix)
        if M.ndim != 2 or M.shape[1] != d:
            raise ShapeMismatch(f"database rows have length {M.shape[-1]}, query has {d}")
        n_blk = 1 << db.log_n_db
        if db.n_db % n_blk:
            raise ShapeMismatch("n_db must be a multiple of N_db")
        self._require_level(q, "ccmm")
        q_bits = self.chain.modulus_bits(q.level)
        need = 2 * q_bits - q.scale_bits
        if db.modulus_bits < need - SCALE_TOL:
            raise ModulusBudget(f"database modulus 2^{db.modulus_bits:g} below Q^2/Delta = 2^{need:g}")
        scores = (M.astype(np.float64) @ q.message.T).T  # (d3, n_db)
        msg = scores.reshape(d3, db.n_db // n_blk, n_blk)
        # per-entry error: sum of |db| times query error, plus key-switch noise
        row_l1 = float(np.max(np.sum(np.abs(M), axis=1))) if M.size else 0.0
        prop = log2_abs(row_l1 * q.error_bound) + q.scale_bits
        fresh = self.noise.mult_bits + 0.5 * math.log2(max(d, 1))
        msg = self._noise(msg, fresh, q.scale_bits + db.scale_bits - self.chain.bits(q.level))
        scale = q.scale_bits + db.scale_bits - self.chain.bits(q.level)
        shift = scale - q.scale_bits
        out = EmulatedCiphertext(msg, Encoding.SLOT, True, db.log_n_db, q.level - 1,
                                 scale, log2_sum(prop + shift, fresh))
        self._record("ccmm", q, out)
        return out
