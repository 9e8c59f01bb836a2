"""QUBO sampling backends behind one interface.

A :class:`QuboProblem` is an upper-triangular sparse matrix plus request
parameters (``num_reads``, ``annealing_time_us``, ``seed``).  Backends turn
it into a :class:`SampleSet` of (bit-vector, energy) reads whose best entry
has the lowest energy, ties broken by the lexicographically smallest
bit-vector.

Available backends:

* :class:`ExhaustiveSampler` -- exact enumeration up to a size cap, the
  ground-truth oracle;
* :class:`SimulatedAnnealingSampler` -- classical annealer stand-in with a
  geometric temperature ladder and a zero-temperature polish;
* :class:`BridgeSampler` -- client of the external-process wire protocol
  (newline-delimited JSON over the child's standard streams).

Determinism: read r of a problem uses the derived seed ``seed ^ r`` for its
random stream.  A problem tagged with block boundaries is solved per block
(block b derives its base seed from ``seed`` and b) and the per-block best
bit-vectors are concatenated into one combined read, which equals
whole-problem solving for truly block-diagonal matrices.
"""

from __future__ import annotations

import json
import os
import selectors
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuboProblem",
    "Sample",
    "SampleSet",
    "IsingProblem",
    "SamplerError",
    "CapacityError",
    "TransportError",
    "BridgeProtocolError",
    "BridgeRemoteError",
    "BridgeTimeoutError",
    "ExhaustiveSampler",
    "SimulatedAnnealingSampler",
    "BridgeSampler",
    "sample",
    "exhaustive_sample",
    "sa_sample",
    "bridge_sample",
    "qubo_to_ising",
    "qubo_energy",
    "derive_seed",
    "derive_block_seed",
]


class SamplerError(Exception):
    """Base class for sampling failures."""


class CapacityError(SamplerError):
    """Problem size exceeds what the backend can handle."""


class TransportError(SamplerError):
    """Bridge communication failure; carries the raw payload when present."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class BridgeProtocolError(TransportError):
    """Malformed request or response on the bridge wire."""


class BridgeRemoteError(TransportError):
    """The bridge reported an error for this request."""


class BridgeTimeoutError(TransportError):
    """No response from the bridge within the deadline."""


@dataclass
class QuboProblem:
    """Upper-triangular QUBO matrix entries and request parameters."""

    n: int
    entries: dict
    num_reads: int = 100
    annealing_time_us: float = 20.0
    seed: int = 0
    blocks: tuple = None   # optional ((start, size), ...) tiling [0, n)

    def __post_init__(self):
        if self.n < 1:
            raise SamplerError(f"problem needs at least one variable, got n={self.n}")
        if self.num_reads < 1:
            raise SamplerError("num_reads must be at least 1")
        clean = {}
        for (i, j), v in self.entries.items():
            v = float(v)
            if not (0 <= i <= j < self.n):
                raise SamplerError(
                    f"entry ({i}, {j}) outside the upper triangle of size {self.n}")
            if not np.isfinite(v):
                raise SamplerError(f"entry ({i}, {j}) is not finite")
            if v != 0.0:
                clean[(int(i), int(j))] = v
        self.entries = clean
        if self.blocks is not None:
            blocks = tuple((int(s), int(m)) for s, m in self.blocks)
            pos = 0
            for s, m in blocks:
                if s != pos or m < 1:
                    raise SamplerError("blocks must tile [0, n) contiguously")
                pos += m
            if pos != self.n:
                raise SamplerError("blocks must cover all variables")
            starts = np.array([s for s, _ in blocks])
            ends = np.array([s + m for s, m in blocks])
            for (i, j) in self.entries:
                b = int(np.searchsorted(ends, i, side="right"))
                if not (starts[b] <= i and j < ends[b]):
                    raise SamplerError(f"entry ({i}, {j}) crosses block boundaries")
            self.blocks = blocks

    @classmethod
    def from_dense(cls, matrix, **kwargs):
        """Fold a dense (full symmetric or upper) matrix into i <= j entries."""
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0]
        entries = {}
        for i in range(n):
            if matrix[i, i] != 0.0:
                entries[(i, i)] = float(matrix[i, i])
            for j in range(i + 1, n):
                v = matrix[i, j] + matrix[j, i]
                if v != 0.0:
                    entries[(i, j)] = float(v)
        return cls(n=n, entries=entries, **kwargs)

    def dense(self):
        a = np.zeros((self.n, self.n))
        for (i, j), v in self.entries.items():
            a[i, j] = v
        return a

    def energy(self, bits):
        return qubo_energy(self.entries, bits)

    def sub_problem(self, start, size, seed):
        """Restriction to variables [start, start+size) with its own seed."""
        entries = {(i - start, j - start): v for (i, j), v in self.entries.items()
                   if start <= i and j < start + size}
        return QuboProblem(n=size, entries=entries, num_reads=self.num_reads,
                           annealing_time_us=self.annealing_time_us, seed=seed)


def qubo_energy(entries, bits):
    """Exact energy b^T A b of a bit assignment for upper-triangular entries."""
    bits = np.asarray(bits)
    e = 0.0
    for (i, j), v in entries.items():
        if bits[i] and bits[j]:
            e += v
    return e


@dataclass(frozen=True)
class Sample:
    bits: tuple
    energy: float

    def sort_key(self):
        return (self.energy, self.bits)


@dataclass
class SampleSet:
    """Reads returned by a backend; ``best`` is energy- then lex-ordered."""

    samples: list = field(default_factory=list)

    @property
    def best(self):
        if not self.samples:
            raise SamplerError("empty sample set")
        return min(self.samples, key=Sample.sort_key)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass
class IsingProblem:
    """Spin form: biases h, strictly upper-triangular couplings J, offset."""

    n: int
    h: np.ndarray
    j: dict
    offset: float

    def energy(self, spins):
        spins = np.asarray(spins, dtype=float)
        e = float(self.h @ spins) + self.offset
        for (i, k), v in self.j.items():
            e += v * spins[i] * spins[k]
        return e


def qubo_to_ising(problem):
    """Spin-binary transform q = 2b - 1; energy-equivalent for all states."""
    h = np.zeros(problem.n)
    j = {}
    offset = 0.0
    for (i, k), v in problem.entries.items():
        if i == k:
            h[i] += 0.5 * v
            offset += 0.5 * v
        else:
            j[(i, k)] = j.get((i, k), 0.0) + 0.25 * v
            h[i] += 0.25 * v
            h[k] += 0.25 * v
            offset += 0.25 * v
    j = {key: v for key, v in j.items() if v != 0.0}
    return IsingProblem(n=problem.n, h=h, j=j, offset=offset)


# ---------------------------------------------------------------------------
# deterministic counter-based random streams (vectorised splitmix64)
# ---------------------------------------------------------------------------

_U64 = np.uint64
_PHI = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


def _sm64(z):
    # uint64 wraparound is intended here
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _stream_u01(keys, t):
    """t-th uniform [0,1) draw of every stream in ``keys`` (uint64 array)."""
    with np.errstate(over="ignore"):
        z = keys + _U64(((int(t) + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
    return (_sm64(z) >> _U64(11)).astype(np.float64) * (2.0 ** -53)


def derive_seed(base, *indices):
    """Deterministic seed chain; distinct indices give well-mixed streams."""
    mask = 0xFFFFFFFFFFFFFFFF
    x = int(base) & mask
    for ix in indices:
        z = (x + (int(ix) + 1) * 0x9E3779B97F4A7C15) & mask
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        x = z ^ (z >> 31)
    return x


def derive_block_seed(seed, block_index):
    """Base seed of a block sub-problem; shared by all backends."""
    return derive_seed(seed, block_index)


def _read_keys(seed, num_reads):
    base = _U64(seed & 0xFFFFFFFFFFFFFFFF)
    return base ^ np.arange(num_reads, dtype=np.uint64)


# ---------------------------------------------------------------------------
# exhaustive enumeration backend
# ---------------------------------------------------------------------------

class ExhaustiveSampler:
    """Exact global optimum by enumerating all 2^K assignments (K <= cap)."""

    supports_blocks = False

    def __init__(self, cap=24):
        self.cap = cap

    def sample(self, problem):
        n = problem.n
        if n > self.cap:
            raise CapacityError(
                f"exhaustive enumeration capped at {self.cap} variables, got {n}")
        upper = problem.dense()
        best_energy = np.inf
        best_key = np.inf
        best_bits = None
        chunk = 1 << min(n, 16)
        total = 1 << n
        idx_bits = np.arange(n, dtype=np.int64)
        lex_weight = 2.0 ** (n - 1 - np.arange(n))
        for start in range(0, total, chunk):
            ints = np.arange(start, min(start + chunk, total), dtype=np.int64)
            bits = ((ints[:, None] >> idx_bits[None, :]) & 1).astype(np.float64)
            energies = np.einsum("ci,ij,cj->c", bits, upper, bits)
            e_min = energies.min()
            if e_min <= best_energy:
                cand = np.nonzero(energies == e_min)[0]
                keys = bits[cand] @ lex_weight
                pick = int(cand[np.argmin(keys)])
                key = float(bits[pick] @ lex_weight)
                if e_min < best_energy or key < best_key:
                    best_energy = e_min
                    best_key = key
                    best_bits = bits[pick].astype(int)
        bits = tuple(int(b) for b in best_bits)
        return SampleSet([Sample(bits=bits, energy=problem.energy(bits))])


# ---------------------------------------------------------------------------
# simulated annealing backend
# ---------------------------------------------------------------------------

class SimulatedAnnealingSampler:
    """Single-flip Metropolis annealing with a zero-temperature polish.

    The geometric temperature ladder runs from T_hot = max|A_ij| * K down to
    T_cold = 1e-3 * min nonzero |A_ij|; the sweep count maps the
    annealing-time knob monotonically to effort:
    sweeps = max(64, annealing_time_us * 4).

    The compiled (numba) and plain-numpy sweep kernels consume identical
    counter-based random streams, so their results are bit-identical.
    """

    supports_blocks = True

    def sample(self, problem):
        if problem.blocks is not None:
            subs, keys = [], []
            for b, (start, size) in enumerate(problem.blocks):
                sub = problem.sub_problem(start, size,
                                          derive_block_seed(problem.seed, b))
                subs.append(sub)
                keys.append(_read_keys(sub.seed, sub.num_reads))
            sets = self._anneal_batch(subs, keys)
            bits = tuple(int(b) for s in sets for b in s.best.bits)
            return SampleSet([Sample(bits=bits, energy=problem.energy(bits))])
        sets = self._anneal_batch(
            [problem], [_read_keys(problem.seed, problem.num_reads)])
        return sets[0]

    def _anneal_batch(self, problems, read_keys):
        """Anneal several same-shaped problems at once (padded to max size)."""
        nb = len(problems)
        reads = problems[0].num_reads
        sizes = np.array([p.n for p in problems], dtype=np.int64)
        n = int(sizes.max())
        sweeps = max(64, int(round(problems[0].annealing_time_us * 4.0)))

        diag = np.zeros((nb, n))
        coup = np.zeros((nb, n, n))   # symmetric off-diagonal couplings
        for b, p in enumerate(problems):
            diag[b, p.n:] = 1.0       # padding bits relax to 0 in the polish
            for (i, j), v in p.entries.items():
                if i == j:
                    diag[b, i] += v
                else:
                    coup[b, i, j] += v
                    coup[b, j, i] += v

        mags = [abs(v) for p in problems for v in p.entries.values()]
        if not mags:
            return [SampleSet([Sample(bits=(0,) * p.n, energy=0.0)] * reads)
                    for p in problems]
        t_hot = max(mags) * n
        t_cold = min(1e-3 * min(mags), t_hot)
        ladder = t_hot * (t_cold / t_hot) ** (np.arange(sweeps)
                                              / max(sweeps - 1, 1))

        keys = np.stack(read_keys)                      # (nb, reads)
        states = _sweep_kernel(diag, coup, keys, ladder, sizes)

        out = []
        for b, p in enumerate(problems):
            bits_b = states[b, :, :p.n]
            upper = p.dense()
            energies = np.einsum("ri,ij,rj->r", bits_b, upper, bits_b)
            samples = [Sample(bits=tuple(int(x) for x in bits_b[r]),
                              energy=float(energies[r])) for r in range(reads)]
            out.append(SampleSet(samples))
        return out


def _sweep_kernel_numpy(diag, coup, keys, ladder, sizes):
    """Vectorised reference implementation of the annealing sweeps."""
    nb, n = diag.shape
    sweeps = ladder.shape[0]
    init = _stream_u01_many(keys, np.arange(n)) < 0.5
    states = init.astype(np.float64)
    states *= (np.arange(n)[None, None, :] < sizes[:, None, None])
    fields = np.einsum("brj,bij->bri", states, coup)

    t_counter = n
    for s in range(sweeps):
        temp = ladder[s]
        for i in range(n):
            cur = states[:, :, i]
            delta = (1.0 - 2.0 * cur) * (diag[:, None, i] + fields[:, :, i])
            u = _stream_u01(keys, t_counter)
            t_counter += 1
            accept = (delta < 0.0) | (u < np.exp(np.minimum(-delta / temp,
                                                            0.0)))
            if accept.any():
                bi, ri = np.nonzero(accept)
                change = 1.0 - 2.0 * cur[bi, ri]
                states[bi, ri, i] = cur[bi, ri] + change
                fields[bi, ri, :] += change[:, None] * coup[bi, i, :]

    # zero-temperature polish: strictly improving single flips down to a
    # deterministic local minimum
    for _ in range(4 * n + 8):
        improved = False
        for i in range(n):
            cur = states[:, :, i]
            delta = (1.0 - 2.0 * cur) * (diag[:, None, i] + fields[:, :, i])
            accept = delta < 0.0
            if accept.any():
                improved = True
                bi, ri = np.nonzero(accept)
                change = 1.0 - 2.0 * cur[bi, ri]
                states[bi, ri, i] = cur[bi, ri] + change
                fields[bi, ri, :] += change[:, None] * coup[bi, i, :]
        if not improved:
            break
    return states


def _make_numba_kernel():
    try:
        import numba
    except ImportError:
        return None

    @numba.njit(cache=True)
    def kernel(diag, coup, keys, ladder, sizes):
        nb, n = diag.shape
        reads = keys.shape[1]
        sweeps = ladder.shape[0]
        states = np.zeros((nb, reads, n), dtype=np.float64)
        for b in range(nb):
            for r in range(reads):
                key = keys[b, r]
                fields = np.zeros(n)
                for i in range(sizes[b]):
                    z = key + np.uint64(i + 1) * np.uint64(0x9E3779B97F4A7C15)
                    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                    z = z ^ (z >> np.uint64(31))
                    if (z >> np.uint64(11)) * (2.0 ** -53) < 0.5:
                        states[b, r, i] = 1.0
                        for j in range(n):
                            fields[j] += coup[b, i, j]
                t = n
                for s in range(sweeps):
                    temp = ladder[s]
                    for i in range(n):
                        cur = states[b, r, i]
                        delta = (1.0 - 2.0 * cur) * (diag[b, i] + fields[i])
                        z = key + np.uint64(t + 1) * np.uint64(0x9E3779B97F4A7C15)
                        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                        z = z ^ (z >> np.uint64(31))
                        u = (z >> np.uint64(11)) * (2.0 ** -53)
                        t += 1
                        arg = -delta / temp
                        if arg > 0.0:
                            arg = 0.0
                        if delta < 0.0 or u < np.exp(arg):
                            change = 1.0 - 2.0 * cur
                            states[b, r, i] = cur + change
                            for j in range(n):
                                fields[j] += change * coup[b, i, j]
                for _ in range(4 * n + 8):
                    improved = False
                    for i in range(n):
                        cur = states[b, r, i]
                        delta = (1.0 - 2.0 * cur) * (diag[b, i] + fields[i])
                        if delta < 0.0:
                            improved = True
                            change = 1.0 - 2.0 * cur
                            states[b, r, i] = cur + change
                            for j in range(n):
                                fields[j] += change * coup[b, i, j]
                    if not improved:
                        break
        return states

    return kernel


_NUMBA_KERNEL = _make_numba_kernel()


def _sweep_kernel(diag, coup, keys, ladder, sizes):
    if _NUMBA_KERNEL is not None:
        return _NUMBA_KERNEL(diag, coup, np.ascontiguousarray(keys), ladder,
                             sizes)
    return _sweep_kernel_numpy(diag, coup, keys, ladder, sizes)


def _stream_u01_many(keys, ts):
    """Uniform draws for several stream indices at once: shape (*keys, len(ts))."""
    with np.errstate(over="ignore"):
        ts = np.asarray(ts, dtype=np.uint64)
        z = keys[..., None] + (ts + _U64(1)) * _PHI
    return (_sm64(z) >> _U64(11)).astype(np.float64) * (2.0 ** -53)


# ---------------------------------------------------------------------------
# bridge client (wire protocol over a child process's standard streams)
# ---------------------------------------------------------------------------

def _format_float(v):
    """Decimal with 17 significant digits; round-trips float64 bit-exactly."""
    return format(float(v), ".17g")


class BridgeSampler:
    """Client spawning (or attached to) an external bridge process.

    The wire protocol is newline-delimited JSON, one request per line:

        {"id": 1, "n": 2, "entries": [[0, 0, -1.0], [0, 1, 2.0]],
         "num_reads": 100, "annealing_time_us": 20, "seed": 7}

    and one response per request, possibly out of order, matched by id:

        {"id": 1, "sample": [0, 1], "energy": -1.0}
        {"id": 1, "error": "message"}
    """

    supports_blocks = True

    def __init__(self, command=None, process=None, timeout=60.0):
        if command is None and process is None:
            raise TransportError("bridge needs a command or an attached process")
        self._command = command
        self._proc = process
        self._timeout = timeout
        self._next_id = 1
        self._buffer = b""

    # -- process management -------------------------------------------------

    def _ensure_process(self):
        if self._proc is None or self._proc.poll() is not None:
            if self._command is None:
                raise TransportError("bridge process has exited")
            try:
                self._proc = subprocess.Popen(
                    self._command, stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, bufsize=0)
            except OSError as exc:
                raise TransportError(f"cannot start bridge: {exc}") from exc
            self._buffer = b""
        return self._proc

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5.0)
            except Exception:
                self._proc.kill()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- wire protocol ------------------------------------------------------

    def _encode_request(self, rid, n, entries, num_reads, annealing_time_us,
                        seed):
        if n < 1:
            raise BridgeProtocolError(f"refusing empty problem (n={n})")
        parts = [f"[{i},{j},{_format_float(v)}]"
                 for (i, j), v in sorted(entries.items())]
        return (f'{{"id":{rid},"n":{n},"entries":[{",".join(parts)}],'
                f'"num_reads":{num_reads},'
                f'"annealing_time_us":{_format_float(annealing_time_us)},'
                f'"seed":{seed}}}')

    def _send_line(self, line):
        proc = self._ensure_process()
        try:
            proc.stdin.write(line.encode() + b"\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"bridge pipe closed: {exc}",
                                 payload=line) from exc

    def _read_line(self, deadline):
        proc = self._proc
        sel = selectors.DefaultSelector()
        sel.register(proc.stdout, selectors.EVENT_READ)
        try:
            while b"\n" not in self._buffer:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BridgeTimeoutError(
                        f"no bridge response within {self._timeout} s",
                        payload=self._buffer.decode(errors="replace"))
                if not sel.select(remaining):
                    continue
                data = os.read(proc.stdout.fileno(), 65536)
                if not data:
                    raise TransportError(
                        "bridge closed its output stream",
                        payload=self._buffer.decode(errors="replace"))
                self._buffer += data
        finally:
            sel.close()
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode(errors="replace")

    def _collect(self, pending, deadline):
        """Read responses until every id in ``pending`` is resolved."""
        results = {}
        while pending:
            line = self._read_line(deadline)
            if not line.strip():
                continue
            try:
                msg = json.loads(line)
                rid = msg["id"]
            except (ValueError, KeyError, TypeError) as exc:
                raise BridgeProtocolError(f"malformed bridge response: {exc}",
                                          payload=line) from exc
            if rid not in pending:
                raise BridgeProtocolError(f"unexpected response id {rid}",
                                          payload=line)
            if "error" in msg:
                raise BridgeRemoteError(str(msg["error"]), payload=line)
            if "sample" not in msg or "energy" not in msg:
                raise BridgeProtocolError("response missing sample/energy",
                                          payload=line)
            bits = msg["sample"]
            if len(bits) != pending[rid]:
                raise BridgeProtocolError(
                    f"sample length {len(bits)} does not match n={pending[rid]}",
                    payload=line)
            results[rid] = (tuple(int(b) for b in bits), float(msg["energy"]))
            del pending[rid]
        return results

    def sample(self, problem):
        if problem.blocks is not None:
            subs = [problem.sub_problem(start, size,
                                        derive_block_seed(problem.seed, b))
                    for b, (start, size) in enumerate(problem.blocks)]
        else:
            subs = [problem]
        deadline = time.monotonic() + self._timeout
        pending = {}
        order = []
        for sub in subs:
            rid = self._next_id
            self._next_id += 1
            line = self._encode_request(rid, sub.n, sub.entries, sub.num_reads,
                                        sub.annealing_time_us, sub.seed)
            self._send_line(line)
            pending[rid] = sub.n
            order.append(rid)
        results = self._collect(pending, deadline)
        bits = tuple(b for rid in order for b in results[rid][0])
        return SampleSet([Sample(bits=bits, energy=problem.energy(bits))])


# ---------------------------------------------------------------------------
# top-level entry points
# ---------------------------------------------------------------------------

def sample(problem, backend):
    """Sample a problem, splitting block-tagged ones for plain backends."""
    if problem.blocks is not None and not getattr(backend, "supports_blocks",
                                                  False):
        parts = []
        for b, (start, size) in enumerate(problem.blocks):
            sub = problem.sub_problem(start, size,
                                      derive_block_seed(problem.seed, b))
            parts.append(backend.sample(sub).best.bits)
        bits = tuple(int(x) for part in parts for x in part)
        return SampleSet([Sample(bits=bits, energy=problem.energy(bits))])
    return backend.sample(problem)


def exhaustive_sample(problem, cap=24):
    """Provably global minimum of the problem (its size capped)."""
    return sample(problem, ExhaustiveSampler(cap=cap))


def sa_sample(problem):
    """Simulated-annealing sample set with the problem's read parameters."""
    return sample(problem, SimulatedAnnealingSampler())


def bridge_sample(problem, command=None, process=None, timeout=60.0):
    """One-shot sampling through a bridge process (no fallback on failure)."""
    with BridgeSampler(command=command, process=process,
                       timeout=timeout) as client:
        return client.sample(problem)
