"""Corpus files, basal-signal removal, and binary persistence.

Corpus CSV:   header ``series_id,t,ch1[,ch2,...]``; per series, t runs
              contiguously from 0 at one-minute granularity.  Lines starting
              with ``#`` are comments.
Metadata CSV: header ``series_id,grade,labels``; grade is an integer (may be
              empty), labels a 0/1 string of length D (may be empty).

Checkpoint container (see README for the byte-level layout): magic, u32
schema version, u64 body length, body of length-prefixed named sections,
CRC32 of the body.  Arrays are stored as little-endian raw bytes.  Archives
are a magic+version header followed by independently CRC'd records so that a
killed writer leaves at most one detectable partial record at the tail.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    CheckpointCorruptError,
    CheckpointVersionError,
    CorpusFormatError,
    SeriesTooShortError,
    ShapeError,
)
from .gibbs import ChainState, GibbsConfig, SuffStats
from .model import ArWord, Corpus, Hyperparameters, MniwPrior, ModelParams, SeriesState

CHECKPOINT_MAGIC = b"TSTOPCK1"
ARCHIVE_MAGIC = b"TSTOPAR1"
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# corpus CSV
# ---------------------------------------------------------------------------


def save_corpus(
    corpus: Corpus,
    path,
    metadata_path=None,
    header_comment: Optional[str] = None,
    m: Optional[int] = None,
) -> None:
    """Write the corpus (and optional grade/label metadata) as CSV.

    `m` fixes the channel count for the header when the corpus is empty.
    """
    m = corpus.m if corpus.n_series else (m or 0)
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        w = csv.writer(f)
        w.writerow(["series_id", "t"] + [f"ch{j + 1}" for j in range(m)])
        for sid, y in zip(corpus.series_ids, corpus.series):
            for t in range(y.shape[0]):
                w.writerow([sid, t] + [repr(float(v)) for v in y[t]])
    if metadata_path is not None:
        with open(metadata_path, "w", newline="") as f:
            if header_comment:
                f.write(f"# {header_comment}\n")
            w = csv.writer(f)
            w.writerow(["series_id", "grade", "labels"])
            for n, sid in enumerate(corpus.series_ids):
                grade = ""
                if corpus.grades is not None and corpus.grades[n] is not None:
                    grade = str(int(corpus.grades[n]))
                labels = ""
                if corpus.labels is not None and corpus.labels[n] is not None:
                    labels = "".join(str(int(v)) for v in corpus.labels[n])
                w.writerow([sid, grade, labels])


def _read_csv_rows(path):
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(line for line in f if not line.startswith("#")) if r]
    if not rows:
        raise CorpusFormatError(f"{path}: empty file")
    return rows[0], rows[1:]


def load_corpus(path, metadata_path=None) -> Corpus:
    """Read a corpus CSV (plus optional metadata sidecar) into a Corpus.

    Residuals are initialized to the raw series; apply preprocess_corpus (or
    remove_basal per series) before fitting.
    """
    header, rows = _read_csv_rows(path)
    if len(header) < 3 or header[0] != "series_id" or header[1] != "t":
        raise CorpusFormatError(f"{path}: expected header series_id,t,ch1[,...]")
    m = len(header) - 2
    order: list = []
    data: dict = {}
    for i, row in enumerate(rows):
        if len(row) != m + 2:
            raise CorpusFormatError(f"{path}: row {i + 2} has {len(row)} fields, expected {m + 2}")
        sid = row[0]
        try:
            t = int(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: row {i + 2} is not numeric") from exc
        if sid not in data:
            data[sid] = {}
            order.append(sid)
        if t in data[sid]:
            raise CorpusFormatError(f"{path}: series {sid} has duplicate t={t}")
        data[sid][t] = vals
    series = []
    for sid in order:
        ts = data[sid]
        T = len(ts)
        for expected in range(T):
            if expected not in ts:
                raise CorpusFormatError(
                    f"{path}: series {sid} has a gap at t={expected} (no imputation is done)"
                )
        series.append(np.array([ts[t] for t in range(T)], dtype=float))
    grades = None
    labels = None
    if metadata_path is not None:
        meta = load_metadata(metadata_path)
        grades = [meta.get(sid, (None, None))[0] for sid in order]
        labels = [meta.get(sid, (None, None))[1] for sid in order]
        if all(g is None for g in grades):
            grades = None
        if all(v is None for v in labels):
            labels = None
    return Corpus(
        series=series,
        residuals=[y.copy() for y in series],
        series_ids=order,
        grades=grades,
        labels=labels,
    )


def load_metadata(path) -> dict:
    """Read the sidecar metadata CSV: series_id -> (grade|None, mask|None)."""
    header, rows = _read_csv_rows(path)
    if header[:3] != ["series_id", "grade", "labels"]:
        raise CorpusFormatError(f"{path}: expected header series_id,grade,labels")
    out = {}
    for i, row in enumerate(rows):
        if len(row) < 3:
            raise CorpusFormatError(f"{path}: row {i + 2} has too few fields")
        sid, grade_s, labels_s = row[0], row[1], row[2]
        grade = int(grade_s) if grade_s != "" else None
        mask = None
        if labels_s != "":
            if set(labels_s) - {"0", "1"}:
                raise CorpusFormatError(f"{path}: labels for {sid} must be a 0/1 string")
            mask = np.array([int(c) for c in labels_s], dtype=np.int8)
        out[sid] = (grade, mask)
    return out


# ---------------------------------------------------------------------------
# basal-signal preprocessing
# ---------------------------------------------------------------------------


def moving_average_centered(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with the window truncated symmetrically.

    The effective window at index t spans t-r..t+r with
    r = min(window // 2, t, T-1-t), so interior points average over an odd,
    symmetric span and a linear trend passes through unchanged.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    y = x[:, None] if squeeze else x
    T = y.shape[0]
    r = window // 2
    cs = np.vstack([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)])
    t = np.arange(T)
    rt = np.minimum(r, np.minimum(t, T - 1 - t))
    sums = cs[t + rt + 1] - cs[t - rt]
    ma = sums / (2 * rt + 1)[:, None]
    return ma[:, 0] if squeeze else ma


def remove_basal(series: np.ndarray, window_minutes: int = 40) -> np.ndarray:
    """Subtract the slow baseline (centered moving average) from a series."""
    if window_minutes < 1:
        raise ShapeError("window_minutes must be a positive integer")
    y = np.asarray(series, dtype=float)
    T = y.shape[0]
    if T < window_minutes:
        raise SeriesTooShortError(
            f"series of length {T} is shorter than the {window_minutes}-minute window"
        )
    return y - moving_average_centered(y, window_minutes)


def preprocess_corpus(corpus: Corpus, window_minutes: int = 40) -> Corpus:
    """Return a corpus whose residuals have the basal signal removed.

    window_minutes=0 leaves residuals equal to the raw series (useful for
    synthetic data that is generated without a baseline).
    """
    if window_minutes == 0:
        resid = [y.copy() for y in corpus.series]
    else:
        resid = [remove_basal(y, window_minutes) for y in corpus.series]
    return Corpus(
        series=[y.copy() for y in corpus.series],
        residuals=resid,
        series_ids=list(corpus.series_ids),
        grades=None if corpus.grades is None else list(corpus.grades),
        labels=None if corpus.labels is None else list(corpus.labels),
    )


# ---------------------------------------------------------------------------
# array packing shared by checkpoints and archives
# ---------------------------------------------------------------------------

_DTYPE_BY_CODE = {0: "<f8", 1: "<i8", 2: "|i1"}


def _dtype_code(a: np.ndarray) -> int:
    if a.dtype == np.int8:
        return 2
    if a.dtype.kind == "f":
        return 0
    if a.dtype.kind == "i":
        return 1
    raise ShapeError(f"unsupported array dtype {a.dtype}")


def pack_arrays(arrays: dict) -> bytes:
    """Serialize named arrays, names sorted for deterministic bytes."""
    out = io.BytesIO()
    out.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        code = _dtype_code(a)
        a = a.astype(_DTYPE_BY_CODE[code], copy=False)
        nb = name.encode("utf-8")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(struct.pack("<BB", code, a.ndim))
        for dim in a.shape:
            out.write(struct.pack("<Q", dim))
        out.write(a.tobytes(order="C"))
    return out.getvalue()


def unpack_arrays(buf: bytes) -> dict:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointCorruptError("array block truncated")
        b = view[pos:pos + n]
        pos += n
        return b

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        dtype = np.dtype(_DTYPE_BY_CODE[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        a = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).copy()
        out[name] = a
    return out


def params_to_arrays(params: ModelParams) -> dict:
    return {
        "beta": params.beta,
        "phi": params.phi,
        "pi_g": params.pi_g,
        "words_A": np.stack([w.A for w in params.words]),
        "words_V": np.stack([w.V for w in params.words]),
        "words_omega": np.array([w.omega for w in params.words]),
    }


def params_from_arrays(d: dict) -> ModelParams:
    words = tuple(
        ArWord(A=d["words_A"][l], V=d["words_V"][l], omega=float(d["words_omega"][l]))
        for l in range(d["words_A"].shape[0])
    )
    return ModelParams(beta=d["beta"], phi=d["phi"], words=words, pi_g=d["pi_g"])


def states_to_arrays(states) -> dict:
    out = {}
    for n, st in enumerate(states):
        key = f"series{n:05d}"
        out[f"{key}_d"] = st.d
        out[f"{key}_z"] = st.z
        out[f"{key}_o"] = st.o
        out[f"{key}_pi_n"] = st.pi_n
        if st.lam is not None:
            out[f"{key}_lam"] = st.lam
    return out


def states_from_arrays(d: dict, n_series: int) -> list:
    states = []
    for n in range(n_series):
        key = f"series{n:05d}"
        states.append(
            SeriesState(
                d=d[f"{key}_d"],
                z=d[f"{key}_z"],
                o=d[f"{key}_o"],
                pi_n=d[f"{key}_pi_n"],
                lam=d.get(f"{key}_lam"),
            )
        )
    return states


def hyper_to_dict(hyper: Hyperparameters) -> dict:
    mniw = None
    if hyper.mniw_prior is not None:
        pr = hyper.mniw_prior
        mniw = {
            "M0": pr.M0.tolist(),
            "K0": pr.K0.tolist(),
            "S0": pr.S0.tolist(),
            "nu0": pr.nu0,
        }
    return {
        "D": hyper.D,
        "L": hyper.L,
        "gamma": hyper.gamma,
        "eta": hyper.eta,
        "alpha_g": hyper.alpha_g,
        "alpha_l": hyper.alpha_l,
        "kappa": hyper.kappa,
        "rho": hyper.rho,
        "p": hyper.p,
        "mniw": mniw,
    }


def hyper_from_dict(d: dict) -> Hyperparameters:
    mniw = None
    if d.get("mniw") is not None:
        md = d["mniw"]
        mniw = MniwPrior(
            M0=np.array(md["M0"], dtype=float),
            K0=np.array(md["K0"], dtype=float),
            S0=np.array(md["S0"], dtype=float),
            nu0=float(md["nu0"]),
        )
    return Hyperparameters(
        D=int(d["D"]),
        L=int(d.get("L", 15)),
        gamma=float(d.get("gamma", 10.0)),
        eta=float(d.get("eta", 10.0)),
        alpha_g=float(d.get("alpha_g", 10.0)),
        alpha_l=float(d.get("alpha_l", 10.0)),
        kappa=float(d.get("kappa", 25.0)),
        rho=float(d.get("rho", 20.0)),
        p=int(d.get("p", 1)),
        mniw_prior=mniw,
    )


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def _write_container(path, magic: bytes, version: int, sections: dict) -> None:
    body = io.BytesIO()
    body.write(struct.pack("<I", len(sections)))
    for name, payload in sections.items():
        nb = name.encode("utf-8")
        body.write(struct.pack("<H", len(nb)))
        body.write(nb)
        body.write(struct.pack("<Q", len(payload)))
        body.write(payload)
    blob = body.getvalue()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", version))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", zlib.crc32(blob)))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _read_container(path, magic: bytes) -> tuple:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(magic) + 16 or raw[: len(magic)] != magic:
        raise CheckpointCorruptError(f"{path}: not a recognized container")
    pos = len(magic)
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"{path}: schema version {version} is incompatible with {SCHEMA_VERSION}"
        )
    (blen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + blen + 4:
        raise CheckpointCorruptError(f"{path}: truncated container")
    blob = raw[pos:pos + blen]
    (crc,) = struct.unpack_from("<I", raw, pos + blen)
    if zlib.crc32(blob) != crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    bpos = 0
    (count,) = struct.unpack_from("<I", blob, bpos)
    bpos += 4
    sections = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, bpos)
        bpos += 2
        name = blob[bpos:bpos + nlen].decode("utf-8")
        bpos += nlen
        (plen,) = struct.unpack_from("<Q", blob, bpos)
        bpos += 8
        sections[name] = blob[bpos:bpos + plen]
        bpos += plen
    return version, sections


@dataclass
class Checkpoint:
    """A loaded chain checkpoint."""

    chain: ChainState
    hyper: Hyperparameters
    config: GibbsConfig
    meta: dict


def save_checkpoint(path, chain: ChainState, hyper: Hyperparameters, config: GibbsConfig) -> None:
    """Persist the full chain state; the write is atomic (tmp + rename)."""
    meta = {
        "schema_version": SCHEMA_VERSION,
        "iteration": chain.iteration,
        "rng_state": chain.rng.bit_generator.state,
        "hyper": hyper_to_dict(hyper),
        "config": {
            "n_iter": config.n_iter,
            "burn_in": config.burn_in,
            "thin": config.thin,
            "n_chains": config.n_chains,
            "seed": config.seed,
            "supervised": config.supervised,
            "fixed_topics": config.fixed_topics is not None,
        },
        "n_series": len(chain.states),
        "has_stats": chain.stats is not None,
    }
    arrays = {}
    arrays.update(params_to_arrays(chain.params))
    arrays.update(states_to_arrays(chain.states))
    if chain.stats is not None:
        arrays["stats_m_dl"] = chain.stats.m_dl
        arrays["stats_c_bar"] = chain.stats.c_bar
        arrays["stats_trans"] = chain.stats.trans_counts
    sections = {
        "meta": json.dumps(meta, sort_keys=True).encode("utf-8"),
        "arrays": pack_arrays(arrays),
    }
    _write_container(path, CHECKPOINT_MAGIC, SCHEMA_VERSION, sections)


def load_checkpoint(path) -> Checkpoint:
    """Load a checkpoint written by save_checkpoint; verifies the CRC first."""
    _, sections = _read_container(path, CHECKPOINT_MAGIC)
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
        arrays = unpack_arrays(sections["arrays"])
        params = params_from_arrays(arrays)
        states = states_from_arrays(arrays, meta["n_series"])
    except (KeyError, ValueError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed checkpoint content") from exc
    stats = None
    if meta.get("has_stats"):
        stats = SuffStats(
            m_dl=arrays["stats_m_dl"],
            c_bar=arrays["stats_c_bar"],
            trans_counts=arrays["stats_trans"],
        )
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    hyper = hyper_from_dict(meta["hyper"])
    cd = meta["config"]
    config = GibbsConfig(
        n_iter=cd["n_iter"],
        burn_in=cd["burn_in"],
        thin=cd["thin"],
        n_chains=cd["n_chains"],
        seed=cd["seed"],
        supervised=cd["supervised"],
        fixed_topics=params if cd["fixed_topics"] else None,
    )
    chain = ChainState(
        params=params, states=states, rng=rng, iteration=meta["iteration"], stats=stats
    )
    return Checkpoint(chain=chain, hyper=hyper, config=config, meta=meta)


# ---------------------------------------------------------------------------
# sample archives (append-only record stream)
# ---------------------------------------------------------------------------

_RT_META = 1
_RT_SAMPLE = 2


class ArchiveWriter:
    """Appends CRC-framed sample records; safe against mid-write kills."""

    def __init__(self, path, meta: Optional[dict] = None, append: bool = False):
        self.path = path
        if append and os.path.exists(path):
            self._f = open(path, "ab")
        else:
            self._f = open(path, "wb")
            self._f.write(ARCHIVE_MAGIC)
            self._f.write(struct.pack("<I", SCHEMA_VERSION))
            self._write_record(_RT_META, json.dumps(meta or {}, sort_keys=True).encode("utf-8"))

    def _write_record(self, rtype: int, payload: bytes) -> None:
        self._f.write(struct.pack("<BQ", rtype, len(payload)))
        self._f.write(payload)
        self._f.write(struct.pack("<I", zlib.crc32(payload)))
        self._f.flush()

    def append_sample(self, iteration: int, params: ModelParams, states) -> None:
        arrays = {}
        arrays.update(params_to_arrays(params))
        arrays.update(states_to_arrays(states))
        payload = struct.pack("<Q", iteration) + pack_arrays(arrays)
        self._write_record(_RT_SAMPLE, payload)

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_archive(path, strict: bool = True) -> tuple:
    """Read (meta, samples) from an archive; samples are (iteration, params,
    states) tuples with n_series recovered from the stored array names.

    With strict=False a corrupt or truncated tail is dropped instead of
    raising, which is how resumption recovers from a kill mid-write.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:8] != ARCHIVE_MAGIC:
        raise CheckpointCorruptError(f"{path}: not a sample archive")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"{path}: schema version {version} is incompatible with {SCHEMA_VERSION}"
        )
    pos = 12
    meta = None
    samples = []
    while pos < len(raw):
        if pos + 9 > len(raw):
            if strict:
                raise CheckpointCorruptError(f"{path}: truncated record header")
            break
        rtype, plen = struct.unpack_from("<BQ", raw, pos)
        if pos + 9 + plen + 4 > len(raw):
            if strict:
                raise CheckpointCorruptError(f"{path}: truncated record payload")
            break
        payload = raw[pos + 9: pos + 9 + plen]
        (crc,) = struct.unpack_from("<I", raw, pos + 9 + plen)
        if zlib.crc32(payload) != crc:
            if strict:
                raise CheckpointCorruptError(f"{path}: record checksum mismatch")
            break
        pos += 9 + plen + 4
        if rtype == _RT_META:
            meta = json.loads(payload.decode("utf-8"))
        elif rtype == _RT_SAMPLE:
            (iteration,) = struct.unpack_from("<Q", payload, 0)
            arrays = unpack_arrays(payload[8:])
            n_series = len({k.split("_")[0] for k in arrays if k.startswith("series")})
            params = params_from_arrays(arrays)
            states = states_from_arrays(arrays, n_series)
            samples.append((int(iteration), params, states))
        else:
            if strict:
                raise CheckpointCorruptError(f"{path}: unknown record type {rtype}")
            break
    if meta is None:
        raise CheckpointCorruptError(f"{path}: archive has no header record")
    return meta, samples


def rewrite_archive_upto(path, max_iteration: int) -> int:
    """Drop samples past max_iteration (and any corrupt tail); returns the
    number of samples kept."""
    meta, samples = read_archive(path, strict=False)
    kept = [s for s in samples if s[0] <= max_iteration]
    tmp = f"{path}.tmp"
    writer = ArchiveWriter(tmp, meta=meta)
    for iteration, params, states in kept:
        writer.append_sample(iteration, params, states)
    writer.close()
    os.replace(tmp, path)
    return len(kept)


# ---------------------------------------------------------------------------
# simulation ground-truth files
# ---------------------------------------------------------------------------


def save_truth(path, params: ModelParams, states, meta: Optional[dict] = None) -> None:
    """Write simulation ground truth (parameters + latent paths) as JSON."""
    doc = dict(meta or {})
    doc["params"] = {
        "beta": params.beta.tolist(),
        "phi": params.phi.tolist(),
        "pi_g": params.pi_g.tolist(),
        "words": [
            {"A": w.A.tolist(), "V": w.V.tolist(), "omega": w.omega} for w in params.words
        ],
    }
    doc["series"] = [
        {
            "d": st.d.tolist(),
            "z": st.z.tolist(),
            "o": st.o.tolist(),
            "pi_n": st.pi_n.tolist(),
            "lam": None if st.lam is None else st.lam.tolist(),
        }
        for st in states
    ]
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_truth(path) -> tuple:
    """Read a ground-truth file; returns (params, states, meta)."""
    with open(path) as f:
        doc = json.load(f)
    pd = doc["params"]
    words = tuple(
        ArWord(A=np.array(w["A"]), V=np.array(w["V"]), omega=float(w["omega"]))
        for w in pd["words"]
    )
    params = ModelParams(
        beta=np.array(pd["beta"]),
        phi=np.array(pd["phi"]),
        words=words,
        pi_g=np.array(pd["pi_g"]),
    )
    states = [
        SeriesState(
            d=np.array(sd["d"], dtype=np.int64),
            z=np.array(sd["z"], dtype=np.int64),
            o=np.array(sd["o"], dtype=np.int8),
            pi_n=np.array(sd["pi_n"]),
            lam=None if sd.get("lam") is None else np.array(sd["lam"], dtype=np.int8),
        )
        for sd in doc["series"]
    ]
    meta = {k: v for k, v in doc.items() if k not in ("params", "series")}
    return params, states, meta
