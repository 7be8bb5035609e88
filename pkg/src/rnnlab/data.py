"""Piano-roll dataset ingestion, the chunk/pad protocol, and a synthetic
long-dependency corpus generator.

On-disk format: JSON with top-level keys "train"/"valid"/"test", each a list
of sequences; a sequence is a list of frames; a frame is a sorted list of
integer note indices in [0, 88) (0-based after subtracting MIDI offset 21,
i.e. A0). A documented conversion step (not part of this package) produces
these files from the published corpora.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ContractError, DataError
from .model import N_NOTES, SequenceBatch

SPLITS = ("train", "valid", "test")

Sequence = List[List[int]]  # list of frames; frame = sorted note indices


@dataclass
class PianoRollDataset:
    train: List[Sequence]
    valid: List[Sequence]
    test: List[Sequence]

    def split(self, name: str) -> List[Sequence]:
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}")
        return getattr(self, name)


def _validate_split(name, sequences):
    if not isinstance(sequences, list):
        raise DataError(f"split {name!r} must be a list of sequences")
    for si, seq in enumerate(sequences):
        if not isinstance(seq, list):
            raise DataError(f"{name}[{si}] is not a list of frames")
        for fi, frame in enumerate(seq):
            if not isinstance(frame, list):
                raise DataError(f"{name}[{si}][{fi}] is not a list of notes")
            for note in frame:
                if not isinstance(note, int) or not 0 <= note < N_NOTES:
                    raise DataError(
                        f"{name}[{si}][{fi}]: note {note!r} outside [0, {N_NOTES})")


def load(path) -> PianoRollDataset:
    """Parse and validate a dataset JSON file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed dataset JSON {path}: {exc}")
    if not isinstance(raw, dict) or set(raw) != set(SPLITS):
        raise DataError(f"dataset must have exactly the keys {SPLITS}")
    for name in SPLITS:
        _validate_split(name, raw[name])
    return PianoRollDataset(train=raw["train"], valid=raw["valid"],
                            test=raw["test"])


def save(dataset: PianoRollDataset, path) -> None:
    with open(path, "w") as fh:
        json.dump({s: dataset.split(s) for s in SPLITS}, fh)


def manifest(dataset: PianoRollDataset) -> dict:
    """Reproducibility record: per-split sequence/frame counts and note range."""
    out = {}
    lo, hi = N_NOTES, -1
    for name in SPLITS:
        seqs = dataset.split(name)
        frames = sum(len(seq) for seq in seqs)
        out[name] = {"sequences": len(seqs), "frames": frames}
        for seq in seqs:
            for frame in seq:
                for note in frame:
                    lo = min(lo, note)
                    hi = max(hi, note)
    out["note_range"] = [lo, hi] if hi >= 0 else None
    return out


def to_array(seq: Sequence) -> np.ndarray:
    """Binary [T, 88] array from a note-list sequence."""
    arr = np.zeros((len(seq), N_NOTES))
    for t, frame in enumerate(seq):
        arr[t, frame] = 1.0
    return arr


@dataclass
class Chunk:
    frames: np.ndarray  # [chunk_len, 88]
    pad_prefix: int


@dataclass
class ChunkedDataset:
    train: List[Chunk]
    valid: List[Chunk]
    test: List[np.ndarray]  # original-length sequences, untouched
    chunk_len: int


def _chunk_sequence(arr: np.ndarray, chunk_len: int) -> List[Chunk]:
    chunks = []
    for start in range(0, len(arr), chunk_len):
        window = arr[start:start + chunk_len]
        pad = chunk_len - len(window)
        if pad:
            window = np.concatenate(
                [np.zeros((pad, arr.shape[1])), window], axis=0)
        chunks.append(Chunk(frames=window, pad_prefix=pad))
    return chunks


def chunk(dataset: PianoRollDataset, chunk_len: int = 100) -> ChunkedDataset:
    """Split train/valid sequences into consecutive windows of exactly
    chunk_len frames, zero-padding short windows at the front. Test sequences
    pass through at their original lengths."""
    if chunk_len < 1:
        raise ContractError("chunk_len must be >= 1")
    train, valid = [], []
    for out, name in ((train, "train"), (valid, "valid")):
        for seq in dataset.split(name):
            if seq:
                out.extend(_chunk_sequence(to_array(seq), chunk_len))
    test = [to_array(seq) for seq in dataset.test if seq]
    return ChunkedDataset(train=train, valid=valid, test=test,
                          chunk_len=chunk_len)


def batch_from_chunks(chunks: List[Chunk]) -> SequenceBatch:
    return SequenceBatch.stack([(c.frames, c.pad_prefix) for c in chunks])


def eval_batches(chunked: ChunkedDataset) -> List[SequenceBatch]:
    """One single-sequence batch per unsplit test sequence."""
    return [SequenceBatch.single(arr) for arr in chunked.test]


# Synthetic corpus: chord triads with a deterministic repeat of the chord seen
# motif_gap steps earlier, plus independent Bernoulli noise notes on a
# disjoint index range. The optimal predictor copies the chord from
# t - motif_gap and predicts the noise rate elsewhere.
_CHORD_ROOT_MAX = 48          # chord notes occupy [0, 55)
NOISE_NOTE_LO = 60            # noise notes occupy [60, 88)


def chord_notes(root: int) -> List[int]:
    return [root, root + 4, root + 7]


def synthesize(seed: int, n_sequences: int, T: int, motif_gap: int,
               noise_rate: float = 0.05) -> PianoRollDataset:
    """Deterministic synthetic piano-roll corpus with a memory-length of
    motif_gap, split 60/20/20."""
    if motif_gap >= T:
        raise ContractError("motif_gap must be < T")
    if motif_gap < 1:
        raise ContractError("motif_gap must be >= 1")
    rng = np.random.default_rng(seed)
    noise_idx = np.arange(NOISE_NOTE_LO, N_NOTES)
    sequences = []
    for _ in range(n_sequences):
        roots = np.empty(T, dtype=np.int64)
        roots[:motif_gap] = rng.integers(0, _CHORD_ROOT_MAX, size=motif_gap)
        for t in range(motif_gap, T):
            roots[t] = roots[t - motif_gap]
        seq = []
        for t in range(T):
            notes = set(chord_notes(int(roots[t])))
            hits = noise_idx[rng.random(noise_idx.size) < noise_rate]
            notes.update(int(i) for i in hits)
            seq.append(sorted(notes))
        sequences.append(seq)
    n_train = round(0.6 * n_sequences)
    n_valid = round(0.2 * n_sequences)
    return PianoRollDataset(train=sequences[:n_train],
                            valid=sequences[n_train:n_train + n_valid],
                            test=sequences[n_train + n_valid:])


def noise_entropy_per_frame(noise_rate: float) -> float:
    """Expected CE per frame of the copy-oracle predictor: the Bernoulli
    entropy of the noise rate, summed over the noise-note positions."""
    q = noise_rate
    h = -(q * np.log(q) + (1.0 - q) * np.log(1.0 - q))
    return float((N_NOTES - NOISE_NOTE_LO) * h)
