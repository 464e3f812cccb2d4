"""Bandit environments.

All randomness is drawn from counter-based Philox streams keyed by
``(seed; t, i, purpose)``, so the arm set and reward noise seen by client ``i``
at round ``t`` do not depend on which algorithm is being simulated or on the
order in which rounds are queried.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, NumericDomainError, ProtocolMisuseError
from .glm import GlmFamily

# stream purposes
THETA, ARMS, REWARD = 0, 1, 2

MAX_PROJECTED_NORM = 1.0 / np.sqrt(2.0)


def substream(seed: int, t: int, i: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[int(t), int(i), int(purpose), 0]))


@dataclass
class RoundObservation:
    t: int
    i: int
    arms: np.ndarray
    expected: np.ndarray
    best: float
    label: int = -1

    def __post_init__(self):
        if len(self.arms) == 0:
            raise ProtocolMisuseError("empty arm set")


def _sphere(gen: np.random.Generator, k: int, d: int) -> np.ndarray:
    g = gen.standard_normal((k, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


class SyntheticEnv:
    """GLM world with K fresh unit-sphere arms per (t, i).

    theta* is drawn uniformly on the sphere of radius ``S_radius``.
    """

    def __init__(self, fam: GlmFamily, d: int, K: int, seed: int, noise_sigma: float | None = None):
        if d < 1 or K < 1:
            raise NumericDomainError("need d >= 1 and K >= 1")
        self.fam = fam
        self.d = int(d)
        self.K = int(K)
        self.seed = int(seed)
        self.theta_star = fam.S_radius * _sphere(substream(seed, 0, 0, THETA), 1, d)[0]
        # clipped symmetric Gaussian keeps the noise zero-mean and bounded by R_max
        self.noise_sigma = fam.R_max / 2.0 if noise_sigma is None else float(noise_sigma)

    @property
    def dim(self) -> int:
        return self.d

    def sample_arm_set(self, t: int, i: int) -> RoundObservation:
        arms = _sphere(substream(self.seed, t, i, ARMS), self.K, self.d)
        expected = self.fam.mean(arms @ self.theta_star)
        expected = np.atleast_1d(np.asarray(expected, dtype=float))
        return RoundObservation(t, i, arms, expected, float(expected.max()))

    def reward(self, obs: RoundObservation, index: int) -> float:
        if not 0 <= index < len(obs.arms):
            raise ProtocolMisuseError(f"arm index {index} outside arm set of size {len(obs.arms)}")
        gen = substream(self.seed, obs.t, obs.i, REWARD)
        if self.fam.link_kind == "logistic":
            return 1.0 if gen.random() < obs.expected[index] else 0.0
        eta = float(np.clip(gen.standard_normal() * self.noise_sigma, -self.fam.R_max, self.fam.R_max))
        return float(obs.expected[index]) + eta

    def regret(self, obs: RoundObservation, index: int) -> float:
        return max(obs.best - float(obs.expected[index]), 0.0)


@dataclass
class DatasetEnv:
    """Classification corpus turned into a C-armed contextual bandit.

    Each round a class is drawn uniformly, then an instance uniformly from that
    class bucket. Arm ``a`` is the instance features placed in block ``a`` of a
    ``d_base * C`` vector; reward is 1 exactly when ``a`` is the true label.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int = 0
    buckets: list = field(init=False)
    checksum: str = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.num_classes < 2:
            raise DatasetError("a bandit needs at least 2 classes")
        self.buckets = []
        for c in range(self.num_classes):
            idx = np.flatnonzero(self.labels == c)
            if len(idx) == 0:
                raise DatasetError(f"class {c} has zero rows")
            self.buckets.append(idx)
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        self.checksum = h.hexdigest()

    @property
    def d_base(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.d_base * self.num_classes

    @property
    def K(self) -> int:
        return self.num_classes

    def sample_arm_set(self, t: int, i: int) -> RoundObservation:
        gen = substream(self.seed, t, i, ARMS)
        label = int(gen.integers(self.num_classes))
        bucket = self.buckets[label]
        x = self.features[bucket[int(gen.integers(len(bucket)))]]
        C, db = self.num_classes, self.d_base
        arms = np.zeros((C, C * db))
        for a in range(C):
            arms[a, a * db:(a + 1) * db] = x
        expected = np.zeros(C)
        expected[label] = 1.0
        return RoundObservation(t, i, arms, expected, 1.0, label)

    def reward(self, obs: RoundObservation, index: int) -> float:
        if not 0 <= index < len(obs.arms):
            raise ProtocolMisuseError(f"arm index {index} outside arm set of size {len(obs.arms)}")
        return 1.0 if index == obs.label else 0.0

    def regret(self, obs: RoundObservation, index: int) -> float:
        return 0.0 if index == obs.label else 1.0


def realize_reward(env, obs: RoundObservation, x) -> float:
    """Reward for playing context ``x``, which must be a row of the arm set."""
    x = np.asarray(x, dtype=float)
    hits = np.flatnonzero(np.all(obs.arms == x, axis=1))
    if len(hits) == 0:
        raise ProtocolMisuseError("chosen context is not in the current arm set")
    return env.reward(obs, int(hits[0]))


def instantaneous_regret(env, obs: RoundObservation, chosen_index: int) -> float:
    return env.regret(obs, chosen_index)


# ---------------------------------------------------------------- corpora


def _read_prepared(path: Path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot open corpus {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(header) != 4 or header[0] != "d_base" or header[2] != "classes":
            raise DatasetError(f"{path}:1: expected header 'd_base,<int>,classes,<int>'")
        try:
            d_base, classes = int(header[1]), int(header[3])
        except ValueError:
            raise DatasetError(f"{path}:1: non-integer header values") from None
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d_base + 2 or row[0] != "label":
                raise DatasetError(f"{path}:{lineno}: expected 'label,<int>,' followed by {d_base} features")
            try:
                lab = int(row[1])
                vec = [float(v) for v in row[2:]]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed number") from None
            if not 0 <= lab < classes:
                raise DatasetError(f"{path}:{lineno}: label {lab} outside [0, {classes})")
            if not all(np.isfinite(vec)):
                raise DatasetError(f"{path}:{lineno}: non-finite feature")
            labels.append(lab)
            feats.append(vec)
    if not feats:
        raise DatasetError(f"{path}: no data rows")
    return d_base, classes, np.array(feats), np.array(labels, dtype=int)


def load_dataset(path, d_base: int | None = None, seed: int = 0) -> DatasetEnv:
    """Load a prepared corpus (see :func:`prepare_corpus`) as a bandit environment."""
    file_d, classes, feats, labels = _read_prepared(Path(path))
    if d_base is not None and d_base != file_d:
        raise DatasetError(f"{path}: corpus has d_base={file_d}, config asks for {d_base}")
    norms = np.linalg.norm(feats, axis=1)
    if norms.max() > MAX_PROJECTED_NORM + 1e-9:
        feats = feats * (MAX_PROJECTED_NORM / norms.max())
    return DatasetEnv(feats, labels, classes, seed)


def _parse_raw(path: Path, label_col):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot open raw csv {path}: {exc}") from None
    with fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DatasetError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    if isinstance(label_col, str) and not label_col.lstrip("-").isdigit():
        if label_col not in header:
            raise DatasetError(f"{path}: label column {label_col!r} not in header")
        li = header.index(label_col)
    else:
        li = int(label_col) % len(header)
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        body.append([v.strip() for v in row])
    labels_raw = [r[li] for r in body]
    columns = []
    for j in range(len(header)):
        if j == li:
            continue
        col = [r[j] for r in body]
        try:
            columns.append(np.array([float(v) for v in col])[:, None])
        except ValueError:
            cats = sorted(set(col))
            onehot = np.zeros((len(col), len(cats)))
            pos = {c: k for k, c in enumerate(cats)}
            for r, v in enumerate(col):
                onehot[r, pos[v]] = 1.0
            columns.append(onehot)
    if not columns:
        raise DatasetError(f"{path}: no feature columns")
    return np.hstack(columns), labels_raw


def prepare_features(X, d_base: int, seed: int = 0):
    """Standardize, project on the top ``d_base`` principal directions, rescale.

    Principal directions come from an SVD of the standardized matrix; each
    direction's sign is fixed so its largest-magnitude loading is positive,
    which makes the output independent of LAPACK sign conventions. ``seed``
    only breaks ties when the corpus has fewer informative columns than
    ``d_base`` (the missing directions are filled with a seeded orthonormal
    complement).
    """
    X = np.asarray(X, dtype=float)
    if d_base < 1:
        raise DatasetError("d_base must be >= 1")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    _, _, vt = np.linalg.svd(Z, full_matrices=False)
    comps = vt[: min(d_base, vt.shape[0])]
    if comps.shape[0] < d_base:
        gen = np.random.Generator(np.random.Philox(key=int(seed)))
        extra = gen.standard_normal((d_base - comps.shape[0], Z.shape[1]))
        basis = np.vstack([comps, extra])
        q, _ = np.linalg.qr(basis.T)
        comps = q.T[:d_base]
        if comps.shape[0] < d_base:
            raise DatasetError(f"cannot project {Z.shape[1]} raw features onto d_base={d_base} directions")
    flip = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    flip[flip == 0] = 1.0
    comps = comps * flip[:, None]
    P = Z @ comps.T
    m = np.linalg.norm(P, axis=1).max()
    if m > 0:
        P = P * (MAX_PROJECTED_NORM / m)
    return P


def prepare_corpus(raw_path, label_col, d_base: int, seed: int = 0):
    """Raw CSV -> (features, integer labels, class names)."""
    X, labels_raw = _parse_raw(Path(raw_path), label_col)
    names = sorted(set(labels_raw))
    if len(names) < 2:
        raise DatasetError(f"{raw_path}: found {len(names)} class(es); a bandit needs at least 2 arms")
    pos = {n: k for k, n in enumerate(names)}
    labels = np.array([pos[v] for v in labels_raw], dtype=int)
    return prepare_features(X, d_base, seed), labels, names


def format_corpus(features, labels, num_classes: int) -> str:
    lines = [f"d_base,{features.shape[1]},classes,{num_classes}"]
    for lab, vec in zip(labels, features):
        lines.append(",".join(["label", str(int(lab))] + [format(float(v), ".12g") for v in vec]))
    return "\n".join(lines) + "\n"
