"""Interaction data, hypergraph construction and the group-overlap matrix.

Canonical on-disk layout (UTF-8, LF line endings) inside a dataset directory::

    user_train.tsv      user_id<TAB>item_id
    user_test.tsv       user_id<TAB>item_id          (one line per user)
    group_train.tsv     group_id<TAB>item_id
    group_test.tsv      group_id<TAB>item_id         (one line per group)
    members.tsv         group_id<TAB>user_id,user_id,...
    user_negatives.tsv  user_id<TAB>item_id item_id ...   (optional)
    group_negatives.tsv group_id<TAB>item_id item_id ...  (optional)

Vertices of the hypergraph are numbered users first, then items:
user ``u`` is vertex ``u`` and item ``i`` is vertex ``num_users + i``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

CANONICAL_FILES = {
    "user_train": "user_train.tsv",
    "user_test": "user_test.tsv",
    "group_train": "group_train.tsv",
    "group_test": "group_test.tsv",
    "members": "members.tsv",
    "user_negatives": "user_negatives.tsv",
    "group_negatives": "group_negatives.tsv",
}

AGREE_FILES = {
    "user_train": "userRatingTrain.txt",
    "user_test": "userRatingTest.txt",
    "group_train": "groupRatingTrain.txt",
    "group_test": "groupRatingTest.txt",
    "members": "groupMember.txt",
    "user_negatives": "userRatingNegative.txt",
    "group_negatives": "groupRatingNegative.txt",
}


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _pairs_array(pairs) -> np.ndarray:
    arr = np.asarray(sorted(set(map(tuple, pairs))), dtype=np.int64)
    return arr.reshape(-1, 2)


@dataclass(eq=False)
class InteractionDataset:
    num_users: int
    num_items: int
    num_groups: int
    user_item_train: np.ndarray  # (n, 2) sorted unique (user, item) pairs
    group_item_train: np.ndarray  # (n, 2) sorted unique (group, item) pairs
    user_item_test: list[tuple[int, int]]
    group_item_test: list[tuple[int, int]]
    group_members: dict[int, list[int]]
    eval_negatives_user: dict[int, list[int]] = field(default_factory=dict)
    eval_negatives_group: dict[int, list[int]] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, InteractionDataset):
            return NotImplemented
        return (
            (self.num_users, self.num_items, self.num_groups)
            == (other.num_users, other.num_items, other.num_groups)
            and np.array_equal(self.user_item_train, other.user_item_train)
            and np.array_equal(self.group_item_train, other.group_item_train)
            and self.user_item_test == other.user_item_test
            and self.group_item_test == other.group_item_test
            and self.group_members == other.group_members
            and self.eval_negatives_user == other.eval_negatives_user
            and self.eval_negatives_group == other.eval_negatives_group
        )

    def train_positives(self, task: str) -> list[set[int]]:
        """Per-entity training item sets for ``task`` ('user' or 'group')."""
        pairs, n = self._task_pairs(task)
        out: list[set[int]] = [set() for _ in range(n)]
        for e, i in pairs:
            out[e].add(int(i))
        return out

    def train_matrix(self, task: str) -> sp.csr_matrix:
        """Binary entity x item training matrix (R^U or R^G)."""
        pairs, n = self._task_pairs(task)
        data = np.ones(len(pairs))
        return sp.csr_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, self.num_items))

    def test_cases(self, task: str) -> list[tuple[int, int]]:
        return self.user_item_test if task == "user" else self.group_item_test

    def eval_negatives(self, task: str) -> dict[int, list[int]]:
        return self.eval_negatives_user if task == "user" else self.eval_negatives_group

    def _task_pairs(self, task):
        if task == "user":
            return self.user_item_train, self.num_users
        if task == "group":
            return self.group_item_train, self.num_groups
        raise ValueError(f"unknown task {task!r}")

    def validate(self) -> None:
        """Check every dataset invariant; raise DatasetError on the first violation."""
        for name, pairs, n in (
            ("user_item_train", self.user_item_train, self.num_users),
            ("group_item_train", self.group_item_train, self.num_groups),
        ):
            if len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= n or pairs[:, 1].max() >= self.num_items):
                raise DatasetError(f"{name} references an id outside the declared range")
        for g in range(self.num_groups):
            members = self.group_members.get(g)
            if not members:
                raise DatasetError(f"group {g} has no members")
            if len(set(members)) != len(members):
                raise DatasetError(f"group {g} lists a member twice")
            if min(members) < 0 or max(members) >= self.num_users:
                raise DatasetError(f"group {g} has a member outside the user range")
        if set(self.group_members) - set(range(self.num_groups)):
            raise DatasetError("members file references a group outside the declared range")
        for task in ("user", "group"):
            positives = self.train_positives(task)
            n = len(positives)
            seen = set()
            for e, i in self.test_cases(task):
                if not (0 <= e < n and 0 <= i < self.num_items):
                    raise DatasetError(f"{task} test pair ({e}, {i}) outside the declared range")
                if e in seen:
                    raise DatasetError(f"duplicate {task} test entry for entity {e}")
                seen.add(e)
                if i in positives[e]:
                    raise DatasetError(f"{task} test pair ({e}, {i}) also appears in training")
            held_out = dict(self.test_cases(task))
            for e, negs in self.eval_negatives(task).items():
                if not 0 <= e < n:
                    raise DatasetError(f"{task} negatives reference entity {e} outside the range")
                bad = [i for i in negs if i in positives[e] or i == held_out.get(e) or not 0 <= i < self.num_items]
                if bad:
                    raise DatasetError(f"{task} negatives for entity {e} contain positive or invalid item {bad[0]}")


# --------------------------------------------------------------------------- #
# Loading and saving
# --------------------------------------------------------------------------- #

_SEP = re.compile(r"[\t ,]+")


def _int_tokens(text, path, lineno):
    try:
        return [int(tok) for tok in _SEP.split(text.strip()) if tok]
    except ValueError:
        raise DatasetError(f"non-integer token in {text.strip()!r}", path, lineno) from None


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                yield lineno, raw.rstrip("\n")


def read_interactions(path, agree=False) -> list[tuple[int, int]]:
    """Read ``entity<TAB>item`` lines. AGREE files may carry extra columns."""
    pairs = []
    for lineno, line in _read_lines(path):
        toks = _int_tokens(line, path, lineno)
        if len(toks) < 2 or (len(toks) != 2 and not agree):
            raise DatasetError("expected 'entity<TAB>item'", path, lineno)
        if toks[0] < 0 or toks[1] < 0:
            raise DatasetError("negative id", path, lineno)
        pairs.append((toks[0], toks[1]))
    return pairs


def read_members(path) -> dict[int, list[int]]:
    members: dict[int, list[int]] = {}
    for lineno, line in _read_lines(path):
        head, sep, rest = line.strip().partition("\t")
        if not sep:
            head, _, rest = line.strip().partition(" ")
        toks = _int_tokens(head, path, lineno) + _int_tokens(rest, path, lineno)
        if len(toks) < 2:
            raise DatasetError("group without members", path, lineno)
        g, users = toks[0], toks[1:]
        if min(toks) < 0:
            raise DatasetError("negative id", path, lineno)
        if g in members:
            raise DatasetError(f"group {g} listed twice", path, lineno)
        if len(set(users)) != len(users):
            raise DatasetError(f"group {g} lists a member twice", path, lineno)
        members[g] = users
    return members


def read_negatives(path, agree=False) -> dict[int, list[int]]:
    """Read negative candidate lists. AGREE rows start with ``(entity,item)``."""
    negatives: dict[int, list[int]] = {}
    for lineno, line in _read_lines(path):
        if agree:
            m = re.match(r"\s*\((\d+)\s*,\s*(\d+)\)\s*(.*)$", line)
            if not m:
                raise DatasetError("expected '(entity,item) neg neg ...'", path, lineno)
            e = int(m.group(1))
            negs = _int_tokens(m.group(3), path, lineno)
        else:
            head, sep, rest = line.partition("\t")
            if not sep:
                raise DatasetError("expected 'entity<TAB>item item ...'", path, lineno)
            head_toks = _int_tokens(head, path, lineno)
            if len(head_toks) != 1:
                raise DatasetError("expected a single entity id before the tab", path, lineno)
            e = head_toks[0]
            negs = _int_tokens(rest, path, lineno)
        if e in negatives:
            raise DatasetError(f"duplicate negatives entry for entity {e}", path, lineno)
        if min([e, *negs]) < 0:
            raise DatasetError("negative id", path, lineno)
        negatives[e] = negs
    return negatives


def _check_unique_tests(pairs, path):
    seen = set()
    for lineno, (e, _) in enumerate(pairs, start=1):
        if e in seen:
            raise DatasetError(f"duplicate test entry for entity {e}", path, lineno)
        seen.add(e)


def load_dataset(train_paths, test_paths, member_path, negatives_paths=(None, None), *,
                 agree=False, num_users=None, num_items=None, num_groups=None, validate=True) -> InteractionDataset:
    """Load a dataset from explicit file paths.

    ``train_paths``, ``test_paths`` and ``negatives_paths`` are ``(user, group)``
    pairs; a negatives path may be ``None``. Entity counts are the maximum id
    seen in any file plus one unless declared explicitly, in which case larger
    ids are a load error. ``validate=False`` skips the invariant checks, for
    sparse-id files that are densified before use.
    """
    ui_train = read_interactions(train_paths[0], agree)
    gi_train = read_interactions(train_paths[1], agree)
    ui_test = read_interactions(test_paths[0], agree)
    gi_test = read_interactions(test_paths[1], agree)
    _check_unique_tests(ui_test, test_paths[0])
    _check_unique_tests(gi_test, test_paths[1])
    members = read_members(member_path)
    neg_u = read_negatives(negatives_paths[0], agree) if negatives_paths[0] else {}
    neg_g = read_negatives(negatives_paths[1], agree) if negatives_paths[1] else {}

    seen_users = [u for u, _ in ui_train + ui_test] + [u for us in members.values() for u in us] + list(neg_u)
    seen_groups = [g for g, _ in gi_train + gi_test] + list(members) + list(neg_g)
    seen_items = [i for _, i in ui_train + ui_test + gi_train + gi_test]
    seen_items += [i for negs in (*neg_u.values(), *neg_g.values()) for i in negs]

    def count(seen, declared, what):
        top = max(seen, default=-1) + 1
        if declared is None:
            return top
        if top > declared:
            raise DatasetError(f"{what} id {top - 1} outside declared range [0, {declared})")
        return declared

    ds = InteractionDataset(
        num_users=count(seen_users, num_users, "user"),
        num_items=count(seen_items, num_items, "item"),
        num_groups=count(seen_groups, num_groups, "group"),
        user_item_train=_pairs_array(ui_train),
        group_item_train=_pairs_array(gi_train),
        user_item_test=ui_test,
        group_item_test=gi_test,
        group_members={g: members[g] for g in sorted(members)},
        eval_negatives_user=neg_u,
        eval_negatives_group=neg_g,
    )
    if validate:
        ds.validate()
    return ds


def dataset_paths(dataset_dir, layout="canonical") -> dict[str, Path | None]:
    names = CANONICAL_FILES if layout == "canonical" else AGREE_FILES
    root = Path(dataset_dir)
    paths: dict[str, Path | None] = {}
    for key, name in names.items():
        p = root / name
        if key.endswith("negatives") and not p.exists():
            paths[key] = None
        elif not p.exists():
            raise DatasetError(f"missing dataset file {p}")
        else:
            paths[key] = p
    return paths


def load_dataset_dir(dataset_dir, layout="canonical", validate=True) -> InteractionDataset:
    """Load a dataset directory in the canonical or AGREE-style release layout."""
    if layout not in ("canonical", "agree"):
        raise ValueError(f"unknown layout {layout!r}")
    p = dataset_paths(dataset_dir, layout)
    return load_dataset(
        (p["user_train"], p["group_train"]),
        (p["user_test"], p["group_test"]),
        p["members"],
        (p["user_negatives"], p["group_negatives"]),
        agree=layout == "agree",
        validate=validate,
    )


def save_dataset(ds: InteractionDataset, dataset_dir) -> None:
    """Write ``ds`` in the canonical layout."""
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)

    def write(name, lines):
        with open(root / CANONICAL_FILES[name], "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(line + "\n" for line in lines)

    write("user_train", (f"{u}\t{i}" for u, i in ds.user_item_train))
    write("group_train", (f"{g}\t{i}" for g, i in ds.group_item_train))
    write("user_test", (f"{u}\t{i}" for u, i in ds.user_item_test))
    write("group_test", (f"{g}\t{i}" for g, i in ds.group_item_test))
    write("members", (f"{g}\t{','.join(map(str, us))}" for g, us in ds.group_members.items()))
    for name, negs in (("user_negatives", ds.eval_negatives_user), ("group_negatives", ds.eval_negatives_group)):
        path = root / CANONICAL_FILES[name]
        if negs:
            write(name, (f"{e}\t{' '.join(map(str, items))}" for e, items in negs.items()))
        elif path.exists():
            path.unlink()


def densify(ds: InteractionDataset) -> tuple[InteractionDataset, dict[str, dict[int, int]]]:
    """Relabel ids to dense ranges in order of first appearance.

    Returns the relabelled dataset and ``{"user"|"item"|"group": {old: new}}``.
    """
    maps: dict[str, dict[int, int]] = {"user": {}, "item": {}, "group": {}}

    def m(kind, x):
        table = maps[kind]
        if x not in table:
            table[x] = len(table)
        return table[x]

    for g, us in ds.group_members.items():
        m("group", g)
        for u in us:
            m("user", u)
    ui_train = [(m("user", u), m("item", i)) for u, i in ds.user_item_train]
    gi_train = [(m("group", g), m("item", i)) for g, i in ds.group_item_train]
    ui_test = [(m("user", u), m("item", i)) for u, i in ds.user_item_test]
    gi_test = [(m("group", g), m("item", i)) for g, i in ds.group_item_test]
    neg_u = {m("user", u): [m("item", i) for i in negs] for u, negs in ds.eval_negatives_user.items()}
    neg_g = {m("group", g): [m("item", i) for i in negs] for g, negs in ds.eval_negatives_group.items()}
    out = InteractionDataset(
        num_users=len(maps["user"]),
        num_items=len(maps["item"]),
        num_groups=len(maps["group"]),
        user_item_train=_pairs_array(ui_train),
        group_item_train=_pairs_array(gi_train),
        user_item_test=ui_test,
        group_item_test=gi_test,
        group_members={m("group", g): [m("user", u) for u in us] for g, us in ds.group_members.items()},
        eval_negatives_user=neg_u,
        eval_negatives_group=neg_g,
    )
    out.validate()
    return out, maps


def save_id_map(maps, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for kind in ("user", "item", "group"):
            for old, new in maps[kind].items():
                fh.write(f"{kind}\t{old}\t{new}\n")


def file_checksums(dataset_dir, layout="canonical") -> dict[str, str]:
    out = {}
    for key, path in dataset_paths(dataset_dir, layout).items():
        if path is not None:
            out[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


# --------------------------------------------------------------------------- #
# Hypergraph
# --------------------------------------------------------------------------- #


@dataclass(eq=False)
class Hypergraph:
    """One hyperedge per group over vertices users + items.

    Edge ``g`` holds its members ``users[g]`` followed by its training items
    ``items[g]``. Membership lists ``user_edges`` / ``item_edges`` are the exact
    inverse (E_v).
    """

    num_users: int
    num_items: int
    users: list[np.ndarray]
    items: list[np.ndarray]
    user_edges: list[np.ndarray] = field(init=False)
    item_edges: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        ue: list[list[int]] = [[] for _ in range(self.num_users)]
        ie: list[list[int]] = [[] for _ in range(self.num_items)]
        for g, (us, its) in enumerate(zip(self.users, self.items)):
            for u in us:
                ue[u].append(g)
            for i in its:
                ie[i].append(g)
        self.user_edges = [np.asarray(x, dtype=np.int64) for x in ue]
        self.item_edges = [np.asarray(x, dtype=np.int64) for x in ie]

    @property
    def num_groups(self) -> int:
        return len(self.users)

    @property
    def num_vertices(self) -> int:
        return self.num_users + self.num_items

    def edge_vertices(self, g) -> np.ndarray:
        """Vertex ids of edge ``g``: users first, then offset item ids."""
        return np.concatenate([self.users[g], self.items[g] + self.num_users])

    def vertex_edges(self, v) -> np.ndarray:
        if v < self.num_users:
            return self.user_edges[v]
        return self.item_edges[v - self.num_users]

    def user_sizes(self) -> np.ndarray:
        return np.array([len(x) for x in self.users], dtype=np.int64)

    def item_sizes(self) -> np.ndarray:
        return np.array([len(x) for x in self.items], dtype=np.int64)

    def edge_sizes(self) -> np.ndarray:
        return self.user_sizes() + self.item_sizes()

    def incidence(self) -> sp.csr_matrix:
        """Binary group x vertex incidence matrix (H transposed)."""
        rows, cols = [], []
        for g in range(self.num_groups):
            v = self.edge_vertices(g)
            rows.append(np.full(len(v), g))
            cols.append(v)
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.num_groups, self.num_vertices))


def build_hypergraph(ds: InteractionDataset) -> Hypergraph:
    items: list[list[int]] = [[] for _ in range(ds.num_groups)]
    for g, i in ds.group_item_train:
        items[g].append(int(i))
    return Hypergraph(
        num_users=ds.num_users,
        num_items=ds.num_items,
        users=[np.asarray(ds.group_members[g], dtype=np.int64) for g in range(ds.num_groups)],
        items=[np.asarray(sorted(x), dtype=np.int64) for x in items],
    )


def group_overlap(hg: Hypergraph) -> np.ndarray:
    """Dense Jaccard overlap between every pair of hyperedge vertex sets.

    Two empty edges get 0.
    """
    H = hg.incidence()
    inter = (H @ H.T).toarray()
    sizes = np.asarray(H.sum(axis=1)).ravel()
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(union > 0, inter / union, 0.0)
    return w


@dataclass(frozen=True)
class Stats:
    num_users: int
    num_items: int
    num_groups: int
    user_item_interactions: int
    group_item_interactions: int
    avg_group_size: float


def dataset_stats(ds: InteractionDataset) -> Stats:
    ui = {tuple(p) for p in ds.user_item_train.tolist()} | set(ds.user_item_test)
    gi = {tuple(p) for p in ds.group_item_train.tolist()} | set(ds.group_item_test)
    sizes = [len(ds.group_members[g]) for g in range(ds.num_groups)]
    return Stats(
        num_users=ds.num_users,
        num_items=ds.num_items,
        num_groups=ds.num_groups,
        user_item_interactions=len(ui),
        group_item_interactions=len(gi),
        avg_group_size=float(np.mean(sizes)) if sizes else 0.0,
    )
