"""Synthetic datasets: tiny random instances and a topic-structured generator.

``mafengwo_like`` reproduces the published Mafengwo table sizes (5275 users,
1513 items, 995 groups, ~39.8k user-item and ~3.6k group-item interactions,
mean group size ~7.2) with planted topic structure so that a model has
something to learn. It is a stand-in for pipeline checks, not the real data.
"""

from __future__ import annotations

import numpy as np

from .data import InteractionDataset, _pairs_array


def random_tiny(seed=0, num_users=5, num_items=4, num_groups=3, max_members=3, p_item=0.5) -> InteractionDataset:
    """Small random dataset without test cases, for gradient and oracle checks."""
    rng = np.random.default_rng(seed)
    members = {}
    for g in range(num_groups):
        k = int(rng.integers(1, max_members + 1))
        members[g] = sorted(rng.choice(num_users, size=k, replace=False).tolist())
    ui = [(u, i) for u in range(num_users) for i in range(num_items) if rng.random() < p_item]
    gi = [(g, i) for g in range(num_groups) for i in range(num_items) if rng.random() < p_item]
    # keep at least one positive per task so both ranking terms are live
    ui = ui or [(0, 0)]
    gi = gi or [(0, 0)]
    return InteractionDataset(
        num_users=num_users, num_items=num_items, num_groups=num_groups,
        user_item_train=_pairs_array(ui), group_item_train=_pairs_array(gi),
        user_item_test=[], group_item_test=[], group_members=members,
    )


def _zipf_weights(n, a, rng):
    w = 1.0 / np.arange(1, n + 1) ** a
    rng.shuffle(w)
    return w / w.sum()


def topic_dataset(num_users, num_items, num_groups, *, num_topics=30, mean_group_size=7.19,
                  user_interactions=39761, group_interactions=3595, min_group_items=3,
                  topic_purity=0.85, eval_negatives=100, zipf=1.0, seed=0, return_topics=False):
    """Generate a dataset whose users, groups and items share latent topics.

    Every group and every user with at least two items gets one held-out test
    item; ``eval_negatives`` candidates are drawn for each test case. With
    ``return_topics`` the latent ``(user, item, group)`` topic arrays are
    returned alongside the dataset.
    """
    rng = np.random.default_rng(seed)
    item_topic = rng.integers(0, num_topics, size=num_items)
    topic_items = [np.flatnonzero(item_topic == t) for t in range(num_topics)]
    topic_weights = [_zipf_weights(len(ix), zipf, rng) for ix in topic_items]
    topic_pop = _zipf_weights(num_topics, 0.5, rng)
    user_topic = rng.choice(num_topics, size=num_users, p=topic_pop)
    topic_users = [np.flatnonzero(user_topic == t) for t in range(num_topics)]

    def draw_items(topic, k, exclude=()):
        chosen = set(exclude)
        out = []
        while len(out) < k:
            if rng.random() < topic_purity and len(topic_items[topic]):
                i = int(rng.choice(topic_items[topic], p=topic_weights[topic]))
            else:
                i = int(rng.integers(num_items))
            if i not in chosen:
                chosen.add(i)
                out.append(i)
        return out

    # groups
    members, group_topic = {}, np.empty(num_groups, dtype=np.int64)
    for g in range(num_groups):
        t = int(rng.choice(num_topics, p=topic_pop))
        while len(topic_users[t]) < 2:
            t = int(rng.choice(num_topics, p=topic_pop))
        group_topic[g] = t
        size = 2 + int(rng.poisson(max(mean_group_size - 2, 0)))
        pool_in = topic_users[t]
        k_in = min(len(pool_in), max(2, int(round(size * topic_purity))))
        chosen = set(rng.choice(pool_in, size=k_in, replace=False).tolist())
        while len(chosen) < size:
            chosen.add(int(rng.integers(num_users)))
        members[g] = sorted(chosen)

    extra = max(group_interactions - min_group_items * num_groups, 0)
    per_group = np.full(num_groups, min_group_items) + rng.multinomial(extra, np.ones(num_groups) / num_groups)
    group_items = {g: draw_items(int(group_topic[g]), int(per_group[g])) for g in range(num_groups)}

    # users: items from their own topic plus the items of their groups
    user_groups = [[] for _ in range(num_users)]
    for g, us in members.items():
        for u in us:
            user_groups[u].append(g)
    base = max(user_interactions / num_users, 2.0)
    user_items = {}
    for u in range(num_users):
        inherited = list(dict.fromkeys(i for g in user_groups[u] for i in group_items[g][:2]))
        k = max(2 - len(inherited), int(rng.poisson(base)) - len(inherited), 1)
        own = draw_items(int(user_topic[u]), k, exclude=inherited)
        user_items[u] = list(dict.fromkeys(inherited + own))

    def split(items_by_entity):
        train, test = [], []
        for e, items in items_by_entity.items():
            items = list(items)
            if len(items) >= 2:
                j = int(rng.integers(len(items)))
                test.append((e, items.pop(j)))
            train.extend((e, i) for i in items)
        return train, test

    ui_train, ui_test = split(user_items)
    gi_train, gi_test = split(group_items)

    def negatives(train, test, n_entities):
        pos = [set() for _ in range(n_entities)]
        for e, i in train + test:
            pos[e].add(i)
        out = {}
        for e, _ in test:
            pool = np.setdiff1d(np.arange(num_items), np.fromiter(pos[e], dtype=np.int64))
            out[e] = rng.choice(pool, size=min(eval_negatives, len(pool)), replace=False).tolist()
        return out

    ds = InteractionDataset(
        num_users=num_users, num_items=num_items, num_groups=num_groups,
        user_item_train=_pairs_array(ui_train), group_item_train=_pairs_array(gi_train),
        user_item_test=ui_test, group_item_test=gi_test, group_members=members,
        eval_negatives_user=negatives(ui_train, ui_test, num_users),
        eval_negatives_group=negatives(gi_train, gi_test, num_groups),
    )
    ds.validate()
    if return_topics:
        return ds, (user_topic, item_topic, group_topic)
    return ds


def mafengwo_like(seed=0, **overrides) -> InteractionDataset:
    kwargs = dict(num_users=5275, num_items=1513, num_groups=995, mean_group_size=7.19,
                  user_interactions=39761, group_interactions=3595, seed=seed)
    kwargs.update(overrides)
    return topic_dataset(**kwargs)
