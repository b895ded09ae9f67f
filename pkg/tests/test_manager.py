import copy

import pytest

from decaymem.manager import ClusterIndex, UNCLUSTERED, apply_reinforcement, assign_cluster, persist
from decaymem.model import EngineConfig, IdFactory, Level, MemoryType, new_session
from decaymem.recognizer import CompletedEpisode, Extracted
from decaymem.store import HashEmbedder, MemoryStore

EMB = HashEmbedder()


def _setup(config, topics=(("dining", "restaurant meals and drink orders"),)):
    config.initial_topics = list(topics)
    ids = IdFactory()
    wm = new_session(config, ids)
    return wm, ids, MemoryStore(dim=256)


def _write(store, wm, ids, config, turn, facts=(), episode=None):
    store.begin(turn)
    out = persist([Extracted(f, MemoryType.FACT) for f in facts], episode, wm, store, EMB, config, ids, turn,
                  float(turn))
    store.commit()
    return out


def test_assign_cluster_floor_and_fallback():
    cfg = EngineConfig(initial_topics=[("dining", "restaurant meals drink orders")])
    ids = IdFactory()
    wm = new_session(cfg, ids)
    idx = ClusterIndex(EMB)
    assert assign_cluster(EMB.embed("restaurant drink orders"), wm, idx, cfg, 1, ids) == "c00000001"
    off = assign_cluster(EMB.embed("quantum chromodynamics lecture"), wm, idx, cfg, 1, ids)
    assert wm.clusters[off].name == UNCLUSTERED
    assert assign_cluster(EMB.embed("zebra stripes"), wm, idx, cfg, 1, ids) == off


def test_static_topics_take_best_match():
    cfg = EngineConfig(dynamic_topics=False, initial_topics=[("dining", "meals")])
    ids = IdFactory()
    wm = new_session(cfg, ids)
    assert assign_cluster(EMB.embed("quantum physics"), wm, ClusterIndex(EMB), cfg, 1, ids) == "c00000001"
    assert len(wm.clusters) == 1


def test_l2_only_mode_writes_no_episodes():
    cfg = EngineConfig.for_mode("M1")
    wm, ids, store = _setup(cfg)
    ep = CompletedEpisode("Next time ask first", (0, 3), False)
    got = _write(store, wm, ids, cfg, 3, ["Drink order: Lemonade"], ep)
    assert len(got) == 1 and store.count(Level.L3) == 0


def test_l3_only_mode_writes_no_facts():
    cfg = EngineConfig.for_mode("M2")
    wm, ids, store = _setup(cfg)
    got = _write(store, wm, ids, cfg, 3, ["Drink order: Lemonade"], CompletedEpisode("x", (0, 3), False))
    assert len(got) == 1 and store.count(Level.L2) == 0
    assert store.get(got[0]).complete and store.get(got[0]).linked_facts == []


def test_episode_links_span_facts_both_ways():
    cfg = EngineConfig(episode_length=2)
    wm, ids, store = _setup(cfg)
    (a,) = _write(store, wm, ids, cfg, 0, ["Drink order: Lemonade"])
    (old,) = _write(store, wm, ids, cfg, 1, ["Table by the window"])
    b, ep = _write(store, wm, ids, cfg, 2, ["Dessert: none"], CompletedEpisode("Offer lemonade", (1, 2), False))
    assert store.get(ep).linked_facts == [old, b]
    assert store.get(old).linked_episodes == [ep] and store.get(b).linked_episodes == [ep]
    assert store.get(a).linked_episodes == []
    assert len({old, b, ep}) == 3 and ids.counter > 5


def test_linking_off_writes_no_links():
    cfg = EngineConfig(episode_length=1, memory_linking=False)
    wm, ids, store = _setup(cfg)
    f, ep = _write(store, wm, ids, cfg, 0, ["Drink order: Lemonade"], CompletedEpisode("x", (0, 0), False))
    assert store.get(f).links == [] and store.get(ep).links == []


def test_reinforcement_exact_values_and_once_per_cluster():
    cfg = EngineConfig(episode_length=1)
    wm, ids, store = _setup(cfg)
    f1, f2, ep = _write(store, wm, ids, cfg, 0, ["Drink order: Lemonade", "Dessert: restaurant cake"],
                        CompletedEpisode("Offer drinks", (0, 0), False))
    cid = store.get(f1).cluster_id
    assert store.get(f2).cluster_id == cid
    store.begin(4)
    changed = apply_reinforcement([f1, f2, f1, "m99999999"], {f1: 0.9}, 4, cfg, store, wm)
    store.commit()
    assert changed == [f1, f2, cid, ep]
    m1 = store.get(f1)
    assert (m1.utility, m1.access_count, m1.last_access_turn, m1.reward) == (pytest.approx(0.6), 1, 4, 0.9)
    assert m1.access_frequency == pytest.approx(1 / 6)
    assert store.get(f2).reward is None
    c = wm.clusters[cid]
    assert (c.utility, c.access_count) == (pytest.approx(0.6), 1)
    e = store.get(ep)
    assert (e.utility, e.access_count, e.last_access_turn) == (pytest.approx(0.55), 1, 4)


def test_empty_credit_changes_nothing():
    cfg = EngineConfig(episode_length=1)
    wm, ids, store = _setup(cfg)
    _write(store, wm, ids, cfg, 0, ["Drink order: Lemonade"], CompletedEpisode("x", (0, 0), False))
    before = (copy.deepcopy([store.get(m) for m in store.ids()]), copy.deepcopy(wm.clusters))
    store.begin(1)
    assert apply_reinforcement([], {}, 1, cfg, store, wm) == []
    store.commit()
    assert ([store.get(m) for m in store.ids()], wm.clusters) == before


def test_utility_clamps_at_upper_bound():
    cfg = EngineConfig(reinforcement_delta=0.3)
    wm, ids, store = _setup(cfg)
    (f,) = _write(store, wm, ids, cfg, 0, ["fact"])
    for t in range(1, 4):
        store.begin(t)
        apply_reinforcement([f], {}, t, cfg, store, wm)
        store.commit()
    assert store.get(f).utility == 0.95
