"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in
the pytest terminal summary. Run just this file with::

    pytest tests/test_acceptance.py -v
"""

import contextlib
import copy
import random
import re
import time

import numpy as np
from hypothesis import given, settings, strategies as st

from conftest import JUDGE_PARTIAL, fact_reply, make_session
from oracles import brute_force_topk, gate_oracle, retention_oracle
from decaymem.decay import entity_retention, reinforce, retention, retention_batch, stability
from decaymem.decayer import gate
from decaymem.harness.ablation import ablate
from decaymem.harness.scenario import load_scenario, run_scenario
from decaymem.harness.trace import trace_decay
from decaymem.model import EngineConfig, Level, MemoryType, SemanticMemory
from decaymem.store import HashEmbedder, MemoryStore, replay

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(number, title):
    start = time.perf_counter()
    try:
        yield
    except BaseException as e:
        line = f"FAIL AC{number:02d} {title} ({type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''})"
        RESULTS.append(line)
        print(line)
        raise
    line = f"PASS AC{number:02d} {title} ({time.perf_counter() - start:.2f}s)"
    RESULTS.append(line)
    print(line)


# 1 --------------------------------------------------------------------------------


def test_ac01_retention_exactness():
    with criterion(1, "retention formula matches scalar oracle on 1000 tuples within 1e-12, < 1 s"):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        n = rng.integers(0, 400, 1000)
        u = rng.uniform(0.05, 0.95, 1000)
        f = rng.uniform(0.0, 1.0, 1000)
        eps = rng.uniform(1e-3, 1.0, 1000)
        temp = rng.uniform(0.5, 100.0, 1000)
        worst = 0.0
        for i in range(1000):
            want = retention_oracle(int(n[i]), u[i], f[i], eps[i], temp[i])
            got = retention(int(n[i]), stability(u[i], f[i], eps[i], temp[i]))
            worst = max(worst, abs(got - want))
            batch = retention_batch(np.array([n[i]], float), np.array([u[i]]), np.array([f[i]]), eps[i], temp[i])
            worst = max(worst, abs(float(batch[0]) - want))
        assert worst <= 1e-12, worst
        assert time.perf_counter() - start < 1.0


# 2 --------------------------------------------------------------------------------


def test_ac02_temperature_curves():
    with criterion(2, "mean retention increasing in T at t=50/100/150; T=1 < 0.05 and T=50 > 0.2 at t=100, < 5 s"):
        start = time.perf_counter()
        temps = [1, 3, 5, 10, 20, 50]
        table = trace_decay(temps, turns=150, schedule=[20])
        for t in (50, 100, 150):
            means = [table.mean_retention(T, t) for T in temps]
            assert all(a < b for a, b in zip(means, means[1:])), (t, means)
        assert table.mean_retention(1, 100) < 0.05
        assert table.mean_retention(50, 100) > 0.2
        assert time.perf_counter() - start < 5.0


# 3 --------------------------------------------------------------------------------

_schedules = st.sets(st.integers(1, 59), max_size=12)


@settings(max_examples=200, deadline=None)
@given(accesses=_schedules, utility=st.floats(0.05, 0.95), temp=st.sampled_from([1.0, 3.0, 10.0, 50.0]))
def _sawtooth_property(accesses, utility, temp):
    cfg = EngineConfig(decay_temperature=temp)
    mem = SemanticMemory("m1", "x", "fact", 0, 0.0, "c1", utility=utility)
    prev = None
    for t in range(0, 61):
        accessed = t in accesses
        if accessed:
            reinforce(mem, t, cfg.reinforcement_delta)
        r = entity_retention(mem, t, cfg)
        if accessed or t == 0:
            assert r == 1.0
        else:
            assert r < prev
        prev = r


def test_ac03_sawtooth():
    with criterion(3, "access gives retention exactly 1.0 then strict decay until next access (property)"):
        _sawtooth_property()
        # the population kernel behind the traces shows the same shape
        table = trace_decay([3.0], turns=60, schedule=[10, 30], utilities=[0.5] * 61,
                            sample_times=range(61))
        series = [r[4] for r in table.rows if r[2] == "e0000"]
        for t in (0, 10, 30):
            assert series[t] == 1.0
        for t in range(1, 61):
            if t not in (10, 30):
                assert series[t] < series[t - 1]


# 4 --------------------------------------------------------------------------------


def test_ac04_gate_truth_table():
    with criterion(4, "gate truth table over 16 combinations matches contract, < 1 s"):
        start = time.perf_counter()
        cases = 0
        for round_ in (1, 2):
            for empty in (True, False):
                for judge in (True, False):
                    for emb in (True, False):
                        d = gate(round_, [] if empty else ["m1"], judge, emb)
                        assert (d.triggered, d.reason) == gate_oracle(round_, empty, judge, emb)
                        assert gate(round_ + 3, [] if empty else ["m1"], judge, emb).triggered == (
                            d.triggered if round_ == 2 else gate_oracle(2, empty, judge, emb)[0])
                        cases += 1
        assert cases == 16
        assert time.perf_counter() - start < 1.0


# 5, 6 ------------------------------------------------------------------------------


def _adversarial_session(seed, cfg, llm_curation):
    rng = random.Random(seed)

    def planner(system, user):
        queries = [{"id": f"q{rng.randint(0, 9)}", "text": rng.choice(["", "drink", "food", "q", "x y", user[:30]]),
                    "query_type": rng.choice(["semantic", "episodic"])} for _ in range(rng.randint(0, 25))]
        ids = ["q0"] + [q["id"] for q in queries] + ["zz"]
        edges = [{"from": rng.choice(ids), "to": rng.choice(ids),
                  "relationship": rng.choice(["depends_on", "refines", "complements"])}
                 for _ in range(rng.randint(0, 30))]
        return {"queries": queries, "edges": edges}

    counter = iter(range(10**9))

    def extractor(system, user):
        return fact_reply(*[f"fact {next(counter)} topic {rng.randint(0, 40)}" for _ in range(rng.randint(0, 4))],
                          memory_type=rng.choice(["fact", "rule", "preference"]))

    def curator(system, user):
        ids = re.findall(r'"id": "(m\d+)"', user)
        return {"add": ids, "deleted": rng.sample(ids, rng.randint(0, len(ids) // 3)) if ids else []}

    def judge(system, user):
        return dict(JUDGE_PARTIAL, uncertainty_score=rng.random(),
                    sufficiency=rng.choice(["partial", "insufficient", "sufficient"]))

    def assessor(system, user):
        ids = re.findall(r"\[(m\d+)\]", user)
        return {"used_memory_ids": rng.sample(ids, rng.randint(0, len(ids))) if ids else []}

    def proposer(system, user):
        return {"topics": [{"name": f"topic {rng.randint(0, 6)}", "summary": "s"}] if rng.random() < 0.3 else []}

    s, _ = make_session(cfg, llm_curation=llm_curation, planner={"default": planner},
                        semantic_extractor={"default": extractor}, curator={"default": curator},
                        judge={"default": judge}, utility_assessor={"default": assessor},
                        proposal_generator={"default": proposer})
    return s


def test_ac05_buffer_and_window_bounds():
    with criterion(5, "randomized 500-turn adversarial sessions keep |B| <= B and |H| <= K after every phase"):
        for seed, llm_curation in ((1, True), (2, False)):
            cfg = EngineConfig(buffer_capacity=6, window_k=4, episode_length=3)
            s = _adversarial_session(seed, cfg, llm_curation)
            checks = []

            def observe(phase, sess):
                assert len(sess.wm.buffer_items) <= cfg.buffer_capacity
                assert len(sess.wm.history) <= cfg.window_k
                sess.wm.check()
                checks.append(phase)

            s.observer = observe
            for t in range(500):
                s.step(f"turn {t} question about topic {t % 41}")
            assert checks.count("write") == 500 and checks.count("curation") > 0


def test_ac06_no_deletion():
    with criterion(6, "store id set only grows; every evicted buffer item stays retrievable by search"):
        cfg = EngineConfig(buffer_capacity=4, window_k=4, episode_length=2)
        s = _adversarial_session(7, cfg, True)
        emb = s.embedder
        seen: set[str] = set()
        evicted_total = 0
        before_read: list[str] = []

        def observe(phase, sess):
            nonlocal before_read
            if phase == "history":
                before_read = list(sess.wm.buffer_items)
            if phase == "read":
                before_read = [m for m in before_read if m not in sess.wm.buffer_items]

        s.observer = observe
        for t in range(150):
            s.step(f"turn {t} question about topic {t % 41}")
            ids = set(s.store.ids())
            assert seen <= ids
            seen = ids
            for mid in before_read:
                evicted_total += 1
                mem = s.store.get(mid)
                hits = [h for h, _ in s.store.search(emb.embed(mem.text), mem.level, 5)]
                assert mid in hits, (mid, hits)
        assert evicted_total > 0


# 7 --------------------------------------------------------------------------------


def test_ac07_rule_protection():
    with criterion(7, "lowest-retention rule item is never evicted while non-rule items are buffered"):
        counter = iter(range(10**9))

        def extractor(system, user):
            if "Always" in user:
                return fact_reply("Always answer in haiku form", memory_type="rule")
            return fact_reply(f"note {next(counter)} about lunch", f"note {next(counter)} about lunch")

        def assessor(system, user):
            return {"used_memory_ids": [mid for mid, text in re.findall(r"- \[(m\d+)\] (.*)", user)
                                        if "haiku" not in text]}

        cfg = EngineConfig(buffer_capacity=3, window_k=4, decay_temperature=1.0)
        s, _ = make_session(cfg, semantic_extractor={"default": extractor},
                            utility_assessor={"default": assessor})
        s.step("Always answer in haiku form")
        rule_id = next(m for m in s.store.ids() if s.store.get(m).memory_type is MemoryType.RULE)
        protected_checks = 0

        def observe(phase, sess):
            nonlocal protected_checks
            if phase not in ("curation", "read"):
                return
            items = [sess.store.get(m) for m in sess.wm.buffer_items]
            if rule_id in sess.wm.buffer_items and len(items) > 1:
                t = sess.turn_index
                r_rule = entity_retention(sess.store.get(rule_id), t, cfg)
                assert all(r_rule <= entity_retention(m, t, cfg) for m in items)
            if was_buffered[0]:
                assert rule_id in sess.wm.buffer_items
                protected_checks += 1
            was_buffered[0] = rule_id in sess.wm.buffer_items

        was_buffered = [False]
        s.observer = observe
        for t in range(40):
            s.step(f"lunch question {t}")
        assert rule_id in s.wm.buffer_items and protected_checks > 30
        assert s.store.get(rule_id).access_count == 0


# 8 --------------------------------------------------------------------------------


def test_ac08_retrieval_oracle():
    with criterion(8, "store top-k equals brute-force cosine sort on 1000 records over 100 queries"):
        emb = HashEmbedder(dim=64)
        store = MemoryStore(dim=64)
        rng = random.Random(11)
        words = [f"w{i}" for i in range(60)]
        rows = []
        for turn in range(10):
            store.begin(turn)
            mems, vecs = [], []
            for j in range(100):
                mid = f"m{turn * 100 + j:08d}"
                text = " ".join(rng.choices(words, k=rng.randint(1, 6)))
                mems.append(SemanticMemory(mid, text, "fact", turn, 0.0, "c1"))
                vecs.append(emb.embed(text))
                rows.append((mid, turn, [float(x) for x in vecs[-1]]))
            store.append(mems, vecs)
            store.commit()
        assert len(store) == 1000
        for _ in range(100):
            q = emb.embed(" ".join(rng.choices(words, k=rng.randint(1, 4))))
            k = rng.randint(1, 20)
            assert store.search(q, Level.L2, k) == brute_force_topk(rows, [float(x) for x in q], k)


# 9 --------------------------------------------------------------------------------


def test_ac09_end_to_end_scenarios():
    with criterion(9, "restaurant and false-belief probes carry the key facts and match their rubrics, < 10 s each"):
        for name, evidence, word in (
                ("restaurant", ["Drink order: Lemonade"], "Lemonade"),
                ("sallyanne", ["The skirt is in the pantry", "Jacob exited the attic"], "pantry")):
            start = time.perf_counter()
            rep = run_scenario(load_scenario(name))
            (probe,) = rep.probes
            prompt = rep.turns[probe.turn_index].prompt
            assert all(e in prompt for e in evidence), (name, probe.evidence_missing)
            assert probe.passed and word.lower() in probe.response.lower()
            assert time.perf_counter() - start < 10.0


# 10 -------------------------------------------------------------------------------


def test_ac10_structural_ablation():
    with criterion(10, "modes M1-M5 write exactly their enabled levels, symmetric links, tokens per query"):
        table = ablate(["M1", "M2", "M3", "M4", "M5"], [load_scenario("restaurant"), load_scenario("sallyanne")])
        for r in table.rows:
            assert r.structure_ok and r.links_symmetric
            assert r.tokens_per_query > 0
            if r.mode in ("M1", "M3"):
                assert r.l3_records == 0 and r.l2_records > 0
            if r.mode == "M2":
                assert r.l2_records == 0 and r.l3_records > 0
            if r.mode in ("M4", "M5"):
                assert r.l2_records > 0 and r.l3_records > 0
        m5 = [rep for rep in table.reports if rep.mode == "M5"]
        assert any(rec.payload.links for rep in m5 for rec in rep.store.records())
        assert all(isinstance(v["tokens_per_query"], float) for v in table.by_mode().values())


# 11 -------------------------------------------------------------------------------


def test_ac11_episode_cadence():
    with criterion(11, "20 turn pairs give 5 four-turn episodes at ep=4 and 10 at ep=2"):
        for ep, expected in ((4, 5), (2, 10)):
            s, _ = make_session(EngineConfig(episode_length=ep))
            for t in range(20):
                s.step(f"exchange {t}")
            eps = [r.payload for r in s.store.records(Level.L3)]
            assert len(eps) == expected and all(e.complete for e in eps)
            assert all(e.raw_span[1] - e.raw_span[0] + 1 == ep for e in eps)
            assert sorted(e.raw_span for e in eps) == [(i, i + ep - 1) for i in range(0, 20, ep)]


# 12 -------------------------------------------------------------------------------


def test_ac12_determinism_and_replay(tmp_path):
    with criterion(12, "two scripted runs give byte-identical turn reports; journal replay rebuilds the store"):
        for name in ("restaurant", "sallyanne"):
            runs = []
            for i in range(2):
                path = tmp_path / f"{name}{i}"
                rep = run_scenario(load_scenario(name), store=MemoryStore(path, dim=256), span_tokens=150)
                runs.append(([t.to_json() for t in rep.turns], path))
            assert runs[0][0] == runs[1][0]
            src = runs[0][1]
            for f in ("records.jsonl", "updates.jsonl", "journal.jsonl"):
                assert (src / f).read_bytes() == (runs[1][1] / f).read_bytes()
            dst = tmp_path / f"{name}-replayed"
            replay(src, dst, dim=256)
            for f in ("records.jsonl", "updates.jsonl", "journal.jsonl"):
                assert (src / f).read_bytes() == (dst / f).read_bytes()


# 13 -------------------------------------------------------------------------------


def test_ac13_conservative_credit():
    with criterion(13, "a turn credited with nothing changes no utility or access statistics"):
        crediting = [True]

        def assessor(system, user):
            return {"used_memory_ids": re.findall(r"\[(m\d+)\]", user) if crediting[0] else []}

        s, _ = make_session(
            EngineConfig(episode_length=2),
            semantic_extractor={"replies": {1: fact_reply("Drink order: Lemonade"), 2: fact_reply("Seat: window")},
                                "default": {"semantic_memories": []}},
            utility_assessor={"default": assessor},
            proposal_generator={"default": {"topics": [{"name": "dining", "summary": "drinks"}]}})
        for q in ("lemonade please", "window seat", "my drink?"):
            s.step(q)
        crediting[0] = False

        def stats():
            mems = {m: tuple(getattr(s.store.get(m), k) for k in
                             ("utility", "access_frequency", "access_count", "last_access_turn"))
                    for m in s.store.ids()}
            clusters = {c: (x.utility, x.access_frequency, x.access_count, x.last_access_turn)
                        for c, x in s.wm.clusters.items()}
            return mems, clusters

        assert any(s.store.get(m).access_count for m in s.store.ids())  # credit did flow earlier
        before = copy.deepcopy(stats())
        assert s.wm.buffer_items
        rep = s.step("what was my drink again?")
        assert rep.credited_count == 0 and rep.retrieved_count >= 0
        mems, clusters = stats()
        assert {m: v for m, v in mems.items() if m in before[0]} == before[0]
        assert all(v[2] == 0 for m, v in mems.items() if m not in before[0])
        assert clusters == before[1]
