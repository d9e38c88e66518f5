import math

import numpy as np
import pytest

from eds.cluster import ClusterModel
from eds.errors import ManifestError, PoolError
from eds.sampler import (
    SampledSubset,
    ScenarioDensity,
    density_estimate,
    eds_sample,
    kl_to_uniform,
    load_subset,
    random_sample,
    save_subset,
)

from conftest import make_manifest, make_record


def model_with_sizes(sizes):
    """ClusterModel stub with the given member counts; geometry is irrelevant."""
    assignments = {}
    for ci, size in enumerate(sizes):
        for j in range(size):
            assignments[f"c{ci}_{j:03d}"] = ci
    return ClusterModel(
        k=len(sizes),
        centroids=np.zeros((len(sizes), 2)),
        assignments=assignments,
        inertia=0.0,
    )


def per_cluster_counts(subset, k):
    counts = [0] * k
    for rec_id, prov in subset.provenance.items():
        counts[prov] += 1
    return counts


# --- eds_sample ---

def test_eds_two_even_clusters():
    subset = eds_sample(model_with_sizes([5, 5]), 2, seed=0)
    assert len(subset) == 4
    assert per_cluster_counts(subset, 2) == [2, 2]


def test_eds_refill_from_largest():
    subset = eds_sample(model_with_sizes([1, 7]), 3, seed=1)
    assert len(subset) == 6
    assert per_cluster_counts(subset, 2) == [1, 5]


def test_eds_budget_identity_fuzz(rng):
    for _ in range(300):
        k = int(rng.integers(1, 9))
        sizes = [int(rng.integers(0, 15)) for _ in range(k)]
        n = int(rng.integers(1, 12))
        subset = eds_sample(model_with_sizes(sizes), n, seed=int(rng.integers(1 << 30)))
        pool = sum(sizes)
        assert len(subset) == min(n * k, pool)
        counts = per_cluster_counts(subset, k)
        assert all(c <= s for c, s in zip(counts, sizes))
        assert len(set(subset.ids)) == len(subset.ids)


def test_eds_paper_budget():
    sizes = [12] * 300
    subset = eds_sample(model_with_sizes(sizes), 10, seed=0)
    assert len(subset) == 3000


def test_eds_deterministic_and_seed_sensitive():
    model = model_with_sizes([30, 30, 30])
    a = eds_sample(model, 5, seed=7)
    b = eds_sample(model, 5, seed=7)
    c = eds_sample(model, 5, seed=8)
    assert a.ids == b.ids
    assert a.ids != c.ids


# --- random_sample ---

def scenario_manifest(weathers):
    recs = [make_record(f"r{i}", weather=w) for i, w in enumerate(weathers)]
    return make_manifest(recs)


def test_random_whole_pool():
    m = scenario_manifest(["sunny"] * 6)
    subset = random_sample(m, 6, seed=0)
    assert sorted(subset.ids) == sorted(r.id for r in m.records)


def test_random_exceeds_pool():
    m = scenario_manifest(["sunny"] * 4)
    with pytest.raises(PoolError):
        random_sample(m, 5, seed=0)


def test_random_seeds_differ():
    m = scenario_manifest(["sunny"] * 200)
    a = random_sample(m, 50, seed=0)
    b = random_sample(m, 50, seed=1)
    assert a.ids != b.ids
    assert random_sample(m, 50, seed=0).ids == a.ids


def test_random_split_pool():
    recs = [make_record(f"u{i}") for i in range(5)]
    recs += [make_record(f"l{i}", split="labeled-train") for i in range(5)]
    m = make_manifest(recs)
    subset = random_sample(m, 5, seed=0, splits=("labeled-train",))
    assert all(i.startswith("l") for i in subset.ids)


# --- density_estimate ---

def subset_of(m, ids):
    return SampledSubset(
        ids=tuple(ids), provenance={i: "random" for i in ids},
        seed=0, target_size=len(ids), method="random",
    )


def test_density_even_split():
    m = scenario_manifest(["sunny", "sunny", "rainy", "rainy"])
    d = density_estimate(subset_of(m, [r.id for r in m.records]), m, "weather")
    assert d.density == {"sunny": 0.5, "rainy": 0.5}


def test_density_single_value():
    m = scenario_manifest(["foggy", "foggy"])
    d = density_estimate(subset_of(m, [r.id for r in m.records]), m, "weather")
    assert d.density == {"foggy": 1.0}


def test_density_three_one():
    m = scenario_manifest(["sunny", "sunny", "sunny", "rainy"])
    d = density_estimate(subset_of(m, [r.id for r in m.records]), m, "weather")
    assert d.density == {"sunny": 0.75, "rainy": 0.25}


def test_density_support_from_manifest_not_subset():
    m = scenario_manifest(["sunny", "sunny", "rainy", "foggy"])
    d = density_estimate(subset_of(m, ["r0", "r1"]), m, "weather")
    assert d.density == {"foggy": 0.0, "rainy": 0.0, "sunny": 1.0}


def test_density_unresolvable_id():
    m = scenario_manifest(["sunny"])
    with pytest.raises(ManifestError, match="ghost"):
        density_estimate(subset_of(m, ["ghost"]), m, "weather")


# --- kl_to_uniform ---

def test_kl_uniform_is_zero():
    d = ScenarioDensity("weather", {"sunny": 0.5, "rainy": 0.5})
    assert kl_to_uniform(d) == 0.0


def test_kl_point_mass_is_ln2():
    d = ScenarioDensity("weather", {"sunny": 1.0, "rainy": 0.0})
    assert abs(kl_to_uniform(d) - math.log(2)) < 1e-12


def test_kl_three_quarters():
    d = ScenarioDensity("weather", {"sunny": 0.75, "rainy": 0.25})
    expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    got = kl_to_uniform(d)
    assert abs(got - expected) < 1e-12
    assert abs(got - 0.1308) < 5e-5


def test_kl_nonnegative_fuzz(rng):
    for _ in range(300):
        n = int(rng.integers(2, 7))
        raw = rng.random(n) + 1e-12
        p = raw / raw.sum()
        p[-1] = 1.0 - p[:-1].sum()
        d = ScenarioDensity("weather", {f"v{i}": float(p[i]) for i in range(n)})
        assert kl_to_uniform(d) >= -1e-12


def test_kl_zero_iff_uniform():
    for n in (2, 3, 5):
        uniform = ScenarioDensity("weather", {f"v{i}": 1.0 / n for i in range(n)})
        assert abs(kl_to_uniform(uniform)) < 1e-12
    skew = ScenarioDensity("weather", {"a": 0.51, "b": 0.49})
    assert kl_to_uniform(skew) > 0.0


def test_density_must_sum_to_one():
    with pytest.raises(ValueError, match="sum"):
        ScenarioDensity("weather", {"sunny": 0.7, "rainy": 0.2})


# --- subset file io ---

def manifest_for_model(sizes):
    recs = []
    for ci, size in enumerate(sizes):
        recs.extend(make_record(f"c{ci}_{j:03d}") for j in range(size))
    return make_manifest(recs)


def test_subset_round_trip(tmp_path):
    subset = eds_sample(model_with_sizes([4, 6]), 3, seed=5)
    m = manifest_for_model([4, 6])
    p = tmp_path / "s.subset"
    save_subset(subset, m, p)
    loaded = load_subset(p)
    assert loaded == subset


def test_subset_lines_carry_record_fields(tmp_path):
    import json

    subset = eds_sample(model_with_sizes([4, 6]), 3, seed=5)
    m = manifest_for_model([4, 6])
    p = tmp_path / "s.subset"
    save_subset(subset, m, p)
    lines = p.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["format"] == "eds-subset/1"
    assert header["classes"] == list(m.class_names)
    row = json.loads(lines[1])
    for key in ("id", "image", "weather", "time", "road_type", "split", "provenance"):
        assert key in row


def test_subset_file_determinism(tmp_path):
    subset = eds_sample(model_with_sizes([4, 6]), 3, seed=5)
    m = manifest_for_model([4, 6])
    a, b = tmp_path / "a.subset", tmp_path / "b.subset"
    save_subset(subset, m, a)
    save_subset(subset, m, b)
    assert a.read_bytes() == b.read_bytes()


def test_subset_bad_header(tmp_path):
    p = tmp_path / "s.subset"
    p.write_text('{"format":"nope"}\n', encoding="utf-8")
    with pytest.raises(ManifestError, match="format"):
        load_subset(p)


# --- the KL trend, reduced scale (full scale lives in the acceptance suite) ---

def test_kl_trend_median_small():
    from eds.embed import encode_images
    from eds.cluster import kmeans_fit
    from eds.synth import SynthSpec, generate

    spec = SynthSpec(corpus_size=300, seed=21)
    corpus = generate(spec)
    m = corpus.manifest
    embs = encode_images(corpus.images, [r.id for r in m.records], grid=4)
    kl_eds, kl_rand = [], []
    for seed in range(10):
        model = kmeans_fit(embs, 10, seed=seed, restarts=2)
        sub_e = eds_sample(model, 10, seed=seed)
        sub_r = random_sample(m, 100, seed=seed)
        kl_eds.append(kl_to_uniform(density_estimate(sub_e, m, "weather")))
        kl_rand.append(kl_to_uniform(density_estimate(sub_r, m, "weather")))
    assert float(np.median(kl_eds)) < float(np.median(kl_rand))
