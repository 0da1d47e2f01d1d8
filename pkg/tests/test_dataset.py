import gzip
import json

import numpy as np
import pytest

from banditmtd.dataset import (
    CveRecord, FeedParseError, GeneratorParams, UnsupportedSchemaError, binomial_band, exclusion_rate,
    feed_files, generate_instance, ingest_feeds, parse_nvd_feed, read_pool_csv, switching_cost_gen,
    synthetic_pool, write_pool_csv,
)
from banditmtd.game import save_instance, validate_instance


def test_v11_fixture(fixtures_dir):
    feed = parse_nvd_feed(fixtures_dir / "nvdcve-1.1-sample.json")
    assert feed[0] == CveRecord("CVE-2019-0708", 9.8, 5.9, 2019)
    # v3 missing -> v2 scores
    assert feed[1] == CveRecord("CVE-2014-0160", 5.0, 2.9, 2014)
    assert len(feed) == 2 and feed.skipped == 1


def test_v20_fixture(fixtures_dir):
    feed = parse_nvd_feed(fixtures_dir / "nvd-2.0-sample.json")
    assert list(feed) == [CveRecord("CVE-2021-44228", 10.0, 6.0, 2021)]
    assert feed.skipped == 1


def test_gzip_feed(tmp_path, fixtures_dir):
    raw = (fixtures_dir / "nvdcve-1.1-sample.json").read_bytes()
    gz = tmp_path / "feed.json.gz"
    gz.write_bytes(gzip.compress(raw))
    assert list(parse_nvd_feed(gz)) == list(parse_nvd_feed(fixtures_dir / "nvdcve-1.1-sample.json"))


def test_empty_feed(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps({"CVE_data_version": "4.0", "CVE_Items": []}))
    assert parse_nvd_feed(p) == []


def test_malformed_json_reports_offset(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"CVE_data_version": "4.0", "CVE_Items": [}')
    with pytest.raises(FeedParseError, match="byte 42"):
        parse_nvd_feed(p)


def test_unknown_schema(tmp_path):
    p = tmp_path / "odd.json"
    p.write_text(json.dumps({"CVE_data_version": "5.0", "CVE_Items": []}))
    with pytest.raises(UnsupportedSchemaError):
        parse_nvd_feed(p)
    p.write_text(json.dumps({"something": 1}))
    with pytest.raises(UnsupportedSchemaError):
        parse_nvd_feed(p)


def test_ingest_dedupes_and_round_trips(tmp_path, fixtures_dir):
    files = feed_files(fixtures_dir)
    pool = ingest_feeds(files + files)
    ids = [r.cve_id for r in pool]
    assert len(ids) == len(set(ids)) == 3
    out = tmp_path / "pool.csv"
    write_pool_csv(pool, out)
    assert read_pool_csv(out) == list(pool)
    assert read_pool_csv(fixtures_dir / "pool_sample.csv") == list(pool)


def test_missing_directory():
    with pytest.raises(FileNotFoundError):
        feed_files("/nonexistent/feeds")


def test_score_range_checked():
    with pytest.raises(ValueError):
        CveRecord("CVE-2020-0001", 11.0, 5.0)


# -- generators ------------------------------------------------------------

POOL = synthetic_pool(3000, np.random.default_rng(0))


def test_synthetic_pool_shape():
    bs = np.array([r.base_score for r in POOL])
    imp = np.array([r.impact_score for r in POOL])
    assert bs.min() >= 0 and bs.max() <= 10 and imp.max() <= 6
    assert all(r.cve_id.startswith("SYN-") for r in POOL)


def test_nvd_reward_scaling():
    pool = [CveRecord("CVE-2000-0001", 7.5, 10.0)] * 5
    inst = generate_instance(GeneratorParams(configs=(2, 2), attackers=(1, 1), vulns=(3, 3), seed=1), pool)
    ok = inst.success_mask
    assert np.all(inst.defender_reward[ok] == -1.0)
    assert np.all(inst.attacker_reward[ok] == 0.75)
    assert np.all(inst.defender_reward[~ok] == 0) and np.all(inst.attacker_reward[~ok] == 0)


def test_zero_sum_mirrors():
    inst = generate_instance(GeneratorParams(mode="zero", configs=(5, 5), attackers=(3, 3), vulns=(40, 40), seed=2))
    np.testing.assert_array_equal(inst.attacker_reward, -inst.defender_reward)


def test_general_sum_ranges():
    inst = generate_instance(GeneratorParams(mode="general", configs=(20, 20), attackers=(5, 5), vulns=(100, 100),
                                             seed=3))
    assert inst.defender_reward.size >= 10_000
    assert inst.defender_reward.min() >= -1 and inst.defender_reward.max() <= 0
    assert inst.attacker_reward.min() >= 0 and inst.attacker_reward.max() <= 1


def test_generation_reproducible(tmp_path):
    p = GeneratorParams(configs=(3, 6), attackers=(2, 4), vulns=(50, 80), seed=11)
    save_instance(generate_instance(p, POOL), tmp_path / "a.json")
    save_instance(generate_instance(p, POOL), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


@pytest.mark.parametrize("mode", ["nvd", "general", "zero"])
def test_generated_instances_valid(mode):
    for seed in range(5):
        p = GeneratorParams(mode=mode, configs=(2, 8), attackers=(1, 4), vulns=(5, 60), seed=seed)
        inst = generate_instance(p, POOL)
        assert validate_instance(inst).ok
        assert 2 <= inst.num_configs <= 8 and 1 <= inst.num_attacker_types <= 4
        assert inst.capabilities.any(axis=1).all()


def test_exclusion_defaults():
    assert GeneratorParams(mode="nvd").exclusion == 0.01
    assert GeneratorParams(mode="general").exclusion == 0.05
    with pytest.raises(ValueError):
        GeneratorParams(exclusion=1.0)
    with pytest.raises(ValueError):
        GeneratorParams(mode="bogus")


def test_switching_cost_modes():
    np.testing.assert_array_equal(switching_cost_gen(3, np.random.default_rng(), "zero"), np.zeros((3, 3)))
    s = switching_cost_gen(3, np.random.default_rng(), "constant:0.3")
    assert np.all(s[~np.eye(3, dtype=bool)] == 0.3) and np.all(np.diag(s) == 0)
    u = switching_cost_gen(6, np.random.default_rng(4), "uniform")
    np.testing.assert_array_equal(u, u.T)
    assert np.all(np.diag(u) == 0) and u.min() >= 0 and u.max() <= 1
    with pytest.raises(ValueError):
        switching_cost_gen(2, np.random.default_rng(), "fancy")


def test_binomial_band():
    assert binomial_band(0.25, 100) == pytest.approx(3 * np.sqrt(0.25 * 0.75 / 100))


def test_exclusion_rate_close_to_target():
    inst = generate_instance(GeneratorParams(mode="general", configs=(20, 20), vulns=(500, 500), seed=5))
    n = inst.vuln_mask.size
    assert abs(exclusion_rate(inst) - 0.05) <= binomial_band(0.05, n)
