import json
from pathlib import Path

import pytest

from style_toolkit.errors import ArtifactNotFoundError, StoreIntegrityError
from style_toolkit.store import ArtifactKey, ArtifactStore


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path / "store")


def key(kind="stats", fp="abc123", label="test"):
    return ArtifactKey(kind, fp, label)


class TestPutGet:
    def test_round_trip(self, store):
        receipt = store.put(key(), b"payload-bytes")
        assert not receipt.already_existed
        assert store.get(key()) == b"payload-bytes"

    def test_duplicate_put_same_bytes_is_idempotent(self, store):
        first = store.put(key(), b"payload")
        second = store.put(key(), b"payload")
        assert second.already_existed
        assert second.created_at == first.created_at
        assert len(store.list("stats")) == 1

    def test_duplicate_put_different_bytes_is_integrity_error(self, store):
        store.put(key(), b"payload")
        with pytest.raises(StoreIntegrityError):
            store.put(key(), b"different")

    def test_missing_key_not_found(self, store):
        with pytest.raises(ArtifactNotFoundError):
            store.get(key(fp="nothere"))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ArtifactKey("model", "abc")

    def test_path_separators_rejected(self):
        with pytest.raises(ValueError):
            ArtifactKey("stats", "../evil")


class TestListing:
    def test_each_kind_lists_its_own(self, store):
        store.put(key("stats", "s1"), b"a")
        store.put(key("mapper", "m1", label="mohawk"), b"b")
        assert [k.fingerprint for k in store.list("stats")] == ["s1"]
        assert [k.fingerprint for k in store.list("mapper")] == ["m1"]
        assert store.list("mapper")[0].label == "mohawk"
        assert store.list("trace") == []

    def test_exists(self, store):
        store.put(key("image", "i1"), b"x")
        assert store.exists("image", "i1")
        assert not store.exists("image", "i2")


class TestDurability:
    def test_layout_on_disk(self, store):
        store.put(key("stats", "deadbeef"), b"x")
        assert (store.root / "stats" / "deadbeef.bin").exists()
        assert (store.root / "index.json").exists()

    def test_index_replay_reconstructs_state(self, store):
        store.put(key("stats", "s1"), b"alpha")
        store.put(key("trace", "t1"), b"beta")
        reopened = ArtifactStore(store.root)
        assert reopened.get(key("stats", "s1")) == b"alpha"
        assert reopened.get(key("trace", "t1")) == b"beta"

    def test_partial_write_is_invisible_after_replay(self, store):
        store.put(key("stats", "s1"), b"alpha")
        # Simulate a crash mid-write: a temp file exists but was never renamed
        # and never indexed.
        orphan = store.root / "stats" / "s2.bin.tmp"
        orphan.write_bytes(b"partial")
        reopened = ArtifactStore(store.root)
        assert not reopened.exists("stats", "s2")
        assert reopened.get(key("stats", "s1")) == b"alpha"

    def test_index_entry_without_artifact_is_dropped(self, store):
        store.put(key("stats", "s1"), b"alpha")
        store.put(key("stats", "s2"), b"beta")
        (store.root / "stats" / "s2.bin").unlink()
        reopened = ArtifactStore(store.root)
        assert not reopened.exists("stats", "s2")
        assert reopened.exists("stats", "s1")

    def test_index_is_valid_json_with_records(self, store):
        store.put(key("stats", "s1", label="run-1"), b"alpha")
        raw = json.loads(Path(store.root / "index.json").read_text())
        assert raw["records"][0]["fingerprint"] == "s1"
        assert raw["records"][0]["label"] == "run-1"
        assert raw["records"][0]["size"] == 5


class TestMutableRecords:
    def test_job_records_can_be_overwritten(self, store):
        job_key = ArtifactKey("job", "job-1")
        store.put_mutable(job_key, b'{"state": "queued"}')
        store.put_mutable(job_key, b'{"state": "done"}')
        assert store.get(job_key) == b'{"state": "done"}'
