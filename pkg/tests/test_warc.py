"""Tests for the WARC store."""

import threading

import pytest

from hostwise.core import burl
from hostwise.pipeline.fetch_data import FetchData, SpillBuffer
from hostwise.store.warc import (
    CorruptRecord,
    StoreFailed,
    WarcStore,
    build_record,
    iter_members,
    iterate,
)

HEADERS = [("Content-Type", "text/html"), ("Server", "test")]


def fetched(path: str, body: bytes, status: int = 200, truncated: bool = False) -> FetchData:
    buffer = SpillBuffer()
    buffer.append(body)
    return FetchData(
        url=burl.parse(f"http://a.test{path}"),
        body=buffer,
        status=status,
        headers=list(HEADERS),
        truncated=truncated,
    )


def write_store(directory, items, **kwargs) -> WarcStore:
    with WarcStore(directory, **kwargs) as store:
        for fd, digest, duplicate in items:
            store.store(fd, digest, duplicate)
    return store


class TestWarcStore:
    """Test suite for WarcStore."""

    def test_records_round_trip(self, tmp_path) -> None:
        store = write_store(
            tmp_path,
            [
                (fetched("/", b"<p>root</p>"), 0xABC, False),
                (fetched("/gone", b"nope", status=404), 0xDEF, False),
                (fetched("/copy", b"<p>root</p>"), 0xABC, True),
            ],
        )
        assert [p.name for p in store.files] == ["crawl-00000.warc.gz"]
        records = list(iterate(store.files[0]))
        assert [r.record_type for r in records] == ["warcinfo", "response", "response", "revisit"]

        root, gone, copy = records[1:]
        assert root.uri == "http://a.test/"
        assert root.status == 200
        assert root.body.endswith(b"<p>root</p>")
        assert ("Server", "test") in root.headers
        assert root.content_digest == 0xABC
        assert not root.is_duplicate
        assert root.record_id.startswith("<urn:uuid:")
        assert gone.status == 404
        assert copy.is_duplicate
        assert copy.content_digest == 0xABC
        assert store.records == 3

    def test_drop_policy(self, tmp_path) -> None:
        with WarcStore(tmp_path, duplicate_policy="drop") as store:
            assert store.store(fetched("/", b"x"), 1, False)
            assert not store.store(fetched("/again", b"x"), 1, True)
        assert store.dropped_duplicates == 1
        assert [r.record_type for r in iterate(store.files[0])] == ["warcinfo", "response"]

    def test_truncated_flag(self, tmp_path) -> None:
        store = write_store(tmp_path, [(fetched("/big", b"partial", truncated=True), 7, False)])
        (record,) = [r for r in iterate(store.files[0]) if r.record_type == "response"]
        assert record.truncated

    def test_rotation_and_serials(self, tmp_path) -> None:
        items = [(fetched(f"/page/{i}", b"body %d" % i), i, False) for i in range(3)]
        store = write_store(tmp_path, items, max_file_size=1)
        names = [p.name for p in store.files]
        assert names == ["crawl-00000.warc.gz", "crawl-00001.warc.gz", "crawl-00002.warc.gz"]
        for path in store.files:
            types = [r.record_type for r in iterate(path)]
            assert types == ["warcinfo", "response"]

        reopened = write_store(tmp_path, items[:1])
        assert reopened.files[0].name == "crawl-00003.warc.gz"

    def test_concurrent_producers(self, tmp_path) -> None:
        """Records from many threads arrive intact, in some order."""
        with WarcStore(tmp_path) as store:

            def produce(worker: int) -> None:
                for i in range(25):
                    store.store(fetched(f"/w{worker}/{i}", b"%d-%d" % (worker, i)), i, False)

            threads = [threading.Thread(target=produce, args=(w,)) for w in range(4)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        uris = {r.uri for r in iterate(store.files[0]) if r.record_type == "response"}
        assert uris == {f"http://a.test/w{w}/{i}" for w in range(4) for i in range(25)}

    def test_write_failure_is_reported_not_hung(self, tmp_path, monkeypatch) -> None:
        """A failing disk stops the flusher from writing but never blocks producers."""
        store = WarcStore(tmp_path, queue_size=2)

        def disk_full(data: bytes) -> None:
            raise OSError(28, "No space left on device")

        monkeypatch.setattr(store, "_write", disk_full)
        failures: list[StoreFailed] = []

        def produce() -> None:
            for i in range(5):
                try:
                    store.store(fetched(f"/{i}", b"body"), i, False)
                except StoreFailed:
                    pass
            try:
                store.close()
            except StoreFailed as e:
                failures.append(e)

        thread = threading.Thread(target=produce, daemon=True)
        thread.start()
        thread.join(timeout=5)
        assert not thread.is_alive()
        assert len(failures) == 1
        assert isinstance(failures[0].__cause__, OSError)
        assert store.records == 0
        with pytest.raises(StoreFailed):
            store.flush()

    def test_store_after_close(self, tmp_path) -> None:
        store = WarcStore(tmp_path)
        store.close()
        store.close()
        with pytest.raises(RuntimeError):
            store.store(fetched("/", b""), 0, False)


class TestIterate:
    def test_empty_file(self, tmp_path) -> None:
        path = tmp_path / "empty.warc.gz"
        path.write_bytes(b"")
        assert list(iterate(path)) == []

    def test_corrupt_member(self, tmp_path) -> None:
        bodies = [b"payload %d" % i * 20 for i in range(3)]
        members = [build_record(fetched(f"/{i}", body), i, False) for i, body in enumerate(bodies)]
        middle = len(members[0]) + len(members[1]) // 2
        data = bytearray(b"".join(members))
        for i in range(middle, middle + 8):
            data[i] ^= 0xFF
        path = tmp_path / "damaged.warc.gz"
        path.write_bytes(bytes(data))

        with pytest.raises(CorruptRecord) as info:
            list(iterate(path))
        assert info.value.offset == len(members[0])

        uris = [r.uri for r in iterate(path, skip_corrupt=True)]
        assert uris == ["http://a.test/0", "http://a.test/2"]

    def test_member_offsets(self) -> None:
        members = [build_record(fetched(f"/{i}", b"x"), i, False) for i in range(2)]
        offsets = [offset for offset, _ in iter_members(b"".join(members))]
        assert offsets == [0, len(members[0])]
