import numpy as np
import pytest

from compsearch.blobio import BlobFormatError, pack_blob_file
from compsearch.index import (
    IndexConfig,
    IndexError_,
    build_index,
    deserialize,
    exact_search,
    fit_pca,
    kmeans,
    load_vectors,
    recall_at_k,
    save_vectors,
    search,
    serialize,
)


def gaussian_corpus(n, dim, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim)).astype(np.float32)
    ids = [f"v-{i:06d}" for i in range(n)]
    return ids, x


def pairs(ids, x):
    return list(zip(ids, x))


class TestFitPca:
    def test_exact_subspace_reconstruction(self):
        rng = np.random.default_rng(0)
        basis = np.linalg.qr(rng.standard_normal((10, 10)))[0][:, :3]
        data = rng.standard_normal((50, 3)) @ basis.T + 5.0
        proj = fit_pca(data, 3)
        z = proj.project(data)
        recon = z @ proj.basis + proj.mean
        assert np.abs(recon - data.astype(np.float32)).max() <= 1e-4
        # orthonormal rows
        gram = proj.basis.astype(np.float64) @ proj.basis.astype(np.float64).T
        assert np.abs(gram - np.eye(3)).max() <= 1e-5

    def test_full_rank_preserves_distances(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((40, 8))
        proj = fit_pca(data, 8)
        z = proj.project(data)
        d_orig = np.linalg.norm(data[:, None, :] - data[None, :, :], axis=-1)
        d_proj = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1)
        assert np.abs(d_orig - d_proj).max() <= 1e-4

    def test_planted_subspace_beats_random_projection(self):
        rng = np.random.default_rng(2)
        d_sub, ambient, n = 16, 64, 400
        basis = np.linalg.qr(rng.standard_normal((ambient, ambient)))[0][:, :d_sub]
        data = (rng.standard_normal((n, d_sub)) * 3.0) @ basis.T
        data += 0.05 * rng.standard_normal((n, ambient))
        proj = fit_pca(data, d_sub)
        z = proj.project(data)
        explained_pca = float(z.var(axis=0).sum())
        rand_basis = np.linalg.qr(rng.standard_normal((ambient, ambient)))[0][:d_sub]
        zr = (data - data.mean(0)) @ rand_basis.T
        explained_rand = float(zr.var(axis=0).sum())
        assert explained_pca >= explained_rand

    def test_dim_too_large_rejected(self):
        with pytest.raises(IndexError_, match="exceeds input dimension"):
            fit_pca(np.zeros((10, 4)), 5)

    def test_too_few_vectors_rejected(self):
        with pytest.raises(IndexError_, match="at least"):
            fit_pca(np.zeros((3, 8)), 4)


class TestKmeans:
    def test_k_equals_n_zero_inertia(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 4)).astype(np.float32)
        cents = kmeans(x, 6, seed=0)
        d = np.linalg.norm(x[:, None, :] - cents[None, :, :], axis=-1).min(axis=1)
        assert d.max() <= 1e-6

    def test_two_blobs_recovered(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((200, 5)) * 0.2 + 4.0
        b = rng.standard_normal((200, 5)) * 0.2 - 4.0
        x = np.concatenate([a, b]).astype(np.float32)
        cents = kmeans(x, 2, seed=1)
        means = sorted([a.mean(0), b.mean(0)], key=lambda v: v[0])
        got = sorted(cents, key=lambda v: v[0])
        for m, g in zip(means, got):
            assert np.linalg.norm(m - g) < 0.1

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((300, 6)).astype(np.float32)
        history = []
        kmeans(x, 10, seed=2, max_iters=15, history=history)
        assert len(history) >= 1
        for prev, cur in zip(history, history[1:]):
            assert cur <= prev * (1 + 1e-6) + 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((100, 4)).astype(np.float32)
        assert (kmeans(x, 7, seed=3) == kmeans(x, 7, seed=3)).all()

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(IndexError_, match="exceeds"):
            kmeans(np.zeros((3, 2), dtype=np.float32), 4, seed=0)

    def test_duplicate_points_fill_empty_clusters(self):
        x = np.zeros((8, 3), dtype=np.float32)
        x[4:] = 1.0
        cents = kmeans(x, 4, seed=0)
        assert np.isfinite(cents).all()


class TestBuildIndex:
    def test_single_vector_exact_reconstruction(self):
        v = np.random.default_rng(0).standard_normal(16).astype(np.float32)
        with pytest.warns(RuntimeWarning):
            idx = build_index([("only", v)], IndexConfig(dim_reduced=16, nlist=1, m=1, seed=0))
        ids, recon = idx.reconstruct_all()
        assert ids == ["only"]
        z = idx.projection.project(v)
        assert np.abs(recon[0] - z).max() <= 1e-5

    def test_duplicate_ids_rejected(self):
        v = np.zeros(8, dtype=np.float32)
        with pytest.raises(IndexError_, match="duplicate"):
            build_index([("a", v), ("a", v)], IndexConfig())

    def test_empty_corpus_rejected(self):
        with pytest.raises(IndexError_, match="empty"):
            build_index([], IndexConfig())

    def test_deterministic_serialization(self, tmp_path):
        ids, x = gaussian_corpus(400, 64, seed=9)
        cfg = IndexConfig(dim_reduced=32, nlist=8, m=8, seed=5)
        p1, p2 = tmp_path / "a.cspq", tmp_path / "b.cspq"
        serialize(build_index(pairs(ids, x), cfg), p1)
        serialize(build_index(pairs(ids, x), cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_every_id_in_exactly_one_list(self):
        ids, x = gaussian_corpus(300, 32, seed=10)
        idx = build_index(pairs(ids, x), IndexConfig(dim_reduced=16, nlist=6, m=4, seed=1))
        seen = idx.image_ids()
        assert sorted(seen) == sorted(ids)
        assert idx.size == len(ids)

    def test_reconstruction_error_decreases_with_m(self):
        ids, x = gaussian_corpus(2000, 128, seed=11)
        errors = []
        for m in (8, 16, 32):
            idx = build_index(
                pairs(ids, x), IndexConfig(dim_reduced=128, nlist=16, m=m, seed=2)
            )
            rid, recon = idx.reconstruct_all()
            z = idx.projection.project(x)
            z_by_id = {i: z[k] for k, i in enumerate(ids)}
            err = np.mean(
                [np.linalg.norm(z_by_id[i] - r) for i, r in zip(rid, recon)]
            )
            errors.append(err)
        assert errors[0] > errors[1] > errors[2]

    def test_residual_coding_never_hurts_in_aggregate(self):
        ids, x = gaussian_corpus(1000, 64, seed=12)
        idx = build_index(pairs(ids, x), IndexConfig(dim_reduced=64, nlist=8, m=8, seed=3))
        z = idx.projection.project(x)
        z_by_id = {i: z[k] for k, i in enumerate(ids)}
        coarse_err = 0.0
        full_err = 0.0
        for cell, lst in enumerate(idx.lists):
            cent = idx.coarse_centroids[cell]
            recon = cent[None, :] + idx.codebooks.decode(lst.codes)
            for row, image_id in enumerate(lst.image_ids):
                zvec = z_by_id[image_id]
                coarse_err += float(np.linalg.norm(zvec - cent))
                full_err += float(np.linalg.norm(zvec - recon[row]))
        assert full_err <= coarse_err

    def test_reconstruction_is_coarse_plus_residual_bitexact(self):
        ids, x = gaussian_corpus(500, 32, seed=13)
        idx = build_index(pairs(ids, x), IndexConfig(dim_reduced=32, nlist=4, m=4, seed=4))
        for cell, lst in enumerate(idx.lists):
            decoded = idx.codebooks.decode(lst.codes)
            recon = idx.coarse_centroids[cell][None, :] + decoded
            again = idx.coarse_centroids[cell][None, :] + idx.codebooks.decode(lst.codes)
            assert (recon == again).all()


@pytest.fixture(scope="module")
def small_index():
    ids, x = gaussian_corpus(800, 48, seed=20)
    idx = build_index(pairs(ids, x), IndexConfig(dim_reduced=48, nlist=8, m=8, seed=6))
    return ids, x, idx


class TestSearch:

    def test_self_query_rank_one(self, small_index):
        ids, x, idx = small_index
        res = search(idx, x[17], k=5, nprobe=idx.nlist)
        assert res.entries[0][0] == ids[17]

    def test_k_larger_than_corpus_returns_all(self, small_index):
        ids, x, idx = small_index
        res = search(idx, x[0], k=10_000, nprobe=idx.nlist)
        assert len(res) == len(ids)
        dists = [d for _, d in res]
        assert dists == sorted(dists)

    def test_bad_arguments(self, small_index):
        _, x, idx = small_index
        with pytest.raises(IndexError_, match="k="):
            search(idx, x[0], k=0)
        with pytest.raises(IndexError_, match="nprobe"):
            search(idx, x[0], k=1, nprobe=0)
        with pytest.raises(IndexError_, match="nprobe"):
            search(idx, x[0], k=1, nprobe=idx.nlist + 1)

    def test_adc_distance_matches_reconstruction(self, small_index):
        """ADC estimate for a code equals the true distance between the query
        and the decoded vector (lookup-table consistency)."""
        ids, x, idx = small_index
        q = x[3]
        z = idx.projection.project(q)
        res = search(idx, q, k=20, nprobe=idx.nlist)
        rid, recon = idx.reconstruct_all()
        recon_by_id = {i: r for i, r in zip(rid, recon)}
        for image_id, dist in res.entries:
            true = float(np.linalg.norm(z.astype(np.float64) - recon_by_id[image_id]))
            assert dist == pytest.approx(true, abs=1e-5)

    def test_tie_break_ascending_id(self):
        v = np.random.default_rng(1).standard_normal(16).astype(np.float32)
        dup = [("b", v), ("a", v), ("c", v)]
        with pytest.warns(RuntimeWarning):
            idx = build_index(dup, IndexConfig(dim_reduced=8, nlist=1, m=1, seed=0))
        res = search(idx, v, k=3)
        assert res.ids() == ["a", "b", "c"]

    def test_self_query_recall_at_1(self):
        ids, x = gaussian_corpus(5000, 128, seed=21)
        idx = build_index(
            pairs(ids, x), IndexConfig(dim_reduced=128, nlist=64, m=16, seed=7)
        )
        rng = np.random.default_rng(22)
        sel = rng.choice(len(ids), 1000, replace=False)
        hits = 0
        for i in sel:
            res = search(idx, x[i], k=1, nprobe=idx.nlist)
            hits += res.entries[0][0] == ids[i]
        assert hits / len(sel) >= 0.95


class TestExactSearch:
    def test_self_query(self):
        ids, x = gaussian_corpus(50, 16, seed=30)
        res = exact_search(pairs(ids, x), x[7], k=3)
        assert res.entries[0][0] == ids[7]
        assert res.entries[0][1] <= 1e-6

    def test_fixed_order(self):
        a = np.zeros(4)
        corpus = [("near", a + 0.1), ("far", a + 0.2)]
        res = exact_search(corpus, a, k=2)
        assert res.ids() == ["near", "far"]

    def test_matches_naive_sort(self):
        rng = np.random.default_rng(31)
        ids, x = gaussian_corpus(200, 12, seed=31)
        q = rng.standard_normal(12)
        res = exact_search(pairs(ids, x), q, k=200)
        naive = sorted(
            ((float(np.linalg.norm(x[i].astype(np.float64) - q)), ids[i]) for i in range(200)),
            key=lambda t: (t[0], t[1]),
        )
        assert res.ids() == [i for _, i in naive]
        for (got_id, got_d), (exp_d, exp_id) in zip(res.entries, naive):
            assert got_id == exp_id
            assert got_d == pytest.approx(exp_d, abs=1e-5)

    def test_matrix_form(self):
        ids, x = gaussian_corpus(20, 8, seed=32)
        res_pairs = exact_search(pairs(ids, x), x[0], k=5)
        res_matrix = exact_search((ids, x), x[0], k=5)
        assert res_pairs.ids() == res_matrix.ids()


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ids, x = gaussian_corpus(300, 32, seed=40)
        cfg = IndexConfig(dim_reduced=16, nlist=4, m=4, seed=8)
        idx = build_index(pairs(ids, x), cfg)
        path = tmp_path / "index.cspq"
        serialize(idx, path)
        loaded = deserialize(path)
        assert loaded.config == idx.config
        assert (loaded.coarse_centroids == idx.coarse_centroids).all()
        assert (loaded.codebooks.centroids == idx.codebooks.centroids).all()
        for a, b in zip(loaded.lists, idx.lists):
            assert a.image_ids == b.image_ids
            assert (a.codes == b.codes).all()
        # searches agree exactly
        r1 = search(idx, x[5], k=7)
        r2 = search(loaded, x[5], k=7)
        assert r1.entries == r2.entries
        # and re-serialization is byte-identical
        path2 = tmp_path / "index2.cspq"
        serialize(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_corrupted_byte_fails_crc(self, tmp_path):
        ids, x = gaussian_corpus(100, 16, seed=41)
        idx = build_index(pairs(ids, x), IndexConfig(dim_reduced=8, nlist=2, m=2, seed=9))
        path = tmp_path / "index.cspq"
        serialize(idx, path)
        data = bytearray(path.read_bytes())
        data[len(data) // 2] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(BlobFormatError, match="CRC"):
            deserialize(path)

    def test_newer_version_rejected(self, tmp_path):
        path = tmp_path / "index.cspq"
        data = pack_blob_file("CSPQ0002", {"kind": "pq-index"}, {})
        path.write_bytes(data)
        with pytest.raises(BlobFormatError, match="unsupported version"):
            deserialize(path)

    def test_vectors_sidecar_round_trip(self, tmp_path):
        ids, x = gaussian_corpus(50, 8, seed=42)
        path = tmp_path / "emb.csve"
        save_vectors(ids, x, path)
        lids, lx = load_vectors(path)
        assert lids == ids
        assert (lx == x).all()


class TestDegenerateExactness:
    def test_one_vector_per_centroid_reproduces_exact_ordering(self):
        """With one vector per coarse cell and all lists probed, residuals are
        zero and ADC reduces to exact distances in the projected space."""
        rng = np.random.default_rng(60)
        ids, x = gaussian_corpus(16, 8, seed=60)
        with pytest.warns(RuntimeWarning):
            idx = build_index(
                pairs(ids, x), IndexConfig(dim_reduced=8, nlist=16, m=4, seed=0)
            )
        for q in rng.standard_normal((20, 8)).astype(np.float32):
            approx = search(idx, q, k=16, nprobe=16)
            exact = exact_search(pairs(ids, x), q, k=16)
            assert approx.ids() == exact.ids()
            for (_, da), (_, de) in zip(approx.entries, exact.entries):
                assert da == pytest.approx(de, abs=1e-4)


class TestRecall:
    def test_recall_against_exact(self):
        ids, x = gaussian_corpus(3000, 64, seed=50)
        idx = build_index(
            pairs(ids, x), IndexConfig(dim_reduced=64, nlist=16, m=16, seed=10)
        )
        rng = np.random.default_rng(51)
        sel = rng.choice(len(ids), 100, replace=False)
        queries = x[sel] + 0.25 * rng.standard_normal((100, 64)).astype(np.float32)
        approx = [search(idx, q, k=10, nprobe=idx.nlist) for q in queries]
        exact = [exact_search((ids, x), q, k=10) for q in queries]
        assert recall_at_k(approx, exact, 10) >= 0.8
