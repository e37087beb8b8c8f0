import struct

import numpy as np
import pytest

from paracosm import AblationConfig
from paracosm.errors import (
    CorruptStore,
    DimensionMismatch,
    DuplicateImageId,
    MissingTermEmbedding,
    VersionUnsupported,
)
from paracosm.fusion import fuse_gallery
from paracosm.store import (
    MANIFEST_FILE,
    MATRIX_FILE,
    FeatureStore,
    StoreManifest,
    assemble_store,
    fuse_term_matrices,
    read_matrix,
    read_store,
    refuse_gallery,
    write_matrix,
    write_store,
)

from conftest import make_vec

CFG = AblationConfig()
REAL_ONLY = AblationConfig(gallery_terms={"real_image"})


def small_terms(n=3, dim=4, seed=0):
    rng = np.random.default_rng(seed)

    def unit_rows():
        m = rng.standard_normal((n, dim))
        return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype("<f4")

    return {"real_image": unit_rows(), "synthetic_counterpart": unit_rows()}


class TestMatrixFormat:
    def test_payload_byte_arithmetic(self, tmp_path):
        path = tmp_path / "m.pcsm"
        write_matrix(path, np.zeros((3, 4), dtype=np.float32))
        data = path.read_bytes()
        assert len(data) == 16 + 3 * 4 * 4
        assert data[:4] == b"PCSM"

    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "m.pcsm"
        matrix = np.random.default_rng(1).standard_normal((5, 7)).astype("<f4")
        write_matrix(path, matrix)
        np.testing.assert_array_equal(read_matrix(path), matrix)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.pcsm"
        write_matrix(path, np.ones((2, 2), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(CorruptStore):
            read_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.pcsm"
        write_matrix(path, np.ones((1, 1), dtype=np.float32))
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptStore):
            read_matrix(path)

    def test_future_version_rejected(self, tmp_path):
        path = tmp_path / "m.pcsm"
        matrix = np.ones((1, 1), dtype=np.float32)
        header = struct.pack("<4sIII", b"PCSM", 2, 1, 1)
        path.write_bytes(header + matrix.tobytes())
        with pytest.raises(VersionUnsupported):
            read_matrix(path)


class TestStoreRoundTrip:
    def test_write_read_exact(self, tmp_path):
        terms = small_terms()
        store = write_store(
            tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock",
            template_digests={"t": "0" * 64},
        )
        loaded = read_store(tmp_path / "s")
        np.testing.assert_array_equal(loaded.matrix, store.matrix)
        for term in terms:
            np.testing.assert_array_equal(loaded.term_matrices[term], terms[term])
        assert loaded.ids == ["a", "b", "c"]
        assert loaded.manifest.config_digest == store.manifest.config_digest
        assert loaded.manifest.template_digests == {"t": "0" * 64}

    def test_empty_store_round_trips(self, tmp_path):
        terms = {"real_image": np.empty((0, 4), dtype="<f4")}
        write_store(tmp_path / "s", [], terms, REAL_ONLY, encoder_id="mock")
        loaded = read_store(tmp_path / "s")
        assert loaded.n == 0 and loaded.dim == 4

    def test_duplicate_image_id(self, tmp_path):
        with pytest.raises(DuplicateImageId):
            write_store(tmp_path / "s", ["a", "a"], small_terms(n=2), CFG, encoder_id="mock")

    def test_term_height_mismatch(self, tmp_path):
        terms = small_terms(n=3)
        with pytest.raises(DimensionMismatch):
            write_store(tmp_path / "s", ["a", "b"], terms, CFG, encoder_id="mock")

    def test_byte_determinism_across_builds(self, tmp_path):
        terms = small_terms()
        write_store(tmp_path / "one", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        write_store(tmp_path / "two", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        for name in (MATRIX_FILE, MANIFEST_FILE, "terms/real_image.pcsm"):
            assert (tmp_path / "one" / name).read_bytes() == (
                tmp_path / "two" / name
            ).read_bytes()

    def test_manifest_alone_missing(self, tmp_path):
        with pytest.raises(CorruptStore):
            read_store(tmp_path / "nowhere")

    def test_manifest_version_gate(self):
        manifest = StoreManifest(
            encoder_id="m", dim=2, n=0, rows=(), config=CFG.canonical(), config_digest="x"
        )
        bumped = manifest.to_json().replace('"store_version":1', '"store_version":2')
        with pytest.raises(VersionUnsupported):
            StoreManifest.from_json(bumped)


class TestFusedMatrixSemantics:
    def test_matches_scalar_fusion(self):
        terms = small_terms(n=4, dim=6, seed=3)
        fused = fuse_term_matrices(terms, CFG)
        for i in range(4):
            expected = fuse_gallery(
                make_vec(terms["real_image"][i].astype(np.float64)),
                make_vec(terms["synthetic_counterpart"][i].astype(np.float64)),
                beta=0.5,
                config=CFG,
                image_id=f"g{i}",
            )
            np.testing.assert_allclose(fused[i], expected.phi.values, rtol=1e-6)

    def test_single_term_rows_equal_term_rows(self):
        terms = small_terms()
        fused = fuse_term_matrices(terms, REAL_ONLY)
        np.testing.assert_array_equal(fused, terms["real_image"])

    def test_text_terms_unit_weight(self):
        cfg = AblationConfig(gallery_terms={"real_image", "detailed_text"})
        terms = {
            "real_image": np.full((2, 3), 0.5, dtype="<f4"),
            "detailed_text": np.full((2, 3), 0.25, dtype="<f4"),
        }
        np.testing.assert_allclose(fuse_term_matrices(terms, cfg), np.full((2, 3), 0.75))

    def test_missing_term(self):
        with pytest.raises(MissingTermEmbedding):
            fuse_term_matrices({"real_image": np.ones((1, 2), dtype="<f4")}, CFG)


class TestRefuseGallery:
    def test_beta_change_refuses_from_terms(self, tmp_path):
        terms = small_terms()
        store = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        refused = refuse_gallery(store, CFG, beta=0.7)
        expected = (
            0.7 * terms["real_image"].astype(np.float64)
            + 0.3 * terms["synthetic_counterpart"].astype(np.float64)
        ).astype("<f4")
        np.testing.assert_array_equal(refused.matrix, expected)
        assert refused.manifest.config["beta"] == 0.7
        assert refused.manifest.config_digest != store.manifest.config_digest

    def test_disabling_syn_equals_real_rows(self, tmp_path):
        terms = small_terms()
        store = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        refused = refuse_gallery(store, REAL_ONLY)
        np.testing.assert_array_equal(refused.matrix, terms["real_image"])

    def test_enabling_uncached_term_fails(self, tmp_path):
        terms = small_terms()
        store = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        wants_text = AblationConfig(gallery_terms={"real_image", "detailed_text"})
        with pytest.raises(MissingTermEmbedding):
            refuse_gallery(store, wants_text)

    def test_refuse_at_original_config_is_identical(self, tmp_path):
        terms = small_terms()
        store = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        refused = refuse_gallery(store, CFG)
        np.testing.assert_array_equal(refused.matrix, store.matrix)
        assert refused.manifest.to_json() == store.manifest.to_json()

    def test_refused_store_persists(self, tmp_path):
        terms = small_terms()
        store = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        out = refuse_gallery(store, REAL_ONLY, out_dir=tmp_path / "s2")
        loaded = read_store(tmp_path / "s2")
        np.testing.assert_array_equal(loaded.matrix, out.matrix)

    def test_config_digest_tracks_fusion_settings_only(self, tmp_path):
        terms = small_terms()
        store = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
        same = refuse_gallery(store, CFG, beta=CFG.beta)
        assert same.manifest.config_digest == store.manifest.config_digest


def test_assemble_without_persist_matches_written(tmp_path):
    terms = small_terms()
    in_memory = assemble_store(["a", "b", "c"], terms, CFG, encoder_id="mock")
    written = write_store(tmp_path / "s", ["a", "b", "c"], terms, CFG, encoder_id="mock")
    np.testing.assert_array_equal(in_memory.matrix, written.matrix)
    assert in_memory.manifest.to_json() == written.manifest.to_json()


def test_feature_store_shape_validation():
    manifest = StoreManifest(
        encoder_id="m", dim=3, n=2, rows=(), config=CFG.canonical(), config_digest="x"
    )
    with pytest.raises(CorruptStore):
        FeatureStore(manifest, np.zeros((2, 4), dtype="<f4"))
